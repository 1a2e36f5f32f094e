import numpy as np
import pytest

from survbench.data import SurvivalDataset
from survbench.relieff import FeatureWeights, relieff_weights, top_m


def make_ds(X, labels):
    X = np.asarray(X, dtype=float)
    return SurvivalDataset(X, tuple(f"x{i}" for i in range(X.shape[1])),
                           np.ones(X.shape[0]), np.asarray(labels, dtype=int))


def relieff_brute(X, y, k):
    """Textbook update rule, written as literal loops."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    span = X.max(axis=0) - X.min(axis=0)
    Z = np.zeros_like(X)
    for j in range(p):
        if span[j] > 0:
            Z[:, j] = (X[:, j] - X[:, j].min()) / span[j]
    W = np.zeros(p)
    for i in range(n):
        d = np.sqrt(((Z - Z[i]) ** 2).sum(axis=1))
        same = [j for j in range(n) if j != i and y[j] == y[i]]
        other = [j for j in range(n) if y[j] != y[i]]
        hits = sorted(same, key=lambda j: (d[j], j))[:k]
        misses = sorted(other, key=lambda j: (d[j], j))[:k]
        for a in range(p):
            for hj in hits:
                W[a] -= abs(Z[i, a] - Z[hj, a]) / (n * k)
            for mj in misses:
                W[a] += abs(Z[i, a] - Z[mj, a]) / (n * k)
    return W


class TestRelieffWeights:
    def test_constant_feature_scores_exactly_zero(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(30, 3))
        X[:, 1] = 4.25
        y = np.r_[np.zeros(15, int), np.ones(15, int)]
        fw = relieff_weights(make_ds(X, y), y, 3, seed=1)
        assert fw.weights[1] == 0.0

    def test_matches_bruteforce_update_rule(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(14, 4))
        y = np.array([0, 1] * 7)
        w_brute = relieff_brute(X, y, k=3)
        fw = relieff_weights(make_ds(X, y), y, 3, seed=9)
        np.testing.assert_allclose(fw.weights, w_brute, atol=1e-12)

    def test_separating_feature_attains_max_weight(self):
        # hand-sized instance: feature 0 equals the class label, rest noise
        rng = np.random.default_rng(3)
        X = rng.normal(size=(6, 3))
        y = np.array([0, 0, 0, 1, 1, 1])
        X[:, 0] = y.astype(float)
        fw = relieff_weights(make_ds(X, y), y, 2, seed=4)
        assert int(np.argmax(fw.weights)) == 0
        w_brute = relieff_brute(X, y, k=2)
        np.testing.assert_allclose(fw.weights, w_brute, atol=1e-12)

    def test_random_labels_score_near_zero(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(200, 5))
            y = rng.permutation(np.r_[np.zeros(100, int), np.ones(100, int)])
            fw = relieff_weights(make_ds(X, y), y, 5, seed=seed)
            assert np.max(np.abs(fw.weights)) < 0.1

    def test_weights_bounded_by_one(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(50, 4))
        y = np.r_[np.zeros(25, int), np.ones(25, int)]
        fw = relieff_weights(make_ds(X, y), y, 5, seed=0)
        assert np.all(np.abs(fw.weights) <= 1.0)
        assert fw.m_samples == 50 and fw.k_neighbors == 5

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(40, 5))
        y = np.r_[np.zeros(20, int), np.ones(20, int)]
        w = relieff_weights(make_ds(X, y), y, 4, seed=7).weights
        perm = rng.permutation(5)
        w_perm = relieff_weights(make_ds(X[:, perm], y), y, 4, seed=7).weights
        np.testing.assert_allclose(w_perm, w[perm], atol=1e-12)

    def test_scaling_invariance(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(40, 4))
        y = np.r_[np.zeros(20, int), np.ones(20, int)]
        w_a = relieff_weights(make_ds(X, y), y, 4, seed=9).weights
        X2 = X.copy()
        X2[:, 2] *= 123.0
        w_b = relieff_weights(make_ds(X2, y), y, 4, seed=9).weights
        np.testing.assert_allclose(w_a, w_b, atol=1e-12)

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(30, 3))
        y = np.r_[np.zeros(15, int), np.ones(15, int)]
        a = relieff_weights(make_ds(X, y), y, 3, seed=11).weights
        b = relieff_weights(make_ds(X, y), y, 3, seed=11).weights
        np.testing.assert_array_equal(a, b)

    def test_single_class_rejected(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(10, 2))
        y = np.ones(10, int)
        with pytest.raises(ValueError, match="both classes"):
            relieff_weights(make_ds(X, y), y, 2, seed=0)

    def test_k_too_large_rejected(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(10, 2))
        y = np.r_[np.zeros(3, int), np.ones(7, int)]
        with pytest.raises(ValueError, match="k_neighbors"):
            relieff_weights(make_ds(X, y), y, 3, seed=0)


class TestTopM:
    def test_descending_selection(self):
        fw = FeatureWeights(np.array([0.5, 0.1, 0.9]), 3, 1)
        assert top_m(fw, 2) == [2, 0]

    def test_tie_breaks_to_lower_index(self):
        fw = FeatureWeights(np.array([0.3, 0.3]), 2, 1)
        assert top_m(fw, 1) == [0]

    def test_full_permutation(self):
        fw = FeatureWeights(np.array([0.2, 0.8, -0.1, 0.5]), 4, 1)
        assert top_m(fw, 4) == [1, 3, 0, 2]

    def test_m_too_large(self):
        fw = FeatureWeights(np.array([0.1]), 1, 1)
        with pytest.raises(ValueError, match="exceeds"):
            top_m(fw, 2)

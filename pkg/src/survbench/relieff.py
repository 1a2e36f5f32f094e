"""ReliefF feature scoring and top-m selection."""

import logging
from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureWeights:
    weights: np.ndarray
    m_samples: int
    k_neighbors: int


def relieff_weights(ds: SurvivalDataset, class_labels, k_neighbors: int,
                    seed: int) -> FeatureWeights:
    """Score features by the ReliefF hit/miss update rule.

    Every instance serves as a target exactly once (seeded order, without
    replacement). For each target the k nearest same-class rows (hits) and k
    nearest opposite-class rows (misses) are found by Euclidean distance on
    range-normalized features; each feature's weight decreases by the mean
    hit difference and increases by the mean miss difference, both divided
    by the number of targets. Zero-range features contribute no difference
    and score exactly 0.
    """
    y = np.asarray(class_labels, dtype=int)
    if y.shape != (ds.n_rows,):
        raise ValueError("class_labels must have one entry per row")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("class labels must be 0/1")
    counts = np.bincount(y, minlength=2)
    if counts.min() == 0:
        raise ValueError("both classes must be present")
    if counts.min() <= k_neighbors:
        raise ValueError(
            f"k_neighbors={k_neighbors} too large for smaller class size {counts.min()}")

    X = ds.features
    n, p = X.shape
    span = X.max(axis=0) - X.min(axis=0)
    safe = np.where(span > 0, span, 1.0)
    Z = (X - X.min(axis=0)) / safe
    Z[:, span == 0] = 0.0

    # full pairwise distances on the normalized scale
    sq = (Z ** 2).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T), 0.0)
    np.fill_diagonal(d2, np.inf)

    order = np.random.default_rng(seed).permutation(n)
    m = n
    W = np.zeros(p)
    for i in order:
        same = np.where((y == y[i]) & (np.arange(n) != i))[0]
        other = np.where(y != y[i])[0]
        hits = same[np.argsort(d2[i, same], kind="stable")[:k_neighbors]]
        misses = other[np.argsort(d2[i, other], kind="stable")[:k_neighbors]]
        W -= np.abs(Z[hits] - Z[i]).sum(axis=0) / (m * k_neighbors)
        W += np.abs(Z[misses] - Z[i]).sum(axis=0) / (m * k_neighbors)
    return FeatureWeights(weights=W, m_samples=m, k_neighbors=k_neighbors)


def top_m(w: FeatureWeights, m: int = 200) -> list:
    """Indices of the m largest weights, descending; ties break low-index-first."""
    p = w.weights.shape[0]
    if m > p:
        raise ValueError(f"m={m} exceeds feature count {p}")
    order = np.lexsort((np.arange(p), -w.weights))
    return [int(i) for i in order[:m]]

"""Survival gradient boosting: regression trees on Cox-loss gradients.

Second-order (Newton) boosting against the Breslow negative log partial
likelihood. Split search is exact greedy over sorted unique feature values;
no histogram approximation.
"""

import json
import logging
import warnings
from dataclasses import dataclass, asdict, replace

import numpy as np

from .data import SurvivalDataset

log = logging.getLogger(__name__)

# Tuning box: (lower, upper) per hyperparameter.
BOOST_BOX = {
    "eta": (1e-6, 0.1),
    "max_depth": (1, 5),
    "subsample": (0.5, 0.9),
    "colsample_bytree": (0.1, 0.9),
    "gamma": (1e-4, 0.1),
    "min_child_weight": (1e-8, 1e-4),
    "reg_alpha": (0.0, 1.0),
    "reg_lambda": (0.0, 20.0),
}


@dataclass(frozen=True)
class BoostHyperparams:
    eta: float = 0.05
    max_depth: int = 3
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    gamma: float = 1e-3
    min_child_weight: float = 1e-6
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    n_rounds: int = 200

    def validate(self, clamp: bool = False) -> "BoostHyperparams":
        """Warn on out-of-box values; return a clamped copy when asked."""
        updates = {}
        for name, (lo, hi) in BOOST_BOX.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                warnings.warn(f"hyperparameter {name}={v} outside box [{lo}, {hi}]")
                if clamp:
                    updates[name] = type(v)(min(max(v, lo), hi))
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        return replace(self, **updates) if updates else self


@dataclass(frozen=True, eq=False)
class TreeNode:
    """Binary split node; a leaf when split_feature is None."""

    split_feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_weight: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.split_feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.leaf_weight}
        return {
            "feature": self.split_feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TreeNode":
        if "leaf" in d:
            return TreeNode(leaf_weight=float(d["leaf"]))
        return TreeNode(
            split_feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=TreeNode.from_dict(d["left"]),
            right=TreeNode.from_dict(d["right"]),
        )


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    trees: tuple
    base_score: float
    hyperparams: BoostHyperparams
    n_features: int
    seed: int = 0
    train_nll: tuple = ()  # Breslow negative log partial likelihood per round

    def to_json(self) -> str:
        return json.dumps(
            {
                "base_score": self.base_score,
                "hyperparams": asdict(self.hyperparams),
                "n_features": self.n_features,
                "seed": self.seed,
                "trees": [t.to_dict() for t in self.trees],
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(doc: str) -> "TreeEnsemble":
        d = json.loads(doc)
        return TreeEnsemble(
            trees=tuple(TreeNode.from_dict(t) for t in d["trees"]),
            base_score=float(d["base_score"]),
            hyperparams=BoostHyperparams(**d["hyperparams"]),
            n_features=int(d["n_features"]),
            seed=int(d["seed"]),
        )


def breslow_negative_log_likelihood(scores, time, event) -> float:
    """Breslow negative log partial likelihood of per-row risk scores."""
    scores = np.asarray(scores, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    c = float(scores.max())
    w = np.exp(scores - c)
    order = np.argsort(time, kind="stable")
    ts = time[order]
    # suffix sums over the risk set {j : time_j >= t}
    suffix = np.cumsum(w[order][::-1])[::-1]
    ev = event == 1
    starts = np.searchsorted(ts, time[ev], side="left")
    return float((np.log(suffix[starts]) + c).sum() - scores[ev].sum())


def cox_grad_hess(scores, ds: SurvivalDataset):
    """Per-row first and second derivatives of the Breslow negative log
    partial likelihood with respect to each row's score.

    Returns (gradient, hessian); hessians are clamped below at 1e-12.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (ds.n_rows,):
        raise ValueError(f"scores have shape {scores.shape}, expected ({ds.n_rows},)")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if ds.n_events == 0:
        raise ValueError("no events")

    time, event = ds.time, ds.event
    c = float(scores.max())
    w = np.exp(scores - c)

    order = np.argsort(time, kind="stable")
    ts = time[order]
    suffix = np.cumsum(w[order][::-1])[::-1]

    ev_rows = np.where(event == 1)[0]
    ev_times = time[ev_rows]
    ev_sorted = np.sort(ev_times, kind="stable")
    # risk-set sum for an event at time t starts at the first index with ts >= t
    starts = np.searchsorted(ts, ev_sorted, side="left")
    inv_s = 1.0 / suffix[starts]
    cum_a = np.concatenate(([0.0], np.cumsum(inv_s)))
    cum_b = np.concatenate(([0.0], np.cumsum(inv_s ** 2)))

    # row r participates in the risk set of every event with t_event <= t_r
    counts = np.searchsorted(ev_sorted, time, side="right")
    A = cum_a[counts]
    B = cum_b[counts]
    grad = w * A - event
    hess = np.maximum(w * A - (w ** 2) * B, 1e-12)
    return grad, hess


def _soft_threshold(x, alpha: float):
    return np.sign(x) * np.maximum(np.abs(x) - alpha, 0.0)


def _leaf_weight(G, H, hp: BoostHyperparams) -> float:
    return float(-_soft_threshold(G, hp.reg_alpha) / (H + hp.reg_lambda))


def _best_split(Xn, gn, hn, hp: BoostHyperparams):
    """Scan every (feature, threshold) pair of a node; return the best split.

    ``Xn`` holds the node's rows restricted to the candidate features. Gain
    is half the second-order objective improvement minus gamma; a split is
    valid only when both children carry at least min_child_weight of hessian
    mass. Ties resolve to the lowest feature index, then lowest threshold.
    Returns (gain, feature_position, threshold) or None.
    """
    m = Xn.shape[0]
    order = np.argsort(Xn, axis=0, kind="stable")
    v = np.take_along_axis(Xn, order, axis=0)
    gs = np.cumsum(gn[order], axis=0)
    hs = np.cumsum(hn[order], axis=0)
    G = float(gn.sum())
    H = float(hn.sum())
    parent = _soft_threshold(G, hp.reg_alpha) ** 2 / (H + hp.reg_lambda)

    # cut after sorted position i puts the first i+1 rows left; requires a value change
    gl, hl = gs[:-1], hs[:-1]
    gr, hr = G - gl, H - hl
    gains = 0.5 * (_soft_threshold(gl, hp.reg_alpha) ** 2 / (hl + hp.reg_lambda)
                   + _soft_threshold(gr, hp.reg_alpha) ** 2 / (hr + hp.reg_lambda)
                   - parent) - hp.gamma
    invalid = ((v[:-1] >= v[1:])
               | (hl < hp.min_child_weight) | (hr < hp.min_child_weight))
    gains[invalid] = -np.inf

    flat = gains.T.reshape(-1)  # feature-major so ties prefer the lower feature
    k = int(np.argmax(flat))
    if not (flat[k] > 0):
        return None
    f_pos, cut = divmod(k, m - 1)
    thr = 0.5 * float(v[cut, f_pos] + v[cut + 1, f_pos])
    return float(flat[k]), f_pos, thr


def _grow_tree(X, g, h, rows, features, depth, hp: BoostHyperparams) -> TreeNode:
    gn = g[rows]
    hn = h[rows]
    G = float(gn.sum())
    H = float(hn.sum())
    if depth >= hp.max_depth or rows.size < 2:
        return TreeNode(leaf_weight=_leaf_weight(G, H, hp))

    found = _best_split(X[np.ix_(rows, features)], gn, hn, hp)
    if found is None:
        return TreeNode(leaf_weight=_leaf_weight(G, H, hp))

    _, f_pos, thr = found
    f = int(features[f_pos])
    mask = X[rows, f] < thr
    return TreeNode(
        split_feature=f,
        threshold=thr,
        left=_grow_tree(X, g, h, rows[mask], features, depth + 1, hp),
        right=_grow_tree(X, g, h, rows[~mask], features, depth + 1, hp),
    )


def _tree_outputs(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Raw leaf weights reached by each row of X."""
    out = np.empty(X.shape[0])
    stack = [(node, np.arange(X.shape[0]))]
    while stack:
        nd, rows = stack.pop()
        if nd.is_leaf:
            out[rows] = nd.leaf_weight
            continue
        mask = X[rows, nd.split_feature] < nd.threshold
        stack.append((nd.left, rows[mask]))
        stack.append((nd.right, rows[~mask]))
    return out


def fit_sxgb(ds: SurvivalDataset, hp: BoostHyperparams, seed: int,
             clamp: bool = False) -> TreeEnsemble:
    """Grow ``hp.n_rounds`` trees on Cox-loss gradients.

    Per tree: rows subsampled without replacement, features subsampled, exact
    greedy splits with second-order gain, leaf weights -G/(H+lambda) after L1
    soft-thresholding. Scores advance by eta times the tree output.
    Deterministic given the seed.
    """
    if ds.n_rows == 0:
        raise ValueError("empty dataset")
    if ds.n_events == 0:
        raise ValueError("no events")
    hp = hp.validate(clamp=clamp)

    rng = np.random.default_rng(seed)
    X = ds.features
    n, p = X.shape
    scores = np.zeros(n)
    trees = []
    nll_history = []
    n_sub = max(1, int(round(hp.subsample * n)))
    n_col = max(1, int(round(hp.colsample_bytree * p)))

    for _ in range(hp.n_rounds):
        g, h = cox_grad_hess(scores, ds)
        rows = np.sort(rng.choice(n, size=n_sub, replace=False))
        feats = np.sort(rng.choice(p, size=n_col, replace=False))
        tree = _grow_tree(X, g, h, rows, feats, 0, hp)
        trees.append(tree)
        scores = scores + hp.eta * _tree_outputs(tree, X)
        nll_history.append(breslow_negative_log_likelihood(scores, ds.time, ds.event))

    return TreeEnsemble(trees=tuple(trees), base_score=0.0, hyperparams=hp,
                        n_features=p, seed=seed, train_nll=tuple(nll_history))


def predict_risk(ens: TreeEnsemble, x):
    """Ensemble risk score: base_score plus eta-scaled leaf outputs.

    Accepts a single feature vector or an (n, p) matrix.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2:
        raise ValueError("x must be 1-D or 2-D")
    if X.shape[1] != ens.n_features:
        raise ValueError(f"expected {ens.n_features} features, got {X.shape[1]}")
    out = np.full(X.shape[0], ens.base_score)
    for tree in ens.trees:
        out = out + ens.hyperparams.eta * _tree_outputs(tree, X)
    return float(out[0]) if single else out

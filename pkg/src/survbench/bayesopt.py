"""Bayesian hyperparameter optimization.

Gaussian-process surrogate (Matern-5/2) over the unit cube with an
expected-improvement acquisition maximized over seeded candidate sets; no
gradient-based inner optimizer, so every run is deterministic given its seed.
"""

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, qmc

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
LOG_CONTINUOUS = "log-continuous"
INTEGER = "integer"

NOISE = 1e-6
N_INITIAL = 5  # quasi-random warmup points before the surrogate takes over
N_CANDIDATES = 1024
LENGTH_GRID = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
SIGNAL_FACTORS = (0.25, 1.0, 4.0)


@dataclass(frozen=True)
class ParamDim:
    name: str
    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, LOG_CONTINUOUS, INTEGER):
            raise ValueError(f"unknown dimension kind {self.kind!r}")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.kind == LOG_CONTINUOUS and self.lower <= 0:
            raise ValueError(f"{self.name}: log-continuous requires lower > 0")

    def decode(self, u: float):
        u = min(max(float(u), 0.0), 1.0)
        if self.kind == CONTINUOUS:
            return self.lower + u * (self.upper - self.lower)
        if self.kind == LOG_CONTINUOUS:
            return float(np.exp(np.log(self.lower)
                                + u * (np.log(self.upper) - np.log(self.lower))))
        v = int(round(self.lower + u * (self.upper - self.lower)))
        return int(min(max(v, self.lower), self.upper))


@dataclass(frozen=True)
class ParamSpace:
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    def decode(self, u) -> dict:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.n_dims,):
            raise ValueError(f"point has shape {u.shape}, expected ({self.n_dims},)")
        return {d.name: d.decode(u[i]) for i, d in enumerate(self.dims)}


@dataclass(frozen=True)
class Trial:
    point: np.ndarray  # unit-cube coordinates
    value: float


@dataclass
class TrialHistory:
    trials: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trials)

    def add(self, point, value: float):
        point = np.asarray(point, dtype=float)
        if np.any(point < 0) or np.any(point > 1):
            raise ValueError("trial point outside the unit cube")
        if not np.isfinite(value):
            raise ValueError("objective value must be finite")
        self.trials.append(Trial(point, float(value)))

    @property
    def incumbent(self) -> Trial:
        if not self.trials:
            raise ValueError("empty history has no incumbent")
        best = self.trials[0]
        for t in self.trials[1:]:
            if t.value > best.value:
                best = t
        return best

    def to_json(self) -> str:
        return json.dumps(
            {"trials": [{"point": [float(x) for x in t.point], "value": t.value}
                        for t in self.trials]},
            sort_keys=True)

    @staticmethod
    def from_json(doc: str) -> "TrialHistory":
        d = json.loads(doc)
        h = TrialHistory()
        for t in d["trials"]:
            h.add(np.asarray(t["point"], dtype=float), float(t["value"]))
        return h


def _matern52(d2, length):
    r = np.sqrt(np.maximum(d2, 0.0)) / length
    s5r = np.sqrt(5.0) * r
    return (1.0 + s5r + (5.0 / 3.0) * r ** 2) * np.exp(-s5r)


def _cho_solve_with_jitter(K, b):
    jitter = 0.0
    for _ in range(8):
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(K.shape[0]))
            x = np.linalg.solve(L.T, np.linalg.solve(L, b))
            return x, L
        except np.linalg.LinAlgError:
            jitter = 1e-8 if jitter == 0.0 else jitter * 100.0
    raise np.linalg.LinAlgError("kernel matrix not positive definite")


class _GPFit:
    """Fitted surrogate: kernel hyperparameters chosen by marginal likelihood
    over a small grid, ready for batched posterior queries."""

    def __init__(self, X, y):
        self.X = X
        self.y_mean = float(y.mean())
        r = y - self.y_mean
        d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1)
        var = float(r.var())
        base = var if var > 0 else 1e-4

        best = None
        for length in LENGTH_GRID:
            R = _matern52(d2, length)
            for factor in SIGNAL_FACTORS:
                s2 = base * factor
                K = s2 * R + NOISE * np.eye(len(X))
                try:
                    alpha, L = _cho_solve_with_jitter(K, r)
                except np.linalg.LinAlgError:
                    continue
                logdet = 2.0 * float(np.log(np.diag(L)).sum())
                mll = -0.5 * float(r @ alpha) - 0.5 * logdet
                if best is None or mll > best[0]:
                    best = (mll, length, s2, alpha, L)
        if best is None:
            raise np.linalg.LinAlgError("GP fit failed for every grid point")
        _, self.length, self.s2, self.alpha, self.L = best

    def posterior(self, Q):
        """Mean and variance at query points Q (m, d); variance is the latent
        posterior variance, clamped non-negative."""
        d2 = ((Q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=-1)
        k_star = self.s2 * _matern52(d2, self.length)
        mean = self.y_mean + k_star @ self.alpha
        v = np.linalg.solve(self.L, k_star.T)
        var = np.maximum(self.s2 - (v ** 2).sum(axis=0), 0.0)
        return mean, var


def gp_posterior(history: TrialHistory, query):
    """GP posterior (mean, variance) at one unit-cube query point."""
    if len(history) == 0:
        raise ValueError("history must contain at least one trial")
    X = np.vstack([t.point for t in history.trials])
    y = np.array([t.value for t in history.trials])
    q = np.asarray(query, dtype=float)[None, :]
    mean, var = _GPFit(X, y).posterior(q)
    return float(mean[0]), float(var[0])


def expected_improvement(mean, variance, best_so_far):
    """EI for maximization: (mu - f*) Phi(z) + sigma phi(z), z = (mu - f*)/sigma.

    With zero variance the improvement is max(mu - f*, 0). Vectorized.
    """
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    sigma = np.sqrt(variance)
    improve = mean - best_so_far
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, improve / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0,
                      improve * norm.cdf(z) + sigma * norm.pdf(z),
                      np.maximum(improve, 0.0))
    if ei.ndim == 0:
        return float(ei)
    return ei


def suggest(history: TrialHistory, space: ParamSpace, rng_seed: int) -> np.ndarray:
    """Propose the next unit-cube point.

    The first five suggestions are scrambled-Sobol points; afterwards the
    point maximizing expected improvement over 1024 seeded uniform candidates
    plus local Gaussian refinements around the incumbent.
    """
    d = space.n_dims
    t = len(history)
    if t < N_INITIAL:
        sob = qmc.Sobol(d, scramble=True, seed=rng_seed)
        return sob.random_base2(3)[t].astype(float)  # 8 points, first 5 used

    X = np.vstack([tr.point for tr in history.trials])
    y = np.array([tr.value for tr in history.trials])
    gp = _GPFit(X, y)
    best = history.incumbent

    rng = np.random.default_rng(np.random.SeedSequence((rng_seed, t)))
    cands = [rng.uniform(size=(N_CANDIDATES, d))]
    for scale in (0.1, 0.02):
        cands.append(np.clip(
            best.point[None, :] + scale * rng.standard_normal((64, d)), 0.0, 1.0))
    Q = np.vstack(cands)
    mean, var = gp.posterior(Q)
    ei = expected_improvement(mean, var, best.value)
    return Q[int(np.argmax(ei))]


def optimize(objective, space: ParamSpace, n_rounds: int, seed: int):
    """suggest -> evaluate -> record for ``n_rounds``; returns
    (best decoded params, TrialHistory).

    A non-finite objective value is recorded at the floor 0.0 with a warning.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    history = TrialHistory()
    for _ in range(n_rounds):
        u = suggest(history, space, seed)
        value = objective(space.decode(u))
        if not np.isfinite(value):
            warnings.warn(f"objective returned non-finite value {value}; "
                          "recorded at floor 0.0")
            value = 0.0
        history.add(u, float(value))
    return space.decode(history.incumbent.point), history

"""Cox proportional hazards: Breslow partial likelihood, Newton-Raphson fit.

The baseline hazard is never estimated; only the linear risk score is needed
for rank-based evaluation.
"""

import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset

log = logging.getLogger(__name__)


class SeparationError(RuntimeError):
    """Monotone-likelihood divergence: a coefficient ran away during fitting."""


@dataclass(frozen=True, eq=False)
class CoxModel:
    beta: np.ndarray
    feature_names: tuple
    converged: bool
    n_iterations: int
    final_gradient_norm: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "feature_names": list(self.feature_names),
                "beta": [float(b) for b in self.beta],
                "converged": self.converged,
                "n_iterations": self.n_iterations,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(doc: str) -> "CoxModel":
        d = json.loads(doc)
        return CoxModel(
            beta=np.asarray(d["beta"], dtype=float),
            feature_names=tuple(d["feature_names"]),
            converged=bool(d["converged"]),
            n_iterations=int(d["n_iterations"]),
            final_gradient_norm=float("nan"),
        )


def _check_inputs(beta, ds: SurvivalDataset):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (ds.n_features,):
        raise ValueError(f"beta has shape {beta.shape}, expected ({ds.n_features},)")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    if ds.n_events == 0:
        raise ValueError("no events in dataset")
    return beta


def _ll_grad_hess(eta: np.ndarray, X: np.ndarray, time: np.ndarray,
                  event: np.ndarray, order: int = 2):
    """Breslow partial log-likelihood of a linear predictor, with derivatives.

    Sweeps event-time groups in descending time order, maintaining running
    risk-set sums S, S*x and S*x*x'. Exponentials are shifted by max(eta)
    for stability; the shift cancels in every ratio and is restored in the
    log terms.
    """
    n, p = X.shape
    c = float(np.max(eta))
    w = np.exp(eta - c)

    idx = np.argsort(-time, kind="stable")
    ll = 0.0
    grad = np.zeros(p) if order >= 1 else None
    hess = np.zeros((p, p)) if order >= 2 else None
    S = 0.0
    Sx = np.zeros(p)
    Sxx = np.zeros((p, p)) if order >= 2 else None

    i = 0
    while i < n:
        t = time[idx[i]]
        j = i
        while j < n and time[idx[j]] == t:
            j += 1
        group = idx[i:j]
        wg = w[group]
        Xg = X[group]
        S += float(wg.sum())
        if order >= 1:
            Sx += wg @ Xg
        if order >= 2:
            Sxx += Xg.T @ (wg[:, None] * Xg)
        ev = group[event[group] == 1]
        if ev.size:
            log_s = np.log(S) + c
            ll += float(eta[ev].sum()) - ev.size * log_s
            if order >= 1:
                xbar = Sx / S
                grad += X[ev].sum(axis=0) - ev.size * xbar
            if order >= 2:
                hess -= ev.size * (Sxx / S - np.outer(xbar, xbar))
        i = j
    return ll, grad, hess


def partial_log_likelihood(beta, ds: SurvivalDataset) -> float:
    """Breslow partial log-likelihood at ``beta``.

    Sum over event rows i of x_i.beta - log(sum of exp(x_j.beta) over the
    risk set {j : time_j >= time_i}).
    """
    beta = _check_inputs(beta, ds)
    eta = ds.features @ beta
    return _ll_grad_hess(eta, ds.features, ds.time, ds.event, order=0)[0]


def partial_ll_derivatives(beta, ds: SurvivalDataset):
    """Return (log-likelihood, gradient, Hessian) of the Breslow partial
    log-likelihood at ``beta``."""
    beta = _check_inputs(beta, ds)
    eta = ds.features @ beta
    return _ll_grad_hess(eta, ds.features, ds.time, ds.event, order=2)


def fit_cox(ds: SurvivalDataset, max_iter: int = 100, tol: float = 1e-8) -> CoxModel:
    """Fit Cox PH coefficients by Newton-Raphson with step-halving.

    Features are standardized internally to improve conditioning and the
    coefficients mapped back; convergence when the gradient infinity-norm or
    the step change drops below ``tol``. Raises SeparationError when a
    standardized coefficient exceeds 50 in magnitude even after halving.
    """
    if ds.n_events == 0:
        raise ValueError("no events in dataset")
    if ds.n_features == 0:
        raise ValueError("dataset has no feature columns")
    if ds.n_rows <= ds.n_features:
        warnings.warn(f"n_rows={ds.n_rows} <= n_features={ds.n_features}; "
                      "fit may be unstable")

    X = np.asarray(ds.features, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd == 0
    if const.any():
        bad = [ds.feature_names[i] for i in np.where(const)[0]]
        raise ValueError(f"constant feature column(s): {bad}")
    Xs = (X - mu) / sd
    if np.linalg.matrix_rank(Xs) < ds.n_features:
        raise ValueError("constant/collinear feature columns detected")

    beta = np.zeros(ds.n_features)
    ll, grad, hess = _ll_grad_hess(Xs @ beta, Xs, ds.time, ds.event)
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        if float(np.max(np.abs(grad))) < tol:
            converged = True
            break
        step = _solve_newton(hess, grad)
        alpha = 1.0
        halvings = 0
        new_beta = beta + step
        new_ll, new_grad, new_hess = _ll_grad_hess(Xs @ new_beta, Xs, ds.time, ds.event)
        while new_ll < ll and halvings < 20:
            alpha *= 0.5
            halvings += 1
            new_beta = beta + alpha * step
            new_ll, new_grad, new_hess = _ll_grad_hess(
                Xs @ new_beta, Xs, ds.time, ds.event)
        improved = new_ll >= ll
        if np.max(np.abs(new_beta)) > 50.0:
            raise SeparationError("separation detected")
        delta = float(np.max(np.abs(new_beta - beta)))
        n_iter += 1
        beta, ll, grad, hess = new_beta, new_ll, new_grad, new_hess
        if delta < tol:
            converged = True
            break
        if not improved:
            break  # stuck even after 20 halvings
    gnorm = float(np.max(np.abs(grad)))
    if gnorm < tol:
        converged = True
    if not converged:
        log.warning("fit_cox did not converge after %d iterations "
                    "(gradient norm %.3e)", n_iter, gnorm)
    return CoxModel(beta=beta / sd, feature_names=ds.feature_names,
                    converged=converged, n_iterations=n_iter,
                    final_gradient_norm=gnorm)


def _solve_newton(hess, grad):
    """Newton direction solve(-H, g); escalating ridge on singular Hessians."""
    A = -hess
    ridge = 0.0
    for _ in range(8):
        try:
            return np.linalg.solve(A + ridge * np.eye(A.shape[0]), grad)
        except np.linalg.LinAlgError:
            ridge = 1e-8 if ridge == 0.0 else ridge * 100.0
    raise np.linalg.LinAlgError("singular Hessian")


def predict_risk(model: CoxModel, x):
    """Linear risk score x.beta; higher means higher hazard.

    Accepts a single feature vector or an (n, p) matrix.
    """
    x = np.asarray(x, dtype=float)
    p = model.beta.shape[0]
    if x.ndim == 1:
        if x.shape[0] != p:
            raise ValueError(f"expected {p} features, got {x.shape[0]}")
        return float(x @ model.beta)
    if x.ndim == 2:
        if x.shape[1] != p:
            raise ValueError(f"expected {p} features, got {x.shape[1]}")
        return x @ model.beta
    raise ValueError("x must be 1-D or 2-D")

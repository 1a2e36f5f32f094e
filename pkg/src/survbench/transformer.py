"""Survival transformer: self-attention encoder over time-interval tokens
with an ordinal-regression survival head.

Each participant becomes a sequence of n_bins tokens (covariate embedding
plus a learned time-bin embedding); the encoder output feeds a shared linear
readout whose per-token score, minus a monotone threshold per bin, is the
logit of P(T > t). Forward and backward passes are hand-rolled numpy so the
analytic gradients can be checked against finite differences.
"""

import json
import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .data import SurvivalDataset

log = logging.getLogger(__name__)

LN_EPS = 1e-9
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

TRAN_BOX = {
    "n_layers": (1, 10),
    "d_ffn": (1, 10),
    "dropout": (0.1, 0.5),
    "learning_rate": (1e-6, 0.01),
    "reg_weight": (0.1, 3.0),
    "n_epochs": (1, 500),
}


class DivergenceError(RuntimeError):
    """Training loss became non-finite; carries the epoch index."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TransformerConfig:
    n_layers: int = 2
    d_ffn: int = 2  # width multiplier of the position-wise FFN
    n_heads: int = 2
    d_model: int = 32
    dropout: float = 0.1
    learning_rate: float = 1e-3
    reg_weight: float = 0.1
    n_epochs: int = 50
    n_bins: int = 10
    seed: int = 0
    batch_size: int = 64

    def validate(self, clamp: bool = False) -> "TransformerConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        updates = {}
        for name, (lo, hi) in TRAN_BOX.items():
            v = getattr(self, name)
            if not (lo <= v <= hi):
                warnings.warn(f"config {name}={v} outside box [{lo}, {hi}]")
                if clamp:
                    updates[name] = type(v)(min(max(v, lo), hi))
        return replace(self, **updates) if updates else self


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Ascending upper edges of the discrete time intervals."""

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("boundaries must be a non-empty 1-D array")
        if np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be strictly ascending")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def n_bins(self) -> int:
        return int(self.boundaries.size)

    def bin_index(self, time):
        """Index of the interval containing each time; times beyond the last
        boundary clamp to the final bin with a warning."""
        t = np.asarray(time, dtype=float)
        idx = np.searchsorted(self.boundaries, t, side="left")
        beyond = idx >= self.n_bins
        if np.any(beyond):
            warnings.warn("time beyond the grid; clamped to the last bin")
            idx = np.minimum(idx, self.n_bins - 1)
        return idx if t.ndim else int(idx)


def discretize_time(ds: SurvivalDataset, n_bins: int) -> TimeGrid:
    """Interval edges at empirical quantiles of the observed event times.

    Censored times are excluded from the quantile computation; the final
    boundary is extended to the maximum observed time so the grid covers
    every row. Duplicate quantiles collapse (with a warning).
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    event_times = ds.time[ds.event == 1]
    if event_times.size == 0:
        raise ValueError("no events; cannot build a time grid")
    n_distinct = np.unique(event_times).size
    if n_distinct == 1:
        raise ValueError("degenerate time distribution: all event times identical")
    if n_distinct < n_bins:
        warnings.warn(f"fewer distinct event times ({n_distinct}) than bins ({n_bins})")
    levels = np.arange(1, n_bins + 1) / n_bins
    edges = np.quantile(event_times, levels, method="lower")
    edges[-1] = max(float(edges[-1]), float(ds.time.max()))
    uniq = np.unique(edges)
    if uniq.size < edges.size:
        warnings.warn(f"duplicate quantile edges; grid reduced to {uniq.size} bins")
    return TimeGrid(uniq)


class TransformerParams:
    """Named trainable arrays stored in one flat buffer, plus the input
    standardization statistics.

    Keys: ``proj`` (p, d), ``time_embed`` (T, d), per layer i ``li.wq/wk/wv/wo``
    (d, d), ``li.ln1_g/ln1_b/ln2_g/ln2_b`` (d,), ``li.ffn_w1`` (d, f*d),
    ``li.ffn_b1`` (f*d,), ``li.ffn_w2`` (f*d, d), ``li.ffn_b2`` (d,),
    ``readout_w`` (d,), ``readout_b`` (1,), ``alpha_raw`` (T,). The ordinal
    thresholds are alpha_raw under a cumulative-softplus reparameterization,
    which keeps them non-decreasing.
    """

    def __init__(self, arrays: dict, x_mean, x_std):
        self.flat, self.arrays = _pack(arrays)
        self.x_mean = np.asarray(x_mean, dtype=float)
        self.x_std = np.asarray(x_std, dtype=float)

    @property
    def n_features(self) -> int:
        return int(self.arrays["proj"].shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.arrays["alpha_raw"].shape[0])

    @property
    def n_parameters(self) -> int:
        return int(self.flat.size)

    def copy(self) -> "TransformerParams":
        return TransformerParams(self.arrays, self.x_mean, self.x_std)

    def __getstate__(self):
        return {"arrays": {k: np.array(v) for k, v in self.arrays.items()},
                "x_mean": self.x_mean, "x_std": self.x_std}

    def __setstate__(self, state):
        self.__init__(state["arrays"], state["x_mean"], state["x_std"])

    def to_json(self) -> str:
        def tag(a):
            return {"shape": list(a.shape), "data": [float(x) for x in a.ravel()]}
        return json.dumps(
            {"arrays": {k: tag(v) for k, v in self.arrays.items()},
             "x_mean": tag(self.x_mean), "x_std": tag(self.x_std)},
            sort_keys=True)

    @staticmethod
    def from_json(doc: str) -> "TransformerParams":
        d = json.loads(doc)

        def untag(t):
            return np.asarray(t["data"], dtype=float).reshape(t["shape"])
        return TransformerParams(
            arrays={k: untag(v) for k, v in d["arrays"].items()},
            x_mean=untag(d["x_mean"]), x_std=untag(d["x_std"]))


def _pack(arrays: dict):
    """Copy named arrays into one flat buffer; return (flat, dict of views)."""
    flat = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays.values()])
    views = {}
    off = 0
    for k, a in arrays.items():
        a = np.asarray(a)
        views[k] = flat[off:off + a.size].reshape(a.shape)
        off += a.size
    return flat, views


def _init_with_rng(cfg: TransformerConfig, n_features: int, n_bins: int,
                   rng) -> TransformerParams:
    d = cfg.d_model
    fd = cfg.d_ffn * d
    arrays = {
        "proj": rng.normal(0.0, 1.0 / np.sqrt(n_features), (n_features, d)),
        "time_embed": rng.normal(0.0, 0.1, (n_bins, d)),
    }
    for i in range(cfg.n_layers):
        b = f"l{i}."
        arrays[b + "wq"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        arrays[b + "wk"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        arrays[b + "wv"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        arrays[b + "wo"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        arrays[b + "ln1_g"] = np.ones(d)
        arrays[b + "ln1_b"] = np.zeros(d)
        arrays[b + "ffn_w1"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d, fd))
        arrays[b + "ffn_b1"] = np.zeros(fd)
        arrays[b + "ffn_w2"] = rng.normal(0.0, 1.0 / np.sqrt(fd), (fd, d))
        arrays[b + "ffn_b2"] = np.zeros(d)
        arrays[b + "ln2_g"] = np.ones(d)
        arrays[b + "ln2_b"] = np.zeros(d)
    arrays["readout_w"] = rng.normal(0.0, 1.0 / np.sqrt(d), (d,))
    arrays["readout_b"] = np.zeros(1)
    arrays["alpha_raw"] = np.zeros(n_bins)
    return TransformerParams(arrays=arrays, x_mean=np.zeros(n_features),
                             x_std=np.ones(n_features))


def init_params(cfg: TransformerConfig, n_features: int,
                n_bins: int | None = None) -> TransformerParams:
    """Seeded initial parameters; identical to what train() starts from."""
    rng = np.random.default_rng(cfg.seed)
    return _init_with_rng(cfg, n_features, cfg.n_bins if n_bins is None else n_bins,
                          rng)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def thresholds(params: TransformerParams) -> np.ndarray:
    """Ordinal thresholds alpha_t: first raw value, then cumulative softplus
    increments, hence non-decreasing."""
    raw = params.arrays["alpha_raw"]
    inc = np.concatenate(([raw[0]], softplus(raw[1:])))
    return np.cumsum(inc)


def layer_norm(x, gain, bias, eps: float = LN_EPS):
    """Normalize over the last axis to zero mean / unit variance, then apply
    the affine parameters."""
    return _ln_forward(x, gain, bias, eps)[0]


def _ln_forward(x, gain, bias, eps: float = LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gain * xhat + bias, xhat, inv


def _ln_backward(dy, xhat, inv, gain):
    dgain = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def self_attention(Q, K, V, return_weights: bool = False):
    """Scaled dot-product attention softmax(Q K^T / sqrt(d_k)) V.

    Q and K must share their column count d_k; K and V their row count.
    """
    Q = np.asarray(Q, dtype=float)
    K = np.asarray(K, dtype=float)
    V = np.asarray(V, dtype=float)
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError("Q and K must have the same column count")
    if K.shape[-2] != V.shape[-2]:
        raise ValueError("K and V must have the same row count")
    scores = Q @ np.swapaxes(K, -1, -2) / np.sqrt(Q.shape[-1])
    w = _softmax_last(scores)
    out = w @ V
    return (out, w) if return_weights else out


def _softmax_last(s):
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, n_heads):
    B, T, d = x.shape
    return x.reshape(B, T, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, T, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * dk)


def _forward_batch(params: TransformerParams, cfg: TransformerConfig, X,
                   dropout_rng=None):
    """Logits (B, T) for a raw feature batch, with caches for backprop.

    Dropout (inverted scaling) is active only when a generator is supplied.
    """
    A = params.arrays
    Xs = (np.asarray(X, dtype=float) - params.x_mean) / params.x_std
    Z = Xs @ A["proj"]
    Z = Z[:, None, :] + A["time_embed"][None, :, :]
    cache = {"Xs": Xs, "layers": []}
    p_drop = cfg.dropout if dropout_rng is not None else 0.0

    def dropout(x):
        if p_drop <= 0.0:
            return x, None
        mask = (dropout_rng.uniform(size=x.shape) >= p_drop) / (1.0 - p_drop)
        return x * mask, mask

    for i in range(cfg.n_layers):
        b = f"l{i}."
        lc = {"Zin": Z}
        Q = Z @ A[b + "wq"]
        K = Z @ A[b + "wk"]
        V = Z @ A[b + "wv"]
        Qh = _split_heads(Q, cfg.n_heads)
        Kh = _split_heads(K, cfg.n_heads)
        Vh = _split_heads(V, cfg.n_heads)
        scores = Qh @ np.swapaxes(Kh, -1, -2) / np.sqrt(Qh.shape[-1])
        P = _softmax_last(scores)
        Oh = P @ Vh
        Om = _merge_heads(Oh)
        att = Om @ A[b + "wo"]
        att, lc["att_mask"] = dropout(att)
        R1 = Z + att
        Z1, xhat1, inv1 = _ln_forward(R1, A[b + "ln1_g"], A[b + "ln1_b"])
        F1 = Z1 @ A[b + "ffn_w1"] + A[b + "ffn_b1"]
        U = np.maximum(F1, 0.0)
        F2 = U @ A[b + "ffn_w2"] + A[b + "ffn_b2"]
        F2, lc["ffn_mask"] = dropout(F2)
        R2 = Z1 + F2
        Z, xhat2, inv2 = _ln_forward(R2, A[b + "ln2_g"], A[b + "ln2_b"])
        lc.update(Qh=Qh, Kh=Kh, Vh=Vh, P=P, Om=Om, xhat1=xhat1, inv1=inv1,
                  Z1=Z1, F1=F1, U=U, xhat2=xhat2, inv2=inv2)
        cache["layers"].append(lc)

    s = Z @ A["readout_w"] + A["readout_b"][0]
    alpha = thresholds(params)
    logits = s - alpha[None, :]
    cache["Zfinal"] = Z
    return logits, cache


def forward(params: TransformerParams, cfg: TransformerConfig, x,
            grid: TimeGrid):
    """Per-bin logits for one feature vector or an (n, p) matrix; logit t is
    the log-odds of surviving past interval t. Dropout is inactive."""
    if grid.n_bins != params.n_bins:
        raise ValueError("grid does not match the model's bin count")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != params.n_features:
        raise ValueError(f"expected {params.n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(params.flat)):
        raise ValueError("non-finite parameters")
    logits, _ = _forward_batch(params, cfg, X)
    return logits[0] if single else logits


def ordinal_nll(logits, time: float, event: int, grid: TimeGrid) -> float:
    """Negative log-likelihood of one row under the ordinal survival head.

    An event in bin b contributes -sum_{t<b} log sigma(z_t) - log(1-sigma(z_b));
    a censored row contributes -sum_{t<=b} log sigma(z_t).
    """
    z = np.asarray(logits, dtype=float)
    if z.shape != (grid.n_bins,):
        raise ValueError(f"logits have shape {z.shape}, expected ({grid.n_bins},)")
    b = grid.bin_index(float(time))
    if event:
        return float(softplus(-z[:b]).sum() + softplus(z[b]))
    return float(softplus(-z[: b + 1]).sum())


def _nll_batch(logits, bins, event):
    """Mean ordinal NLL over rows and its gradient w.r.t. the logits."""
    B, T = logits.shape
    cols = np.arange(T)[None, :]
    b = bins[:, None]
    censored_here = (event[:, None] == 0) & (cols == b)
    surv_terms = (cols < b) | censored_here
    rows = np.arange(B)
    loss = float((softplus(-logits) * surv_terms).sum())
    loss += float((softplus(logits[rows, bins]) * event).sum())
    dz = -sigmoid(-logits) * surv_terms
    dz[rows, bins] += event * sigmoid(logits[rows, bins])
    return loss / B, dz / B


def _loss_and_grads_flat(params: TransformerParams, cfg: TransformerConfig,
                         X, bins, event, dropout_rng=None):
    """Training loss and its gradient as one flat vector aligned with
    ``params.flat``."""
    A = params.arrays
    X = np.asarray(X, dtype=float)
    bins = np.asarray(bins, dtype=int)
    event = np.asarray(event, dtype=int)
    logits, cache = _forward_batch(params, cfg, X, dropout_rng=dropout_rng)
    loss, dlogits = _nll_batch(logits, bins, event)

    reg = cfg.reg_weight / params.n_parameters
    loss += reg * float(params.flat @ params.flat)

    gflat, grads = _pack({k: np.zeros_like(v) for k, v in A.items()})

    # readout and thresholds
    Zf = cache["Zfinal"]
    ds_ = dlogits  # d loss / d s, shape (B, T)
    grads["readout_w"] += np.einsum("btd,bt->d", Zf, ds_)
    grads["readout_b"] += ds_.sum()
    dalpha = -dlogits.sum(axis=0)
    raw = A["alpha_raw"]
    suffix = np.cumsum(dalpha[::-1])[::-1]
    graw = np.empty_like(raw)
    graw[0] = suffix[0]
    graw[1:] = sigmoid(raw[1:]) * suffix[1:]
    grads["alpha_raw"] += graw

    dZ = ds_[:, :, None] * A["readout_w"][None, None, :]

    for i in reversed(range(cfg.n_layers)):
        b = f"l{i}."
        lc = cache["layers"][i]
        # second add&norm
        dR2, dg2, db2 = _ln_backward(dZ, lc["xhat2"], lc["inv2"], A[b + "ln2_g"])
        grads[b + "ln2_g"] += dg2
        grads[b + "ln2_b"] += db2
        dZ1 = dR2.copy()
        dF2 = dR2
        if lc["ffn_mask"] is not None:
            dF2 = dF2 * lc["ffn_mask"]
        # FFN
        grads[b + "ffn_w2"] += np.einsum("btf,btd->fd", lc["U"], dF2)
        grads[b + "ffn_b2"] += dF2.sum(axis=(0, 1))
        dU = dF2 @ A[b + "ffn_w2"].T
        dF1 = dU * (lc["F1"] > 0)
        grads[b + "ffn_w1"] += np.einsum("btd,btf->df", lc["Z1"], dF1)
        grads[b + "ffn_b1"] += dF1.sum(axis=(0, 1))
        dZ1 += dF1 @ A[b + "ffn_w1"].T
        # first add&norm
        dR1, dg1, db1 = _ln_backward(dZ1, lc["xhat1"], lc["inv1"], A[b + "ln1_g"])
        grads[b + "ln1_g"] += dg1
        grads[b + "ln1_b"] += db1
        dZin = dR1.copy()
        datt = dR1
        if lc["att_mask"] is not None:
            datt = datt * lc["att_mask"]
        # attention output projection
        grads[b + "wo"] += np.einsum("btd,bte->de", lc["Om"], datt)
        dOm = datt @ A[b + "wo"].T
        dOh = _split_heads(dOm, cfg.n_heads)
        # attention weights and values
        dP = dOh @ np.swapaxes(lc["Vh"], -1, -2)
        dVh = np.swapaxes(lc["P"], -1, -2) @ dOh
        dscores = lc["P"] * (dP - (dP * lc["P"]).sum(axis=-1, keepdims=True))
        dk = lc["Qh"].shape[-1]
        dQh = dscores @ lc["Kh"] / np.sqrt(dk)
        dKh = np.swapaxes(dscores, -1, -2) @ lc["Qh"] / np.sqrt(dk)
        dQ = _merge_heads(dQh)
        dK = _merge_heads(dKh)
        dV = _merge_heads(dVh)
        Zin = lc["Zin"]
        grads[b + "wq"] += np.einsum("btd,bte->de", Zin, dQ)
        grads[b + "wk"] += np.einsum("btd,bte->de", Zin, dK)
        grads[b + "wv"] += np.einsum("btd,bte->de", Zin, dV)
        dZin += dQ @ A[b + "wq"].T + dK @ A[b + "wk"].T + dV @ A[b + "wv"].T
        dZ = dZin

    grads["time_embed"] += dZ.sum(axis=0)
    dZ0 = dZ.sum(axis=1)  # tokens share the projected covariates
    grads["proj"] += cache["Xs"].T @ dZ0

    gflat += (2.0 * reg) * params.flat
    return loss, gflat, grads


def total_loss_and_grads(params: TransformerParams, cfg: TransformerConfig,
                         X, bins, event, dropout_rng=None):
    """Training loss (mean ordinal NLL plus L2 penalty) and the gradient for
    every trainable array. Returns (loss, grads dict)."""
    loss, _, grads = _loss_and_grads_flat(params, cfg, X, bins, event,
                                          dropout_rng=dropout_rng)
    return loss, grads


def dataset_loss(params: TransformerParams, cfg: TransformerConfig,
                 ds: SurvivalDataset, grid: TimeGrid) -> float:
    """Total training objective on a dataset with dropout off."""
    bins = grid.bin_index(ds.time)
    logits, _ = _forward_batch(params, cfg, ds.features)
    loss, _ = _nll_batch(logits, bins, ds.event)
    reg = cfg.reg_weight / params.n_parameters
    return float(loss + reg * (params.flat @ params.flat))


def train(ds: SurvivalDataset, cfg: TransformerConfig):
    """Mini-batch Adam training; deterministic given cfg.seed.

    Returns (TransformerParams, TimeGrid). Raises DivergenceError with the
    epoch index if the loss goes non-finite.
    """
    cfg = cfg.validate()
    if ds.n_events == 0:
        raise ValueError("no events in dataset")
    grid = discretize_time(ds, cfg.n_bins)
    bins = grid.bin_index(ds.time)

    rng = np.random.default_rng(cfg.seed)
    params = _init_with_rng(cfg, ds.n_features, grid.n_bins, rng)
    mu = ds.features.mean(axis=0)
    sd = ds.features.std(axis=0)
    params.x_mean = mu
    params.x_std = np.where(sd > 0, sd, 1.0)

    m = np.zeros_like(params.flat)
    v = np.zeros_like(params.flat)
    step = 0
    n = ds.n_rows
    for epoch in range(cfg.n_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            loss, g, _ = _loss_and_grads_flat(
                params, cfg, ds.features[batch], bins[batch], ds.event[batch],
                dropout_rng=rng)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            step += 1
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            bc1 = 1.0 - ADAM_BETA1 ** step
            bc2 = 1.0 - ADAM_BETA2 ** step
            params.flat -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, grid


def survival_curve(params: TransformerParams, cfg: TransformerConfig, x,
                   grid: TimeGrid):
    """P(T > t) per bin, monotonized by a running minimum along the bins."""
    logits = forward(params, cfg, x, grid)
    return np.minimum.accumulate(sigmoid(logits), axis=-1)


def predict_risk(params: TransformerParams, cfg: TransformerConfig, x,
                 grid: TimeGrid):
    """Risk score: negative discrete expected survival, -sum_t P(T > t).

    Higher means the event is expected sooner. Dropout is inactive.
    """
    return -survival_curve(params, cfg, x, grid).sum(axis=-1)

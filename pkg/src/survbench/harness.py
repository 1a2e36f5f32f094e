"""Synthetic data generation, nested cross-validation and Monte Carlo study."""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import boosting, cox, transformer
from .bayesopt import ParamDim, ParamSpace, optimize
from .data import SurvivalDataset, stratified_kfold
from .metrics import concordance_index
from .relieff import relieff_weights, top_m

log = logging.getLogger(__name__)

MODEL_KINDS = ("cox", "sxgb", "stran")


@dataclass(frozen=True)
class SynthSpec:
    """Weibull proportional-hazards generator settings.

    ``beta`` may be shorter than ``n_features``; trailing features get zero
    coefficients (pure noise). ``censor_rate`` is the target censored
    fraction, hit within +/-2% by calibrating an independent exponential
    censoring rate.
    """

    n_rows: int = 500
    n_features: int = 20
    beta: tuple = (1.0, -0.8, 0.7, -0.6, 0.5)
    weibull_shape: float = 1.5
    weibull_scale: float = 0.01
    censor_rate: float = 0.2
    nonlinear: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.weibull_shape <= 0 or self.weibull_scale <= 0:
            raise ValueError("weibull shape and scale must be positive")
        if not (0.0 <= self.censor_rate < 1.0):
            raise ValueError("censor_rate must be in [0, 1)")
        if self.n_rows < 1 or self.n_features < 1:
            raise ValueError("n_rows and n_features must be positive")
        if len(self.beta) > self.n_features:
            raise ValueError("beta longer than n_features")

    @property
    def beta_full(self) -> np.ndarray:
        b = np.zeros(self.n_features)
        b[: len(self.beta)] = self.beta
        return b


def linear_predictor(spec: SynthSpec, X: np.ndarray) -> np.ndarray:
    """True risk score under the generator: X.beta plus an optional x0*x1 term."""
    eta = X @ spec.beta_full
    if spec.nonlinear:
        eta = eta + X[:, 0] * X[:, 1]
    return eta


def generate_synthetic(spec: SynthSpec) -> SurvivalDataset:
    """Draw a dataset from the Weibull proportional-hazards model.

    T = (-ln U / (scale * exp(eta)))^(1/shape) with standard-normal features,
    independent exponential censoring calibrated by bisection so the realized
    censored fraction lands within +/-2% of the target. Deterministic given
    the seed.
    """
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n_rows, spec.n_features))
    eta = linear_predictor(spec, X)
    U = rng.uniform(size=spec.n_rows)
    T = (-np.log(U) / (spec.weibull_scale * np.exp(eta))) ** (1.0 / spec.weibull_shape)
    E = rng.exponential(scale=1.0, size=spec.n_rows)  # unit-rate censoring draws

    names = tuple(f"x{i}" for i in range(spec.n_features))
    if spec.censor_rate == 0.0:
        return SurvivalDataset(X, names, T, np.ones(spec.n_rows, dtype=int))

    # Censoring time C = E / rate; realized censored fraction mean(T > C) is
    # monotone increasing in rate. Bracket then bisect.
    def censored_fraction(rate):
        return float(np.mean(T > E / rate))

    steps = 0
    lo, hi = 1e-12, 1.0
    while censored_fraction(hi) < spec.censor_rate:
        hi *= 4.0
        steps += 1
        if steps > 100:
            raise RuntimeError("censor rate calibration failed: no upper bracket")
    rate = hi
    frac = censored_fraction(rate)
    while abs(frac - spec.censor_rate) > 0.02:
        steps += 1
        if steps > 100:
            raise RuntimeError("censor rate calibration failed after 100 bisection steps")
        rate = 0.5 * (lo + hi)
        frac = censored_fraction(rate)
        if frac < spec.censor_rate:
            lo = rate
        else:
            hi = rate

    C = E / rate
    event = (T <= C).astype(int)
    time = np.minimum(T, C)
    return SurvivalDataset(X, names, time, event)


# Tuned hyperparameter boxes (paper ranges); n_rounds for sxgb and the
# architectural knobs for stran are fixed per run, not tuned.
SXGB_BOX = (
    ("eta", "log-continuous", 1e-6, 0.1),
    ("max_depth", "integer", 1, 5),
    ("subsample", "continuous", 0.5, 0.9),
    ("colsample_bytree", "continuous", 0.1, 0.9),
    ("gamma", "log-continuous", 1e-4, 0.1),
    ("min_child_weight", "log-continuous", 1e-8, 1e-4),
    ("reg_alpha", "continuous", 0.0, 1.0),
    ("reg_lambda", "continuous", 0.0, 20.0),
)
STRAN_BOX = (
    ("n_layers", "integer", 1, 10),
    ("d_ffn", "integer", 1, 10),
    ("dropout", "continuous", 0.1, 0.5),
    ("learning_rate", "log-continuous", 1e-6, 0.01),
    ("reg_weight", "continuous", 0.1, 3.0),
    ("n_epochs", "integer", 1, 500),
)


@dataclass(frozen=True)
class ModelOptions:
    """Fixed (untuned) model settings and optional tuning-box overrides.

    Box overrides narrow the search range of a tuned hyperparameter; they
    must stay inside the default box unless explicitly allowed.
    """

    sxgb_n_rounds: int = 200
    stran_d_model: int = 32
    stran_n_heads: int = 2
    stran_n_bins: int = 10
    stran_batch_size: int = 64
    sxgb_box: dict = field(default_factory=dict)
    stran_box: dict = field(default_factory=dict)
    allow_out_of_box: bool = False


@dataclass(frozen=True)
class SelectOptions:
    """ReliefF feature-selection settings for the harness."""

    k_neighbors: int
    top: int
    stage: str = "pre-cv"  # or "per-fold"
    seed: int = 0

    def __post_init__(self):
        if self.stage not in ("pre-cv", "per-fold"):
            raise ValueError("stage must be 'pre-cv' or 'per-fold'")


def build_space(model_kind: str, options: ModelOptions) -> ParamSpace:
    """Tuning space for a model, applying any box overrides."""
    base = {"sxgb": SXGB_BOX, "stran": STRAN_BOX}[model_kind]
    overrides = options.sxgb_box if model_kind == "sxgb" else options.stran_box
    dims = []
    for name, kind, lo, hi in base:
        if name in overrides:
            new_lo, new_hi = overrides[name]
            if not options.allow_out_of_box and not (lo <= new_lo and new_hi <= hi):
                raise ValueError(
                    f"{model_kind} box override for {name} [{new_lo}, {new_hi}] "
                    f"outside the allowed range [{lo}, {hi}]")
            lo, hi = new_lo, new_hi
        dims.append(ParamDim(name, kind, float(lo), float(hi)))
    unknown = set(overrides) - {d[0] for d in base}
    if unknown:
        raise ValueError(f"unknown box override(s) for {model_kind}: {sorted(unknown)}")
    return ParamSpace(tuple(dims))


def derive_seed(*parts) -> int:
    """Deterministic child seed from a tuple of integers."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def select_features_pre_cv(ds: SurvivalDataset, select: SelectOptions):
    """ReliefF on the full dataset (paper-replication placement); returns the
    reduced dataset and the kept feature indices."""
    fw = relieff_weights(ds, ds.event, select.k_neighbors, select.seed)
    keep = top_m(fw, select.top)
    return ds.with_features(keep), keep


def _fit_model(model_kind: str, train_ds: SurvivalDataset, params: dict | None,
               fit_seed: int, options: ModelOptions):
    if model_kind == "cox":
        return cox.fit_cox(train_ds)
    if model_kind == "sxgb":
        hp = boosting.BoostHyperparams(n_rounds=options.sxgb_n_rounds, **params)
        return boosting.fit_sxgb(train_ds, hp, seed=fit_seed)
    if model_kind == "stran":
        cfg = transformer.TransformerConfig(
            d_model=options.stran_d_model, n_heads=options.stran_n_heads,
            n_bins=options.stran_n_bins, batch_size=options.stran_batch_size,
            seed=fit_seed, **params)
        tparams, grid = transformer.train(train_ds, cfg)
        return tparams, cfg, grid
    raise ValueError(f"unknown model kind {model_kind!r}")


def _predict_model(model_kind: str, fitted, X):
    if model_kind == "cox":
        return cox.predict_risk(fitted, X)
    if model_kind == "sxgb":
        return boosting.predict_risk(fitted, X)
    tparams, cfg, grid = fitted
    return transformer.predict_risk(tparams, cfg, X, grid)


def _make_inner_objective(model_kind, train_ds, inner_k, inner_seed, fit_seed,
                          options):
    """Mean inner-validation C-index as a function of tuned hyperparameters.

    The inner folds are fixed across trials. A failing trial (fit error or no
    comparable validation pairs) scores the floor 0.0.
    """
    folds = stratified_kfold(train_ds, inner_k, inner_seed)
    splits = [(train_ds.subset_rows(folds.train_rows(f)),
               train_ds.subset_rows(folds.test_rows(f)))
              for f in range(inner_k)]

    def objective(params: dict) -> float:
        scores = []
        for tr, va in splits:
            try:
                fitted = _fit_model(model_kind, tr, params, fit_seed, options)
                risks = _predict_model(model_kind, fitted, va.features)
                scores.append(concordance_index(risks, va.time, va.event).c_index)
            except Exception as exc:
                log.warning("inner trial failed (%s); scored 0.0", exc)
                return 0.0
        return float(np.mean(scores))

    return objective


@dataclass(frozen=True)
class FoldResult:
    fold: int
    c_index: float
    hyperparams: dict | None  # None for cox (untuned)


@dataclass(frozen=True)
class NestedCVRun:
    model_kind: str
    seed: int
    fold_results: tuple

    @property
    def fold_scores(self) -> list:
        return [fr.c_index for fr in self.fold_results]

    @property
    def mean_c_index(self) -> float:
        return float(np.mean(self.fold_scores))


def run_nested_cv(ds: SurvivalDataset, model_kind: str, outer_k: int = 5,
                  bayes_rounds: int = 25, seed: int = 0,
                  select: SelectOptions | None = None,
                  options: ModelOptions | None = None,
                  inner_k: int = 3) -> NestedCVRun:
    """Outer stratified k-fold with inner Bayesian tuning (sxgb/stran only).

    Cox requires no tuning and is fit directly. Each outer fold tunes on its
    training portion via an inner stratified CV objective, refits the tuned
    model on the full training portion, and scores the held-out fold once.
    All seeds derive from (seed, fold); held-out rows never reach the tuner.
    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    options = options or ModelOptions()
    folds = stratified_kfold(ds, outer_k, seed)
    results = []
    for f in range(outer_k):
        try:
            tr = ds.subset_rows(folds.train_rows(f))
            te = ds.subset_rows(folds.test_rows(f))
            if select is not None and select.stage == "per-fold":
                fw = relieff_weights(tr, tr.event, select.k_neighbors,
                                     derive_seed(seed, 404, f))
                keep = top_m(fw, select.top)
                tr = tr.with_features(keep)
                te = te.with_features(keep)
            best = None
            fit_seed = derive_seed(seed, 202, f)
            if model_kind != "cox":
                objective = _make_inner_objective(
                    model_kind, tr, inner_k, derive_seed(seed, 101, f),
                    fit_seed, options)
                space = build_space(model_kind, options)
                best, _ = optimize(objective, space, bayes_rounds,
                                   derive_seed(seed, 303, f))
            fitted = _fit_model(model_kind, tr, best, fit_seed, options)
            risks = _predict_model(model_kind, fitted, te.features)
            c = concordance_index(risks, te.time, te.event).c_index
        except Exception as exc:
            raise RuntimeError(f"outer fold {f} failed: {exc}") from exc
        results.append(FoldResult(fold=f, c_index=float(c), hyperparams=best))
    return NestedCVRun(model_kind=model_kind, seed=seed, fold_results=tuple(results))


def nested_cv(ds: SurvivalDataset, model_kind: str, outer_k: int = 5,
              bayes_rounds: int = 25, seed: int = 0, **kwargs) -> list:
    """Per-fold held-out C-index list; see run_nested_cv."""
    return run_nested_cv(ds, model_kind, outer_k, bayes_rounds, seed,
                         **kwargs).fold_scores


@dataclass(frozen=True)
class RepetitionRecord:
    model: str
    repetition: int
    seed: int
    fold_scores: tuple
    mean_c_index: float | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class ExperimentReport:
    """Per-repetition records, per-model aggregates and run provenance."""

    records: tuple
    aggregates: dict
    provenance: dict

    def to_json_dict(self) -> dict:
        return {
            "aggregates": self.aggregates,
            "provenance": self.provenance,
            "repetitions": [
                {"model": r.model, "repetition": r.repetition, "seed": r.seed,
                 "fold_scores": list(r.fold_scores), "mean_c_index": r.mean_c_index,
                 "error": r.error}
                for r in self.records
            ],
        }

    def write_csv(self, path):
        """Boxplot feed: one row per (model, repetition, fold)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "repetition", "fold", "c_index"])
            for r in self.records:
                for fold, c in enumerate(r.fold_scores):
                    writer.writerow([r.model, r.repetition, fold, repr(float(c))])

    def summary_lines(self) -> list:
        return [f"{m} {a['mean']:.4f} ({a['sd']:.4f})"
                for m, a in sorted(self.aggregates.items())]


def _run_repetition(args) -> RepetitionRecord:
    ds, model, rep, rep_seed, outer_k, bayes_rounds, select, options = args
    try:
        run = run_nested_cv(ds, model, outer_k=outer_k, bayes_rounds=bayes_rounds,
                            seed=rep_seed, select=select, options=options)
        return RepetitionRecord(model=model, repetition=rep, seed=rep_seed,
                                fold_scores=tuple(run.fold_scores),
                                mean_c_index=run.mean_c_index)
    except Exception as exc:
        log.error("repetition %d (%s) failed: %s", rep, model, exc)
        return RepetitionRecord(model=model, repetition=rep, seed=rep_seed,
                                fold_scores=(), mean_c_index=None, error=str(exc))


def monte_carlo(ds: SurvivalDataset, models, reps: int = 10, outer_k: int = 5,
                bayes_rounds: int = 25, master_seed: int = 0, jobs: int = 1,
                select: SelectOptions | None = None,
                options: ModelOptions | None = None,
                provenance: dict | None = None) -> ExperimentReport:
    """Repeat nested CV ``reps`` times per model with derived per-repetition
    seeds; aggregate mean and sample SD of the repetition means.

    Failed repetitions are recorded and excluded from the aggregates.
    Results are identical for any ``jobs`` value.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    models = list(models)
    for m in models:
        if m not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {m!r}")
    if select is not None and select.stage == "pre-cv":
        ds, _ = select_features_pre_cv(ds, select)

    tasks = [(ds, model, rep, derive_seed(master_seed, rep), outer_k,
              bayes_rounds, select, options)
             for model in models for rep in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_repetition, tasks))
    else:
        records = [_run_repetition(t) for t in tasks]

    aggregates = {}
    for model in models:
        means = [r.mean_c_index for r in records
                 if r.model == model and not r.failed]
        n_failed = sum(1 for r in records if r.model == model and r.failed)
        if means:
            mean = float(np.mean(means))
            sd = float(np.std(means, ddof=1)) if len(means) > 1 else 0.0
        else:
            mean, sd = float("nan"), float("nan")
        aggregates[model] = {
            "mean": mean,
            "sd": sd,
            "n_reps": len(means),
            "n_failed": n_failed,
            "single_rep": len(means) == 1,
        }

    prov = {
        "master_seed": master_seed,
        "reps": reps,
        "outer_k": outer_k,
        "bayes_rounds": bayes_rounds,
        "models": models,
        "select_stage": select.stage if select else None,
        "repetition_seeds": [derive_seed(master_seed, r) for r in range(reps)],
        "generated_at": datetime.now(timezone.utc).isoformat(),
    }
    if provenance:
        prov.update(provenance)
    return ExperimentReport(records=tuple(records), aggregates=aggregates,
                            provenance=prov)

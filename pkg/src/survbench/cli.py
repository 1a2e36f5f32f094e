"""Command-line front end: preprocess, select-features, synth, train,
evaluate, montecarlo.

Every command resolves its settings from (CLI flags > JSON config file >
defaults), embeds a hash of the resolved configuration in its JSON outputs,
and is byte-reproducible from the same config and master seed (timestamps
aside). Errors are emitted as JSON lines on stderr with a nonzero exit code.
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import boosting, cox, transformer
from .data import (build_dataset, drop_high_missingness, drop_missing_outcome_rows,
                   dummy_encode, knn_impute, load_csv)
from .harness import (ModelOptions, SelectOptions, SynthSpec, generate_synthetic,
                      monte_carlo, select_features_pre_cv)
from .metrics import concordance_index
from .relieff import relieff_weights, top_m

log = logging.getLogger(__name__)

SEED_ENV_VAR = "SURVBENCH_SEED"

DEFAULT_SYNTH = SynthSpec(
    n_rows=500, n_features=20, beta=(1.0, -0.8, 0.7, -0.6, 0.5),
    weibull_shape=1.5, weibull_scale=0.01, censor_rate=0.2, nonlinear=False,
    seed=7)


def _fmt_num(v) -> str:
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(
        json.dumps(resolved, sort_keys=True).encode("utf-8")).hexdigest()


def write_dataset_csv(path, ds, time_col: str, event_col: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(list(ds.feature_names) + [time_col, event_col]) + "\n")
        for i in range(ds.n_rows):
            cells = [_fmt_num(v) for v in ds.features[i]]
            cells.append(_fmt_num(ds.time[i]))
            cells.append(str(int(ds.event[i])))
            fh.write(",".join(cells) + "\n")


def _load_dataset(path, time_col, event_col, na_string="NA"):
    return build_dataset(load_csv(path, time_col, event_col, na_string=na_string))


def _load_config(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _resolve(args, cfg: dict, key: str, default):
    """Flag > config > default. Flags left at None fall through."""
    v = getattr(args, key.replace("-", "_"), None)
    if v is not None:
        return v
    if key in cfg:
        return cfg[key]
    return default


def _resolve_master_seed(args, cfg) -> int:
    if getattr(args, "master_seed", None) is not None:
        return args.master_seed
    if "master_seed" in cfg:
        return int(cfg["master_seed"])
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return int(env)
    return 0


def _parse_json_arg(value):
    """Inline JSON or a path to a JSON file."""
    if value is None:
        return {}
    if os.path.exists(value):
        with open(value, encoding="utf-8") as fh:
            return json.load(fh)
    return json.loads(value)


def _synth_spec_from(value, cfg: dict) -> SynthSpec:
    if value == "default":
        d = asdict(DEFAULT_SYNTH)
    else:
        d = asdict(DEFAULT_SYNTH)
        d.update(_parse_json_arg(value))
    d.update(cfg.get("synth_overrides", {}))
    d["beta"] = tuple(d["beta"])
    return SynthSpec(**d)


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    cfg = _load_config(args.config)
    na = _resolve(args, cfg, "na-string", "NA")
    threshold = float(_resolve(args, cfg, "missing-threshold", 0.5))
    k = int(_resolve(args, cfg, "knn-k", 5))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    resolved = {"command": "preprocess", "input": str(args.input),
                "time_col": args.time_col, "event_col": args.event_col,
                "na_string": na, "missing_threshold": threshold, "knn_k": k}
    h = config_hash(resolved)

    table = load_csv(args.input, args.time_col, args.event_col, na_string=na)
    n_rows_in = table.n_rows
    table = drop_missing_outcome_rows(table)
    n_dropped_rows = n_rows_in - table.n_rows
    before = set(table.column_names)
    table = drop_high_missingness(table, threshold=threshold)
    dropped_cols = sorted(before - set(table.column_names))
    table = dummy_encode(table)
    n_missing_cells = int(sum(c.n_missing for c in table.feature_columns()))
    table = knn_impute(table, k=k)
    ds = build_dataset(table)

    csv_path = out_dir / "preprocessed.csv"
    write_dataset_csv(csv_path, ds, args.time_col, args.event_col)
    manifest = {
        "config_hash": h,
        "resolved_config": resolved,
        "n_rows_in": n_rows_in,
        "n_rows_out": ds.n_rows,
        "n_rows_dropped_missing_outcome": n_dropped_rows,
        "dropped_columns": dropped_cols,
        "imputed_cells": n_missing_cells,
        "n_features_out": ds.n_features,
    }
    _write_json(out_dir / "preprocess_manifest.json", manifest)
    print(f"wrote {csv_path} ({ds.n_rows} rows, {ds.n_features} features)")
    return 0


def cmd_select_features(args) -> int:
    cfg = _load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(_resolve(args, cfg, "seed", 0))
    resolved = {"command": "select-features", "input": str(args.input),
                "time_col": args.time_col, "event_col": args.event_col,
                "k": args.k, "top": args.top, "seed": seed}
    h = config_hash(resolved)

    ds = _load_dataset(args.input, args.time_col, args.event_col)
    fw = relieff_weights(ds, ds.event, args.k, seed)
    keep = top_m(fw, args.top)
    reduced = ds.with_features(keep)

    csv_path = out_dir / "selected.csv"
    write_dataset_csv(csv_path, reduced, args.time_col, args.event_col)
    _write_json(out_dir / "selection.json", {
        "config_hash": h,
        "resolved_config": resolved,
        "selected_indices": [int(i) for i in keep],
        "selected_features": list(reduced.feature_names),
        "weights": {name: float(w) for name, w
                    in zip(ds.feature_names, fw.weights)},
    })
    print(f"wrote {csv_path} ({reduced.n_features} features kept)")
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    beta = (tuple(float(b) for b in args.beta.split(","))
            if args.beta else DEFAULT_SYNTH.beta)
    spec = SynthSpec(
        n_rows=int(_resolve(args, cfg, "n", DEFAULT_SYNTH.n_rows)),
        n_features=int(_resolve(args, cfg, "p", DEFAULT_SYNTH.n_features)),
        beta=beta,
        weibull_shape=float(_resolve(args, cfg, "shape", DEFAULT_SYNTH.weibull_shape)),
        weibull_scale=float(_resolve(args, cfg, "scale", DEFAULT_SYNTH.weibull_scale)),
        censor_rate=float(_resolve(args, cfg, "censor-rate", DEFAULT_SYNTH.censor_rate)),
        nonlinear=bool(args.nonlinear),
        seed=int(_resolve(args, cfg, "seed", DEFAULT_SYNTH.seed)),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {"command": "synth", **asdict(spec)}
    resolved["beta"] = list(resolved["beta"])
    h = config_hash(resolved)

    ds = generate_synthetic(spec)
    csv_path = out_dir / "synth.csv"
    write_dataset_csv(csv_path, ds, "time", "event")
    _write_json(out_dir / "synth_truth.json", {
        "config_hash": h,
        "resolved_config": resolved,
        "beta": [float(b) for b in spec.beta_full],
        "n_events": ds.n_events,
    })
    print(f"wrote {csv_path} ({ds.n_rows} rows, {ds.n_events} events)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    hp = _parse_json_arg(args.hyperparams)
    hp.update(cfg.get("hyperparams", {}))
    seed = int(_resolve(args, cfg, "seed", 0))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {"command": "train", "input": str(args.input), "model": args.model,
                "time_col": args.time_col, "event_col": args.event_col,
                "seed": seed, "hyperparams": hp}
    h = config_hash(resolved)

    ds = _load_dataset(args.input, args.time_col, args.event_col)
    doc = {"kind": args.model, "config_hash": h,
           "feature_names": list(ds.feature_names)}
    if args.model == "cox":
        model = cox.fit_cox(ds)
        doc["model"] = json.loads(model.to_json())
        risks = cox.predict_risk(model, ds.features)
    elif args.model == "sxgb":
        bhp = boosting.BoostHyperparams(**hp)
        ens = boosting.fit_sxgb(ds, bhp, seed=seed)
        doc["model"] = json.loads(ens.to_json())
        risks = boosting.predict_risk(ens, ds.features)
    elif args.model == "stran":
        tcfg = transformer.TransformerConfig(seed=seed, **hp)
        params, grid = transformer.train(ds, tcfg)
        doc["model"] = {
            "config": asdict(tcfg),
            "grid": [float(b) for b in grid.boundaries],
            "params": json.loads(params.to_json()),
        }
        risks = transformer.predict_risk(params, tcfg, ds.features, grid)
    else:
        raise ValueError(f"unknown model {args.model!r}")
    doc["train_c_index"] = concordance_index(risks, ds.time, ds.event).c_index

    path = out_dir / f"model_{args.model}.json"
    _write_json(path, doc)
    print(f"wrote {path} (train C-index {doc['train_c_index']:.4f})")
    return 0


def _predict_from_doc(doc: dict, X):
    kind = doc["kind"]
    if kind == "cox":
        model = cox.CoxModel.from_json(json.dumps(doc["model"]))
        return cox.predict_risk(model, X)
    if kind == "sxgb":
        ens = boosting.TreeEnsemble.from_json(json.dumps(doc["model"]))
        return boosting.predict_risk(ens, X)
    if kind == "stran":
        m = doc["model"]
        tcfg = transformer.TransformerConfig(**m["config"])
        grid = transformer.TimeGrid(np.asarray(m["grid"], dtype=float))
        params = transformer.TransformerParams.from_json(json.dumps(m["params"]))
        return transformer.predict_risk(params, tcfg, X, grid)
    raise ValueError(f"unknown model kind {kind!r}")


def cmd_evaluate(args) -> int:
    with open(args.model_file, encoding="utf-8") as fh:
        doc = json.load(fh)
    ds = _load_dataset(args.input, args.time_col, args.event_col)
    risks = _predict_from_doc(doc, ds.features)
    res = concordance_index(risks, ds.time, ds.event)
    out = {"model_kind": doc["kind"], "c_index": res.c_index,
           "n_comparable": res.n_comparable, "n_concordant": res.n_concordant,
           "n_discordant": res.n_discordant, "n_tied_risk": res.n_tied_risk,
           "model_config_hash": doc.get("config_hash")}
    print(json.dumps(out, indent=2, sort_keys=True))
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "evaluation.json", out)
    return 0


def _model_options_from(cfg: dict, allow_out_of_box: bool) -> ModelOptions:
    sx = cfg.get("sxgb", {})
    st = cfg.get("stran", {})
    def pair_box(box):
        return {k: (float(v[0]), float(v[1])) for k, v in box.items()}
    return ModelOptions(
        sxgb_n_rounds=int(sx.get("n_rounds", 200)),
        stran_d_model=int(st.get("d_model", 32)),
        stran_n_heads=int(st.get("n_heads", 2)),
        stran_n_bins=int(st.get("n_bins", 10)),
        stran_batch_size=int(st.get("batch_size", 64)),
        sxgb_box=pair_box(sx.get("box", {})),
        stran_box=pair_box(st.get("box", {})),
        allow_out_of_box=allow_out_of_box,
    )


def cmd_montecarlo(args) -> int:
    cfg = _load_config(args.config)
    input_path = _resolve(args, cfg, "input", None)
    synth = _resolve(args, cfg, "synth", None)
    if (input_path is None) == (synth is None):
        raise ValueError("exactly one of --input and --synth is required")
    models = _resolve(args, cfg, "models", "cox")
    if isinstance(models, str):
        models = [m.strip() for m in models.split(",") if m.strip()]
    reps = int(_resolve(args, cfg, "reps", 10))
    outer_k = int(_resolve(args, cfg, "outer-k", 5))
    bayes_rounds = int(_resolve(args, cfg, "bayes-rounds", 25))
    jobs = int(_resolve(args, cfg, "jobs", 1))
    master_seed = _resolve_master_seed(args, cfg)
    allow_oob = bool(args.allow_out_of_box or cfg.get("allow_out_of_box", False))
    options = _model_options_from(cfg, allow_oob)

    select = None
    select_k = _resolve(args, cfg, "select-k", None)
    select_top = _resolve(args, cfg, "select-top", None)
    stage = _resolve(args, cfg, "select-stage", "pre-cv")
    if select_k is not None or select_top is not None:
        if select_k is None or select_top is None:
            raise ValueError("--select-k and --select-top must be given together")
        select = SelectOptions(k_neighbors=int(select_k), top=int(select_top),
                               stage=stage, seed=master_seed)

    resolved = {
        "command": "montecarlo", "input": input_path, "synth": synth,
        "synth_spec": None, "models": models, "reps": reps, "outer_k": outer_k,
        "bayes_rounds": bayes_rounds, "master_seed": master_seed,
        "select": None if select is None else
            {"k": select.k_neighbors, "top": select.top, "stage": select.stage},
        "sxgb": cfg.get("sxgb", {}), "stran": cfg.get("stran", {}),
        "allow_out_of_box": allow_oob,
    }

    if synth is not None:
        spec = _synth_spec_from(synth, cfg)
        resolved["synth_spec"] = {**asdict(spec), "beta": list(spec.beta)}
        ds = generate_synthetic(spec)
    else:
        time_col = _resolve(args, cfg, "time-col", "time")
        event_col = _resolve(args, cfg, "event-col", "event")
        resolved["time_col"] = time_col
        resolved["event_col"] = event_col
        ds = _load_dataset(input_path, time_col, event_col)

    h = config_hash(resolved)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report = monte_carlo(ds, models, reps=reps, outer_k=outer_k,
                         bayes_rounds=bayes_rounds, master_seed=master_seed,
                         jobs=jobs, select=select, options=options,
                         provenance={"config_hash": h,
                                     "resolved_config": resolved})
    _write_json(out_dir / "report.json", report.to_json_dict())
    report.write_csv(out_dir / "repetitions.csv")
    for line in report.summary_lines():
        print(line)
    n_failed = sum(1 for r in report.records if r.failed)
    if n_failed:
        print(f"{n_failed} repetition(s) failed; see report.json", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="survbench",
        description="Survival models and a reproducible nested-CV benchmark harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out-dir", default=".", help="output directory")

    p = sub.add_parser("preprocess", help="missingness filter, dummy coding, KNN imputation")
    p.add_argument("--input", required=True)
    p.add_argument("--time-col", required=True)
    p.add_argument("--event-col", required=True)
    p.add_argument("--na-string", default=None, help="missing-value sentinel (default NA)")
    p.add_argument("--missing-threshold", type=float, default=None)
    p.add_argument("--knn-k", type=int, default=None)
    add_common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("select-features", help="ReliefF scoring and top-m selection")
    p.add_argument("--input", required=True, help="preprocessed CSV")
    p.add_argument("--time-col", required=True)
    p.add_argument("--event-col", required=True)
    p.add_argument("--k", type=int, required=True, help="neighbors per class")
    p.add_argument("--top", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    add_common(p)
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("synth", help="generate Weibull proportional-hazards data")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--beta", help="comma-separated informative coefficients")
    p.add_argument("--shape", type=float, default=None)
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--censor-rate", type=float, default=None)
    p.add_argument("--nonlinear", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit one model on a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--time-col", required=True)
    p.add_argument("--event-col", required=True)
    p.add_argument("--model", required=True, choices=["cox", "sxgb", "stran"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--hyperparams", help="inline JSON or path to a JSON file")
    p.add_argument("--allow-out-of-box", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="C-index of a trained model on a dataset")
    p.add_argument("--model-file", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--time-col", required=True)
    p.add_argument("--event-col", required=True)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("montecarlo", help="repeated nested CV with mean/SD report")
    p.add_argument("--input", default=None, help="preprocessed CSV")
    p.add_argument("--synth", default=None,
                   help="'default' or a JSON file with generator settings")
    p.add_argument("--time-col", default=None)
    p.add_argument("--event-col", default=None)
    p.add_argument("--models", default=None, help="comma-separated: cox,sxgb,stran")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--outer-k", type=int, default=None)
    p.add_argument("--bayes-rounds", type=int, default=None)
    p.add_argument("--master-seed", type=int, default=None,
                   help=f"falls back to ${SEED_ENV_VAR}, then 0")
    p.add_argument("--jobs", type=int, default=None, help="parallel repetitions")
    p.add_argument("--select-k", type=int, default=None)
    p.add_argument("--select-top", type=int, default=None)
    p.add_argument("--select-stage", choices=["pre-cv", "per-fold"], default=None)
    p.add_argument("--allow-out-of-box", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_montecarlo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # structured error contract
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

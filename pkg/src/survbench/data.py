"""Tabular ingestion and the preprocessing chain.

Chain order: load_csv -> drop_high_missingness -> dummy_encode -> knn_impute
-> build_dataset. Tables are immutable values; every operation returns a new
table and leaves its input untouched.
"""

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DataError(ValueError):
    """Raised when a table or dataset violates a contract."""


@dataclass(frozen=True, eq=False)
class Column:
    name: str
    kind: str  # NUMERIC or CATEGORICAL
    values: np.ndarray  # float for numeric, object (str) for categorical
    missing: np.ndarray  # bool mask, True where the cell is missing

    def __post_init__(self):
        if len(self.values) != len(self.missing):
            raise DataError(f"column {self.name!r}: values/missing length mismatch")

    @property
    def n_missing(self) -> int:
        return int(self.missing.sum())

    @property
    def missing_fraction(self) -> float:
        return float(self.missing.mean()) if len(self.missing) else 0.0


@dataclass(frozen=True, eq=False)
class RawTable:
    """Ordered named columns with per-cell missing markers.

    ``time_col``/``event_col`` tag the outcome columns; preprocessing never
    drops or imputes them.
    """

    columns: tuple
    time_col: str | None = None
    event_col: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DataError("duplicate column names")
        lengths = {len(c.values) for c in self.columns}
        if len(lengths) > 1:
            raise DataError("columns have differing row counts")
        for tag in (self.time_col, self.event_col):
            if tag is not None and tag not in names:
                raise DataError(f"outcome column {tag!r} not present")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0].values) if self.columns else 0

    @property
    def column_names(self) -> list:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def is_outcome(self, name: str) -> bool:
        return name in (self.time_col, self.event_col)

    def feature_columns(self) -> list:
        return [c for c in self.columns if not self.is_outcome(c.name)]


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Dense numeric covariates with a (time, event) outcome per row."""

    features: np.ndarray  # (n_rows, n_features) float
    feature_names: tuple
    time: np.ndarray  # (n_rows,) non-negative months
    event: np.ndarray  # (n_rows,) int in {0, 1}

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        t = np.asarray(self.time, dtype=float)
        e = np.asarray(self.event, dtype=int)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if X.shape[0] != t.shape[0] or X.shape[0] != e.shape[0]:
            raise DataError("features/time/event row counts disagree")
        if X.shape[1] != len(self.feature_names):
            raise DataError("feature_names length mismatch")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain missing or non-finite values")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise DataError("time must be finite and non-negative")
        if not np.all((e == 0) | (e == 1)):
            raise DataError("event must be 0 or 1")
        for arr in (X, t, e):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "event", e)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def subset_rows(self, indices) -> "SurvivalDataset":
        idx = np.asarray(indices)
        return SurvivalDataset(self.features[idx], self.feature_names,
                               self.time[idx], self.event[idx])

    def with_features(self, indices) -> "SurvivalDataset":
        idx = np.asarray(indices, dtype=int)
        names = tuple(self.feature_names[i] for i in idx)
        return SurvivalDataset(self.features[:, idx], names, self.time, self.event)


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """Per-row fold index for stratified k-fold splitting."""

    fold_index: np.ndarray  # (n_rows,) int in 0..k-1
    k: int
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.where(self.fold_index == fold)[0]

    def train_rows(self, fold: int) -> np.ndarray:
        return np.where(self.fold_index != fold)[0]


def _parse_float(cell: str):
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path, time_col: str, event_col: str, na_string: str = "NA") -> RawTable:
    """Load a UTF-8, comma-delimited CSV with a header row.

    Empty cells and cells equal to ``na_string`` are treated as missing.
    A column is numeric when every observed cell parses as a float,
    categorical otherwise. The event column must contain only 0/1/missing.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty file, header row required") from None
        rows = [row for row in reader]

    header = [h.strip() for h in header]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names")
    for tag in (time_col, event_col):
        if tag not in header:
            raise DataError(f"declared outcome column {tag!r} not in header")
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i + 2} has {len(row)} cells, expected {len(header)}")

    n = len(rows)
    columns = []
    for j, name in enumerate(header):
        cells = [rows[i][j].strip() for i in range(n)]
        missing = np.array([c == "" or c == na_string for c in cells], dtype=bool)
        parsed = [None if m else _parse_float(c) for c, m in zip(cells, missing)]
        numeric = all(p is not None for p, m in zip(parsed, missing) if not m)

        if name == event_col:
            for c, p, m in zip(cells, parsed, missing):
                if not m and (p is None or p not in (0.0, 1.0)):
                    raise DataError(f"invalid event value {c!r} (expected 0/1/missing)")
            numeric = True
        if name == time_col and not numeric:
            raise DataError("time column must be numeric")

        if numeric:
            values = np.array([np.nan if m else p for p, m in zip(parsed, missing)],
                              dtype=float)
            columns.append(Column(name, NUMERIC, values, missing))
        else:
            values = np.array([("" if m else c) for c, m in zip(cells, missing)],
                              dtype=object)
            columns.append(Column(name, CATEGORICAL, values, missing))

    return RawTable(tuple(columns), time_col=time_col, event_col=event_col)


def drop_high_missingness(table: RawTable, threshold: float = 0.5) -> RawTable:
    """Drop feature columns whose missing fraction is >= threshold.

    Outcome columns are never dropped; column order is preserved. Applying
    the operation twice equals applying it once.
    """
    if not (0.0 < threshold <= 1.0):
        raise DataError("threshold must be in (0, 1]")
    kept = []
    for c in table.columns:
        if table.is_outcome(c.name) or c.missing_fraction < threshold:
            kept.append(c)
        else:
            log.info("dropping column %r (missing fraction %.3f >= %.3f)",
                     c.name, c.missing_fraction, threshold)
    return RawTable(tuple(kept), table.time_col, table.event_col)


def dummy_encode(table: RawTable) -> RawTable:
    """Replace each categorical column with L-1 indicator columns.

    The first observed level in sorted order is the reference. Missing cells
    propagate missing into every derived indicator. A single-level column
    carries no information and is removed with a warning.
    """
    out = []
    for c in table.columns:
        if c.kind != CATEGORICAL:
            out.append(c)
            continue
        levels = sorted(set(v for v, m in zip(c.values, c.missing) if not m))
        if len(levels) <= 1:
            warnings.warn(f"categorical column {c.name!r} has a single level; removed")
            continue
        for level in levels[1:]:
            vals = np.where(c.missing, np.nan,
                            (c.values == level).astype(float))
            out.append(Column(f"{c.name}={level}", NUMERIC,
                              vals.astype(float), c.missing.copy()))
    return RawTable(tuple(out), table.time_col, table.event_col)


def _standardized_features(cols) -> np.ndarray:
    """Stack feature columns as z-scores of observed cells; NaN where missing."""
    mats = []
    for c in cols:
        v = c.values.astype(float).copy()
        v[c.missing] = np.nan
        obs = v[~c.missing]
        mu = obs.mean() if obs.size else 0.0
        sd = obs.std() if obs.size else 0.0
        z = (v - mu) / sd if sd > 0 else np.where(np.isnan(v), np.nan, 0.0)
        mats.append(z)
    return np.column_stack(mats)


def knn_impute(table: RawTable, k: int = 5) -> RawTable:
    """Fill missing feature cells with the mean of the k nearest donors.

    Distance between two rows is Euclidean over the feature columns observed
    in both, each column standardized to zero mean / unit variance first.
    Donors for a cell are rows where that column is observed; ties in
    distance break toward the lower row index. Imputed values are unweighted
    means of the donors' raw values. Observed cells pass through bit-identical.
    """
    if k < 1:
        raise DataError("k must be >= 1")
    feat_cols = table.feature_columns()
    for c in table.columns:
        if c.kind != NUMERIC:
            raise DataError(
                f"knn_impute requires numeric columns; {c.name!r} is categorical "
                "(run dummy_encode first)")
    if not feat_cols or not any(c.n_missing for c in feat_cols):
        return table

    Z = _standardized_features(feat_cols)
    observed = ~np.isnan(Z)
    n = table.n_rows

    no_feature = ~observed.any(axis=1)
    if no_feature.any():
        raise DataError(f"row {int(np.where(no_feature)[0][0])} has no observed features")

    # Pairwise squared distance over mutually observed columns.
    Z0 = np.where(observed, Z, 0.0)
    sq = Z0 ** 2
    obs_f = observed.astype(float)
    cross = Z0 @ Z0.T
    a2 = sq @ obs_f.T  # sum over shared columns of z_i^2
    b2 = obs_f @ sq.T
    d2 = a2 + b2 - 2.0 * cross
    shared = obs_f @ obs_f.T
    d2 = np.where(shared > 0, np.maximum(d2, 0.0), np.inf)
    np.fill_diagonal(d2, np.inf)

    new_cols = []
    few_donors = False
    for c in table.columns:
        if table.is_outcome(c.name) or not c.missing.any():
            new_cols.append(c)
            continue
        donors_mask = ~c.missing
        vals = c.values.copy()
        for i in np.where(c.missing)[0]:
            cand = np.where(donors_mask & np.isfinite(d2[i]))[0]
            if cand.size == 0:
                raise DataError(f"no donors available for column {c.name!r}, row {i}")
            if cand.size < k:
                few_donors = True
            order = cand[np.argsort(d2[i, cand], kind="stable")]
            chosen = order[:k]
            vals[i] = float(np.mean(c.values[chosen]))
        new_cols.append(Column(c.name, NUMERIC, vals, np.zeros(n, dtype=bool)))
    if few_donors:
        warnings.warn("fewer than k donors available for some cells; used all donors")
    return RawTable(tuple(new_cols), table.time_col, table.event_col)


def drop_missing_outcome_rows(table: RawTable) -> RawTable:
    """Drop rows with a missing time or event value (outcomes are never imputed)."""
    if table.time_col is None or table.event_col is None:
        return table
    bad = table.column(table.time_col).missing | table.column(table.event_col).missing
    if not bad.any():
        return table
    keep = ~bad
    log.info("dropping %d rows with missing outcome values", int(bad.sum()))
    cols = tuple(Column(c.name, c.kind, c.values[keep], c.missing[keep])
                 for c in table.columns)
    return RawTable(cols, table.time_col, table.event_col)


def build_dataset(table: RawTable) -> SurvivalDataset:
    """Assemble a SurvivalDataset from a fully numeric, fully imputed table."""
    if table.time_col is None or table.event_col is None:
        raise DataError("table has no tagged outcome columns")
    table = drop_missing_outcome_rows(table)
    feat_cols = table.feature_columns()
    for c in table.columns:
        if c.kind != NUMERIC:
            raise DataError(f"column {c.name!r} is categorical; run dummy_encode")
    for c in feat_cols:
        if c.missing.any():
            raise DataError(f"column {c.name!r} still has missing cells; run knn_impute")
    X = (np.column_stack([c.values for c in feat_cols]).astype(float)
         if feat_cols else np.empty((table.n_rows, 0)))
    time = table.column(table.time_col).values.astype(float)
    event = table.column(table.event_col).values.astype(int)
    return SurvivalDataset(X, tuple(c.name for c in feat_cols), time, event)


def stratified_kfold(ds: SurvivalDataset, k: int, seed: int) -> FoldAssignment:
    """Assign rows to k folds, stratified on the event indicator.

    Deterministic given the seed; per-fold event counts differ by at most one.
    """
    if k < 2:
        raise DataError("k must be >= 2")
    rng = np.random.default_rng(seed)
    fold_index = np.full(ds.n_rows, -1, dtype=int)
    for label in (0, 1):
        idx = np.where(ds.event == label)[0]
        if idx.size < k:
            raise DataError(f"stratum event={label} has {idx.size} rows, fewer than k={k}")
        perm = rng.permutation(idx)
        for f, chunk in enumerate(np.array_split(perm, k)):
            fold_index[chunk] = f
    return FoldAssignment(fold_index, k=k, seed=seed)

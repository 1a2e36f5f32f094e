"""survbench: survival models and a reproducible benchmark harness."""

from .data import (
    Column,
    DataError,
    FoldAssignment,
    RawTable,
    SurvivalDataset,
    build_dataset,
    drop_high_missingness,
    dummy_encode,
    knn_impute,
    load_csv,
    stratified_kfold,
)
from .metrics import ConcordanceResult, concordance_index

__version__ = "0.1.0"

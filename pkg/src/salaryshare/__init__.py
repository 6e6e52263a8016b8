"""Salary-share prediction for basketball players.

LASSO screening of box-score statistics, random forests, and repeated
k-fold cross-validation in which every fitted quantity stays inside the
training fold.
"""

__version__ = "0.1.0"

from .data_ingest import Dataset, IngestError, StatKind, build_design_matrix, load_season  # noqa: E402
from .cv import CvConfig, CvReport, repeat_cv  # noqa: E402
from .forest import ForestConfig, fit_forest  # noqa: E402
from .lasso import lasso_fit, logistic_lasso_fit, tune_lambda_cv  # noqa: E402

__all__ = [
    "Dataset",
    "IngestError",
    "StatKind",
    "build_design_matrix",
    "load_season",
    "CvConfig",
    "CvReport",
    "repeat_cv",
    "ForestConfig",
    "fit_forest",
    "lasso_fit",
    "logistic_lasso_fit",
    "tune_lambda_cv",
]

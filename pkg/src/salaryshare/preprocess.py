"""Train-only standardization and the logit response transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = ["ScalerParams", "fit_scaler", "apply_scaler", "logit", "inv_logit"]


@dataclass(frozen=True)
class ScalerParams:
    means: np.ndarray
    sds: np.ndarray
    constant: np.ndarray  # bool per column; sd is stored as 1 for these

    def __len__(self) -> int:
        return self.means.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScalerParams):
            return NotImplemented
        return (
            np.array_equal(self.means, other.means)
            and np.array_equal(self.sds, other.sds)
            and np.array_equal(self.constant, other.constant)
        )

    __hash__ = None


def fit_scaler(train) -> ScalerParams:
    """Column means and sample (n-1) standard deviations of the training rows.

    Null cells (NaN) are ignored when computing the statistics.
    """
    X = np.asarray(train, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2-d training matrix")
    if X.shape[0] < 2:
        raise ValueError(f"need at least 2 training rows to standardize, got {X.shape[0]}")
    present = ~np.isnan(X)
    counts = present.sum(axis=0)
    means = np.where(present, X, 0.0).sum(axis=0) / np.maximum(counts, 1)
    dev = np.where(present, X - means, 0.0)
    ss = np.sum(dev * dev, axis=0)
    sds = np.where(counts > 1, np.sqrt(ss / np.maximum(counts - 1, 1)), 0.0)
    # compare extremes rather than sd: rounding leaves a tiny sd on repeated values
    hi = np.where(present, X, -np.inf).max(axis=0)
    lo = np.where(present, X, np.inf).min(axis=0)
    constant = ~(sds > 0) | ~(hi > lo)
    sds = np.where(constant, 1.0, sds)
    return ScalerParams(means=means, sds=sds, constant=constant)


def apply_scaler(matrix, params: ScalerParams) -> np.ndarray:
    """Standardize with previously fitted statistics.

    Constant columns map to 0, and so do null cells (the training mean).
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(params):
        raise ValueError(f"matrix has {X.shape[1]} columns, scaler was fitted on {len(params)}")
    Z = (X - params.means) / params.sds
    Z[:, params.constant] = 0.0
    return np.where(np.isnan(Z), 0.0, Z)


def logit(y):
    """``log(y / (1 - y))``; defined only for values strictly inside (0, 1)."""
    arr = np.asarray(y, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise ValueError("logit requires 0 < y < 1")
    out = np.log(arr) - np.log1p(-arr)
    return float(out) if out.ndim == 0 else out


def inv_logit(y_star):
    out = expit(np.asarray(y_star, dtype=float))
    return float(out) if out.ndim == 0 else out

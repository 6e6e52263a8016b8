"""Performance metrics and kernel density curves.

Regression metrics are meant to be evaluated on the share scale, i.e. after
logit-scale predictions have been passed through ``inv_logit``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "MetricValue",
    "pcc",
    "pve",
    "mse",
    "mae",
    "auc",
    "auc_pairwise",
    "KdeCurve",
    "silverman_bandwidth",
    "kde",
    "write_kde_csv",
]


@dataclass(frozen=True)
class MetricValue:
    name: str
    value: float
    n: int


def _pair(y, y_hat, min_len):
    y = np.asarray(y, dtype=float).ravel()
    y_hat = np.asarray(y_hat, dtype=float).ravel()
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} observations vs {y_hat.size} predictions")
    if y.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {y.size}")
    return y, y_hat


def pcc(y, y_hat) -> float:
    """Pearson correlation between observed and predicted values."""
    y, y_hat = _pair(y, y_hat, 2)
    dy = y - y.mean()
    dp = y_hat - y_hat.mean()
    syy = np.dot(dy, dy)
    spp = np.dot(dp, dp)
    if syy == 0.0 or spp == 0.0:
        raise ValueError("correlation undefined for a constant vector")
    r = np.dot(dy, dp) / (np.sqrt(syy) * np.sqrt(spp))
    return float(min(1.0, max(-1.0, r)))


def pve(y, y_hat) -> float:
    """Proportion of variance explained, ``1 - SSE/SST``.

    Zero for the mean prediction, negative when predictions are worse than
    the mean.
    """
    y, y_hat = _pair(y, y_hat, 2)
    dy = y - y.mean()
    sst = np.dot(dy, dy)
    if sst == 0.0:
        raise ValueError("PVE undefined for a constant response")
    res = y - y_hat
    return float(1.0 - np.dot(res, res) / sst)


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, 1)
    return float(np.mean((y - y_hat) ** 2))


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat, 1)
    return float(np.mean(np.abs(y - y_hat)))


def _binary(labels, scores):
    labels = np.asarray(labels).ravel()
    scores = np.asarray(scores, dtype=float).ravel()
    if labels.shape != scores.shape:
        raise ValueError(f"length mismatch: {labels.size} labels vs {scores.size} scores")
    pos = labels == 1
    if not np.all((labels == 0) | pos):
        raise ValueError("labels must be 0/1")
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    return pos, scores, n_pos, n_neg


def auc(labels, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum.

    Ties between a positive and a negative score count one half.
    """
    pos, scores, n_pos, n_neg = _binary(labels, scores)
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pairwise(labels, scores) -> float:
    """Quadratic pair-counting AUC; reference implementation for tests."""
    pos, scores, n_pos, n_neg = _binary(labels, scores)
    sp = scores[pos][:, None]
    sn = scores[~pos][None, :]
    wins = np.sum(sp > sn) + 0.5 * np.sum(sp == sn)
    return float(wins / (n_pos * n_neg))


@dataclass(frozen=True)
class KdeCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def silverman_bandwidth(values) -> float:
    """Silverman's rule of thumb, ``0.9 * min(sd, IQR/1.34) * n^(-1/5)``.

    Degenerate samples (zero spread) fall back to the non-zero spread measure,
    then to 1.
    """
    x = np.asarray(values, dtype=float).ravel()
    n = x.size
    sd = x.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = (q75 - q25) / 1.34
    spread = min(s for s in (sd, iqr) if s > 0) if (sd > 0 or iqr > 0) else 1.0
    return float(0.9 * spread * n ** (-0.2))


def kde(values, bandwidth="auto", grid=None, n_grid: int = 512) -> KdeCurve:
    """Gaussian kernel density estimate evaluated on ``grid``.

    Without a grid, 512 points spanning the data plus four bandwidths on each
    side are used.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("kde needs at least one value")
    if isinstance(bandwidth, str):
        if bandwidth != "auto":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        h = silverman_bandwidth(x)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    if grid is None:
        grid = np.linspace(x.min() - 4 * h, x.max() + 4 * h, n_grid)
    grid = np.asarray(grid, dtype=float)
    dens = np.zeros_like(grid)
    # chunked to bound memory for large samples
    for start in range(0, x.size, 2048):
        z = (grid[:, None] - x[None, start:start + 2048]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * np.sqrt(2 * np.pi)
    return KdeCurve(grid=grid, density=dens, bandwidth=h)


def write_kde_csv(curve: KdeCurve, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grid", "density"])
        for g, d in zip(curve.grid, curve.density):
            w.writerow([repr(float(g)), repr(float(d))])

"""Synthetic data, season-ahead validation and the internal-evaluation demonstrations."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluation
from .cv import CvConfig, _lasso_stage, derive_seed, resolve_mtry
from .data_ingest import Dataset
from .folds import make_folds
from .forest import CLASSIFICATION, REGRESSION, ForestConfig, fit_forest
from .preprocess import ScalerParams, apply_scaler, fit_scaler, inv_logit

__all__ = [
    "SyntheticSpec",
    "SyntheticData",
    "synthetic_generate",
    "SeasonAheadResult",
    "season_ahead_validation",
    "DemoResult",
    "leakage_demo",
    "InternalResult",
    "internal_evaluation",
]


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    p: int
    support: tuple[int, ...] = ()
    form: str = "linear"  # or "nonlinear"
    noise_sd: float = 1.0
    seed: int = 0
    weights: tuple[float, ...] | None = None
    scale: str = "raw"  # "share": response = inv_logit(offset + signal + noise)
    offset: float = -3.0
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if len(self.support) > self.p or any(not 0 <= j < self.p for j in self.support):
            raise ValueError("support must be a subset of range(p)")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support indices must be distinct")
        if self.weights is not None and len(self.weights) != len(self.support):
            raise ValueError("one weight per support feature")
        if self.form not in ("linear", "nonlinear"):
            raise ValueError(f"unknown form {self.form!r}")
        if self.scale not in ("raw", "share"):
            raise ValueError(f"unknown scale {self.scale!r}")


@dataclass(frozen=True)
class SyntheticData:
    dataset: Dataset
    support: tuple[int, ...]
    signal: np.ndarray  # noiseless latent response
    latent: np.ndarray  # signal + noise, before any share transform


# Component shapes for the nonlinear form, cycled over the support. Each has
# a monotone trend (so a linear screen can find it) plus a nonlinearity.
_SHAPES = (
    lambda x: np.where(x > 0.0, 1.0, -1.0),
    lambda x: np.tanh(3.0 * x),
    lambda x: 1.5 * np.sin(1.5 * x),
    lambda x: 2.0 * np.maximum(x, 0.0) - 2.0 / math.sqrt(2.0 * math.pi),
    lambda x: np.exp(0.8 * x) - math.exp(0.32),
)


def synthetic_generate(spec: SyntheticSpec) -> SyntheticData:
    """Standard normal predictors with a response driven by the support columns only."""
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n, spec.p))
    weights = spec.weights if spec.weights is not None else (1.0,) * len(spec.support)
    signal = np.zeros(spec.n)
    for i, (j, w) in enumerate(zip(spec.support, weights)):
        if spec.form == "linear":
            signal += w * X[:, j]
        else:
            signal += w * _SHAPES[i % len(_SHAPES)](X[:, j])
    latent = signal + spec.noise_sd * rng.standard_normal(spec.n)
    y = inv_logit(spec.offset + latent) if spec.scale == "share" else latent
    names = spec.feature_names or tuple(f"x{j + 1}" for j in range(spec.p))
    ds = Dataset(X=X, y=np.asarray(y, dtype=float), feature_names=tuple(names), task=REGRESSION,
                 kind=f"synthetic-{spec.form}")
    return SyntheticData(ds, tuple(spec.support), signal, latent)


# ---------------------------------------------------------------- season-ahead


@dataclass(frozen=True)
class SeasonAheadResult:
    metrics: dict
    predictions: np.ndarray
    scaler: ScalerParams
    forest_digest: str
    features: tuple[str, ...]


def season_ahead_validation(train: Dataset, test: Dataset, selected_features,
                            forest_config: ForestConfig = ForestConfig(),
                            task: str | None = None) -> SeasonAheadResult:
    """Fit on all of season t, predict season t+1.

    Standardization and the forest use season t only; season t+1 enters
    nothing but the final prediction. Regression returns PVE and PCC,
    classification AUC.
    """
    task = task or train.task
    features = list(selected_features) or list(train.feature_names)
    missing = [f for f in features if f not in test.feature_names]
    if missing:
        raise KeyError(f"selected columns absent from the validation season: {', '.join(missing)}")
    tr = train.select(features)
    te = test.select(features)
    scaler = fit_scaler(tr.X)
    Xtr = apply_scaler(tr.X, scaler)
    Xte = apply_scaler(te.X, scaler)
    forest = fit_forest(Xtr, tr.y, forest_config, task, features)
    pred = forest.predict(Xte)
    if task == REGRESSION:
        metrics = {"PVE": evaluation.pve(te.y, pred), "PCC": evaluation.pcc(te.y, pred)}
    else:
        metrics = {"AUC": evaluation.auc(te.y, pred)}
    metrics["n_train"] = tr.n
    metrics["n_test"] = te.n
    return SeasonAheadResult(metrics, pred, scaler, forest.digest(), tuple(features))


# ---------------------------------------------------------------- internal evaluation


@dataclass(frozen=True)
class InternalResult:
    """Scores of models evaluated on the very data they were fitted to."""

    labels: tuple
    forest_pve: tuple[float, ...]
    forest_pcc: tuple[float, ...]
    lasso_pve: float | None
    selected: tuple[str, ...]

    @property
    def best_forest_pve(self) -> float:
        return max(self.forest_pve)


def internal_evaluation(dataset: Dataset, config: CvConfig) -> InternalResult:
    """The flawed protocol: standardize everything, select, fit and score on the same rows.

    Kept so its optimism can be measured against ``repeat_cv``.
    """
    scaler = fit_scaler(dataset.X)
    X = apply_scaler(dataset.X, scaler)
    y = dataset.y
    names = dataset.feature_names
    cols = list(range(dataset.p))
    lasso_pve = None
    if config.use_lasso_selection:
        sel, _, fit, _ = _lasso_stage(X, y, names, config, derive_seed(config.master_seed, 0, 0, 0))
        if fit is not None and config.task == REGRESSION:
            lasso_pve = evaluation.pve(y, inv_logit(fit.decision_function(X)))
        if sel:
            cols = sel
    Xs = np.ascontiguousarray(X[:, cols])
    pves, pccs = [], []
    for entry in config.mtry_grid:
        cfg = replace(config.forest, mtry=resolve_mtry(entry, len(cols)),
                      seed=derive_seed(config.master_seed, 0, 0, 1))
        pred = fit_forest(Xs, y, cfg, config.task).predict(Xs)
        pves.append(evaluation.pve(y, pred))
        pccs.append(evaluation.pcc(y, pred))
    return InternalResult(tuple(config.mtry_grid), tuple(pves), tuple(pccs), lasso_pve,
                          tuple(names[j] for j in cols))


# ---------------------------------------------------------------- complexity demo


@dataclass
class DemoResult:
    levels: list
    internal_pcc: list = field(default_factory=list)
    external_pve: list = field(default_factory=list)
    seed: int = 0

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "internal_pcc", "external_pve"])
            for row in zip(self.levels, self.internal_pcc, self.external_pve):
                w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])

    def to_markdown(self) -> str:
        lines = [
            "# Internal vs external evaluation on pure noise",
            "",
            f"seed {self.seed}; model complexity = maximum tree depth",
            "",
            "| depth | internal PCC | external PVE |",
            "|---|---|---|",
        ]
        for lv, a, b in zip(self.levels, self.internal_pcc, self.external_pve):
            lines.append(f"| {lv} | {a:.3f} | {b:.3f} |")
        return "\n".join(lines) + "\n"


def leakage_demo(n: int = 400, p: int = 20, complexity_levels=tuple(range(1, 13)), seed: int = 12345,
                 n_trees: int = 100, k: int = 10) -> DemoResult:
    """Fit ever deeper forests to noise and score them internally and by k-fold CV.

    Predictors and response are independent standard normals, so any
    apparent fit is overfitting. Internal PCC compares fitted values with the
    training response; external PVE uses held-out predictions.
    """
    levels = list(complexity_levels)
    if not levels:
        raise ValueError("complexity_levels must not be empty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("complexity_levels must be increasing")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    folds = make_folds(n, k, np.random.default_rng(derive_seed(seed, 1)))
    out = DemoResult(levels=levels, seed=seed)
    mtry = max(1, math.ceil(p / 3))
    for level in levels:
        cfg = ForestConfig(n_trees=n_trees, mtry=mtry, min_leaf=1, max_depth=int(level),
                           seed=derive_seed(seed, 2, int(level)))
        fitted = fit_forest(X, y, cfg).predict(X)
        out.internal_pcc.append(evaluation.pcc(y, fitted))
        held = np.empty(n)
        for f in range(k):
            tr, te = folds.train_indices(f), folds.test_indices(f)
            held[te] = fit_forest(X[tr], y[tr], cfg).predict(X[te])
        out.external_pve.append(evaluation.pve(y, held))
    return out

"""Repeated k-fold cross-validation with every fitted quantity kept inside the training fold.

Per fold the order is fixed: standardize with training statistics, tune the
LASSO penalty by an inner CV on the training fold, keep the selected
columns, grow one forest per ``mtry`` value, predict the held-out fold.
Held-out predictions fill an ``n x M`` matrix (one column per ``mtry``),
which is scored once per repetition.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import evaluation
from .data_ingest import Dataset
from .folds import FoldAssignment, make_folds
from .forest import CLASSIFICATION, REGRESSION, ForestConfig, fit_forest
from .lasso import LOGISTIC, SQUARED, lambda_grid, lasso_path, tune_lambda_cv
from .preprocess import ScalerParams, apply_scaler, fit_scaler, inv_logit, logit

__all__ = [
    "FoldAssignment",
    "make_folds",
    "LassoSettings",
    "CvConfig",
    "FoldResult",
    "PredictionMatrix",
    "CvRun",
    "CvReport",
    "resolve_mtry",
    "run_fold",
    "run_cv",
    "select_hyperparameter",
    "repeat_cv",
    "derive_seed",
]

log = logging.getLogger(__name__)

# listed in increasing order for p >= 9, so first-index tie-breaking favours smaller mtry
MTRY_RULES = ("1", "sqrt(p)", "p/3", "p/2", "p")
Z95 = 1.959963984540054


@dataclass(frozen=True)
class LassoSettings:
    inner_k: int = 10
    n_lambda: int = 100
    ratio: float = 1e-3


@dataclass(frozen=True)
class CvConfig:
    k: int = 10
    repetitions: int = 50
    mtry_grid: tuple = MTRY_RULES
    task: str = REGRESSION
    use_lasso_selection: bool = True
    master_seed: int = 0
    lasso: LassoSettings = field(default_factory=LassoSettings)
    forest: ForestConfig = field(default_factory=ForestConfig)
    selection_threshold: float = 0.5
    threads: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be at least 2, got {self.k}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be at least 1, got {self.repetitions}")
        if not self.mtry_grid:
            raise ValueError("mtry_grid must not be empty")
        for m in self.mtry_grid:
            if not (m in MTRY_RULES or (isinstance(m, (int, np.integer)) and m >= 1)):
                raise ValueError(f"mtry grid entries must be positive integers or one of {MTRY_RULES}, got {m!r}")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def metric(self) -> str:
        return "PVE" if self.task == REGRESSION else "AUC"

    def to_dict(self) -> dict:
        """Everything that influences results; worker count is left out on purpose."""
        d = asdict(self)
        d.pop("threads")
        d["mtry_grid"] = [m if isinstance(m, str) else int(m) for m in self.mtry_grid]
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def resolve_mtry(entry, p: int) -> int:
    """Concrete ``mtry`` for ``p`` available features; integers are capped at ``p``."""
    if entry == "1":
        return 1
    if entry == "p/3":
        return max(1, math.ceil(p / 3))
    if entry == "sqrt(p)":
        return max(1, math.ceil(math.sqrt(p)))
    if entry == "p/2":
        return max(1, math.ceil(p / 2))
    if entry == "p":
        return p
    return min(int(entry), p)


def derive_seed(master_seed: int, *key: int) -> int:
    """Deterministic 63-bit seed for the stream identified by ``key``."""
    state = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


# stream purposes under (repetition, fold)
_INNER_CV, _FOREST = 0, 1


@dataclass(frozen=True)
class FoldResult:
    predictions: np.ndarray  # (n_test, M)
    selected: tuple[str, ...]
    fallback: bool
    lam: float | None
    scaler: ScalerParams
    forest_digests: tuple[str, ...]
    mtry_values: tuple[int, ...]
    lasso_predictions: np.ndarray | None = None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class PredictionMatrix:
    values: np.ndarray  # (n, M)
    labels: tuple

    @property
    def M(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CvRun:
    repetition: int
    folds: FoldAssignment
    matrix: PredictionMatrix
    fold_results: tuple[FoldResult, ...]
    lasso_predictions: np.ndarray | None


def _lasso_stage(Xtr, ytr, names, config: CvConfig, seed: int):
    """Tune and fit the LASSO on a standardized training fold.

    Returns ``(selected indices, lambda, fit or None, notes)``.
    """
    s = config.lasso
    notes = []
    if config.task == REGRESSION:
        loss, target = SQUARED, logit(ytr)
    else:
        loss, target = LOGISTIC, ytr
        if ytr.min() == ytr.max():
            return None, None, None, ["single-class training fold: LASSO skipped"]
    grid = lambda_grid(Xtr, target, s.n_lambda, s.ratio, loss)
    inner_k = min(s.inner_k, ytr.size)
    lam, errors = tune_lambda_cv(Xtr, target, inner_k, grid, np.random.default_rng(seed), loss)
    best = int(np.flatnonzero(grid.values == lam)[0])
    fits = lasso_path(Xtr, target, grid.values[: best + 1], loss, names)
    if len(fits) < best + 1:
        notes.append(f"logistic path separated before lambda={lam:g}; used lambda={fits[-1].lam:g}")
    fit = fits[-1]
    return sorted(fit.selected), fit.lam, fit, notes


def run_fold(train: Dataset, test: Dataset, config: CvConfig, seed_key: tuple = (0, 0)) -> FoldResult:
    """Fit everything on ``train`` and predict ``test`` for each ``mtry`` value.

    Regression forests are trained on the share scale, so their predictions
    are shares; the LASSO itself works on the logit scale. If the LASSO keeps
    no feature, the fold falls back to all features and says so in
    ``fallback``.
    """
    if train.feature_names != test.feature_names:
        raise ValueError("train and test folds have different columns")
    scaler = fit_scaler(train.X)
    Xtr = apply_scaler(train.X, scaler)
    Xte = apply_scaler(test.X, scaler)
    names = train.feature_names
    ytr = np.asarray(train.y, dtype=float)

    cols = list(range(len(names)))
    lam = None
    fallback = False
    lasso_pred = None
    notes: tuple[str, ...] = ()
    if config.use_lasso_selection:
        sel, lam, fit, nl = _lasso_stage(Xtr, ytr, names, config, derive_seed(config.master_seed, *seed_key, _INNER_CV))
        notes = tuple(nl)
        if fit is not None:
            # share scale for regression, class-1 probability for classification
            lasso_pred = np.atleast_1d(inv_logit(fit.decision_function(Xte)))
        if sel:
            cols = sel
        else:
            fallback = True
            log.info("fold %s: LASSO selected nothing, using all %d features", seed_key, len(names))

    Xtr_s = np.ascontiguousarray(Xtr[:, cols])
    Xte_s = np.ascontiguousarray(Xte[:, cols])
    forest_seed = derive_seed(config.master_seed, *seed_key, _FOREST)
    preds = np.empty((test.n, len(config.mtry_grid)))
    digests = []
    mtrys = []
    cache = {}
    for m_idx, entry in enumerate(config.mtry_grid):
        mtry = resolve_mtry(entry, len(cols))
        if mtry not in cache:
            cfg = replace(config.forest, mtry=mtry, seed=forest_seed)
            forest = fit_forest(Xtr_s, ytr, cfg, config.task, [names[j] for j in cols])
            cache[mtry] = (forest.predict(Xte_s), forest.digest())
        preds[:, m_idx], d = cache[mtry]
        digests.append(d)
        mtrys.append(mtry)
    return FoldResult(
        predictions=preds,
        selected=tuple(names[j] for j in cols) if not fallback and config.use_lasso_selection else (),
        fallback=fallback,
        lam=lam,
        scaler=scaler,
        forest_digests=tuple(digests),
        mtry_values=tuple(mtrys),
        lasso_predictions=lasso_pred,
        notes=notes,
    )


TestHook = Callable[[Dataset], Dataset]


def _fold_job(dataset, folds, f, config, rep, test_hook):
    train = dataset.subset(folds.train_indices(f))
    test = dataset.subset(folds.test_indices(f))
    if test_hook is not None:
        test = test_hook(test)
    return run_fold(train, test, config, (rep, f + 1))


def _partition(dataset: Dataset, config: CvConfig, rep: int) -> FoldAssignment:
    return make_folds(dataset.n, config.k, np.random.default_rng(derive_seed(config.master_seed, rep)))


def _assemble(dataset, config, rep, folds, results) -> CvRun:
    values = np.full((dataset.n, len(config.mtry_grid)), np.nan)
    lasso = np.full(dataset.n, np.nan) if config.use_lasso_selection else None
    for f, res in enumerate(results):
        idx = folds.test_indices(f)
        values[idx] = res.predictions
        if lasso is not None and res.lasso_predictions is not None:
            lasso[idx] = res.lasso_predictions
    if np.isnan(values).any():
        raise RuntimeError("prediction matrix has unfilled entries")
    return CvRun(rep, folds, PredictionMatrix(values, tuple(config.mtry_grid)), tuple(results), lasso)


def _map(fn, jobs, threads):
    if threads <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda j: fn(*j), jobs))


def run_cv(dataset: Dataset, config: CvConfig, repetition_seed: int = 0,
           test_hook: TestHook | None = None) -> CvRun:
    """One k-fold pass: every sample is predicted exactly once per ``mtry`` value.

    ``test_hook`` may rewrite each held-out fold before it reaches
    ``run_fold``; it exists so tests can show that nothing fitted depends on
    held-out values.
    """
    folds = _partition(dataset, config, repetition_seed)
    jobs = [(dataset, folds, f, config, repetition_seed, test_hook) for f in range(config.k)]
    results = _map(_fold_job, jobs, config.threads)
    return _assemble(dataset, config, repetition_seed, folds, results)


def _safe(metric, y, pred) -> float:
    try:
        return metric(y, pred)
    except ValueError:
        return float("nan")


def metric_values(matrix: PredictionMatrix | np.ndarray, y, metric: str) -> np.ndarray:
    values = matrix.values if isinstance(matrix, PredictionMatrix) else np.asarray(matrix)
    fn = {"PVE": evaluation.pve, "PCC": evaluation.pcc, "AUC": evaluation.auc}[metric]
    return np.array([_safe(fn, y, values[:, m]) for m in range(values.shape[1])])


def select_hyperparameter(matrix, y, metric: str = "PVE") -> tuple[int, np.ndarray]:
    """Column with the best metric; ties and NaNs resolve toward the first (smallest) entry."""
    vals = metric_values(matrix, y, metric)
    if np.all(np.isnan(vals)):
        return 0, vals
    return int(np.nanargmax(vals)), vals


def _summary(values: np.ndarray) -> dict:
    """Mean, sd and normal-approximation 95% interval over repetitions (axis 0)."""
    R = values.shape[0]
    # an undefined metric (constant predictions) gives NaN entries; keep them quiet
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(values, axis=0)
        sd = np.nanstd(values, axis=0, ddof=1) if R > 1 else np.zeros_like(mean)
        half = Z95 * sd / math.sqrt(R)
        lo, hi = np.nanmin(values, axis=0), np.nanmax(values, axis=0)
    return {
        "mean": mean.tolist(),
        "sd": sd.tolist(),
        "ci_low": (mean - half).tolist(),
        "ci_high": (mean + half).tolist(),
        "min": lo.tolist(),
        "max": hi.tolist(),
    }


@dataclass
class CvReport:
    config: dict
    config_hash: str
    n: int
    p: int
    feature_names: list
    labels: list
    metrics: dict  # metric -> summary over repetitions, one entry per hyperparameter
    per_repetition: dict  # metric -> R x M list
    best_per_repetition: list
    best_index: int
    selection_counts: dict
    selection_frequency: dict
    most_important: list
    n_fits: int
    fallbacks: int
    notes: list
    lasso_metrics: dict | None = None
    degenerate_ci: bool = False
    dataset: dict = field(default_factory=dict)

    @property
    def metric(self) -> str:
        return "PVE" if self.config["task"] == REGRESSION else "AUC"

    def mean(self, metric: str | None = None) -> float:
        """Mean over repetitions of the metric at the best hyperparameter."""
        return self.metrics[metric or self.metric]["mean"][self.best_index]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True)

    def to_markdown(self) -> str:
        lines = [
            f"# Cross-validation report ({self.config['task']})",
            "",
            f"- dataset: {self.dataset.get('kind', '')} {self.dataset.get('season', '')} (n={self.n}, p={self.p})",
            f"- k={self.config['k']}, repetitions={self.config['repetitions']}, "
            f"LASSO selection={'on' if self.config['use_lasso_selection'] else 'off'}",
            f"- trees={self.config['forest']['n_trees']}, master seed={self.config['master_seed']}, "
            f"config hash={self.config_hash}",
            "",
            "| mtry | " + " | ".join(f"{m} mean [95% CI]" for m in self.metrics) + " |",
            "|---|" + "---|" * len(self.metrics),
        ]
        for i, label in enumerate(self.labels):
            cells = []
            for m, s in self.metrics.items():
                cells.append(f"{s['mean'][i]:.3f} [{s['ci_low'][i]:.3f}, {s['ci_high'][i]:.3f}]")
            mark = " (best)" if i == self.best_index else ""
            lines.append(f"| {label}{mark} | " + " | ".join(cells) + " |")
        if self.lasso_metrics:
            lines += ["", "LASSO alone: " + ", ".join(
                f"{m} {s['mean'][0]:.3f} [{s['ci_low'][0]:.3f}, {s['ci_high'][0]:.3f}]"
                for m, s in self.lasso_metrics.items())]
        if self.config["use_lasso_selection"]:
            lines += ["", f"## Selection frequency over {self.n_fits} training fits", "",
                      "| feature | frequency |", "|---|---|"]
            for name, freq in sorted(self.selection_frequency.items(), key=lambda kv: (-kv[1], kv[0])):
                if freq > 0:
                    lines.append(f"| {name} | {freq:.3f} |")
            lines += ["", "Most important: " + (", ".join(self.most_important) or "none")]
            if self.fallbacks:
                lines.append(f"Folds that fell back to all features: {self.fallbacks}")
        if self.degenerate_ci:
            lines += ["", "Single repetition: intervals collapse to the point estimate."]
        return "\n".join(lines) + "\n"


def repeat_cv(dataset: Dataset, config: CvConfig, test_hook: TestHook | None = None,
              return_runs: bool = False):
    """Run ``config.repetitions`` independent k-fold passes and aggregate them.

    Each repetition gets its own partition; the fold jobs of all repetitions
    are distributed over ``config.threads`` workers. Results do not depend on
    the number of workers.
    """
    R = config.repetitions
    partitions = [_partition(dataset, config, r) for r in range(R)]
    jobs = [(dataset, partitions[r], f, config, r, test_hook) for r in range(R) for f in range(config.k)]
    results = _map(_fold_job, jobs, config.threads)
    runs = [
        _assemble(dataset, config, r, partitions[r], results[r * config.k:(r + 1) * config.k])
        for r in range(R)
    ]

    y = dataset.y
    names = ["PVE", "PCC"] if config.task == REGRESSION else ["AUC"]
    per_rep = {m: np.array([metric_values(run.matrix, y, m) for run in runs]) for m in names}
    primary = per_rep[config.metric]
    best_per_rep = [int(np.nanargmax(row)) if not np.all(np.isnan(row)) else 0 for row in primary]
    summaries = {m: _summary(v) for m, v in per_rep.items()}
    means = np.array(summaries[config.metric]["mean"], dtype=float)
    best_index = int(np.nanargmax(means)) if not np.all(np.isnan(means)) else 0

    counts = {n: 0 for n in dataset.feature_names}
    fallbacks = 0
    notes = []
    for res in results:
        for n in res.selected:
            counts[n] += 1
        fallbacks += res.fallback
        notes.extend(res.notes)
    n_fits = R * config.k
    freq = {n: c / n_fits for n, c in counts.items()}
    important = [n for n, f in sorted(freq.items(), key=lambda kv: (-kv[1], dataset.feature_names.index(kv[0])))
                 if f > config.selection_threshold] if config.use_lasso_selection else []

    lasso_metrics = None
    if config.use_lasso_selection and all(run.lasso_predictions is not None for run in runs):
        lm = {}
        for m in names:
            fn = {"PVE": evaluation.pve, "PCC": evaluation.pcc, "AUC": evaluation.auc}[m]
            vals = np.array([[_safe(fn, y, run.lasso_predictions)] for run in runs])
            lm[m] = _summary(vals)
        lasso_metrics = lm

    report = CvReport(
        config=config.to_dict(),
        config_hash=config.digest(),
        n=dataset.n,
        p=dataset.p,
        feature_names=list(dataset.feature_names),
        labels=[str(m) for m in config.mtry_grid],
        metrics=summaries,
        per_repetition={m: v.tolist() for m, v in per_rep.items()},
        best_per_repetition=best_per_rep,
        best_index=best_index,
        selection_counts=counts,
        selection_frequency=freq,
        most_important=important,
        n_fits=n_fits,
        fallbacks=int(fallbacks),
        notes=notes,
        lasso_metrics=lasso_metrics,
        degenerate_ci=R == 1,
        dataset={"season": dataset.season, "kind": dataset.kind, "task": dataset.task},
    )
    return (report, runs) if return_runs else report

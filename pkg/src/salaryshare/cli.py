"""Command-line entry point: ``salaryshare <command> [options]``.

Commands read season directories (one subdirectory per season holding
``stats_<kind>.csv``, ``salaries.csv``, ``payrolls.csv`` and
``experience.csv``) and write machine-readable and markdown reports into
``--out``. Options may also come from a JSON file given with ``--config``;
flags on the command line take precedence.

Exit status is 0 on success, 1 when a computation fails and 2 for bad input
or configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, evaluation
from .cv import MTRY_RULES, CvConfig, LassoSettings, _lasso_stage, derive_seed, repeat_cv
from .data_ingest import (
    SHARE_THRESHOLD,
    IngestError,
    StatKind,
    build_design_matrix,
    load_season,
    write_records_csv,
)
from .experiments import leakage_demo, season_ahead_validation
from .fixture import bundled_fixture_dir
from .forest import CLASSIFICATION, REGRESSION, ForestConfig
from .lasso import ConvergenceError
from .preprocess import apply_scaler, fit_scaler

log = logging.getLogger("salaryshare")

DATA_ENV = "SALARYSHARE_DATA_DIR"
KINDS = tuple(k.value for k in StatKind)
KIND_LABELS = {
    "per-game": "Per game",
    "per-36": "Per 36 minutes",
    "per-100": "Per 100 possessions",
    "advanced": "Advanced statistics",
}
# share bands of the class-count table; the last band is open above
SHARE_BANDS = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25)


class UsageError(Exception):
    """Invalid configuration or missing input; maps to exit status 2."""


@dataclass
class RunConfig:
    command: str
    data_dir: str
    seasons: list
    kinds: list
    out: str
    seed: int = 0
    k: int = 10
    reps: int = 50
    trees: int = 500
    mtry_grid: list = field(default_factory=lambda: list(MTRY_RULES))
    lasso: bool = True
    threads: int = 1
    min_games: int = 10
    levels: list = field(default_factory=lambda: list(range(1, 13)))
    n: int = 400
    p: int = 20
    task: str = REGRESSION
    features: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("threads")
        d.pop("out")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def cv_config(self, task: str, use_lasso: bool) -> CvConfig:
        try:
            return CvConfig(
                k=self.k, repetitions=self.reps, mtry_grid=tuple(self.mtry_grid), task=task,
                use_lasso_selection=use_lasso, master_seed=self.seed, lasso=LassoSettings(),
                forest=ForestConfig(n_trees=self.trees), threads=self.threads,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------- configuration


_DEFAULTS = {
    "k": 10, "reps": 50, "trees": 500, "seed": 0, "threads": 1, "min_games": 10,
    "mtry_grid": ",".join(MTRY_RULES), "levels": "1-12", "n": 400, "p": 20,
    "out": "salaryshare-out", "task": REGRESSION,
}
_INT_KEYS = ("k", "reps", "trees", "seed", "threads", "min_games", "n", "p")


def _split(value) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        out = []
        for v in value:
            out.extend(_split(v))
        return out
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _parse_mtry(value) -> list:
    out = []
    for item in _split(value):
        if item in MTRY_RULES:
            out.append(item)
            continue
        try:
            m = int(item)
        except ValueError:
            raise UsageError(f"--mtry-grid entries must be integers or one of {', '.join(MTRY_RULES)}: {item!r}")
        if m < 1:
            raise UsageError(f"--mtry-grid entries must be positive, got {m}")
        out.append(m)
    if not out:
        raise UsageError("--mtry-grid is empty")
    return out


def _parse_levels(value) -> list:
    out = []
    for item in _split(value):
        try:
            if "-" in item[1:]:
                a, b = item.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(item))
        except ValueError:
            raise UsageError(f"bad complexity level {item!r}")
    if not out or any(b <= a for a, b in zip(out, out[1:])) or out[0] < 1:
        raise UsageError("--levels must be increasing positive integers")
    return out


def _discover_seasons(data_dir: Path) -> list:
    if not data_dir.is_dir():
        raise UsageError(f"data directory not found: {data_dir}")
    seasons = sorted(p.name for p in data_dir.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not seasons:
        raise UsageError(f"no season directories under {data_dir}")
    return seasons


def _load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge built-in defaults, the optional config file and command-line flags."""
    file_cfg = _load_config_file(args.config) if args.config else {}
    if "no_lasso" in file_cfg:
        file_cfg["lasso"] = not bool(file_cfg.pop("no_lasso"))
    skip = ("config", "command", "verbose", "no_lasso")
    flag_cfg = {k: v for k, v in vars(args).items() if v is not None and k not in skip}
    if getattr(args, "no_lasso", None):
        flag_cfg["lasso"] = False
    defaults = dict(_DEFAULTS)
    if args.command == "demo-overfit":
        defaults["trees"] = 100
    merged = {**defaults, **file_cfg, **flag_cfg}

    for key in _INT_KEYS:
        try:
            merged[key] = int(merged[key])
        except (TypeError, ValueError):
            raise UsageError(f"{key} must be an integer, got {merged[key]!r}")
    if merged["threads"] < 1:
        raise UsageError("--threads must be at least 1")
    if merged["trees"] < 1:
        raise UsageError("--trees must be at least 1")
    if merged["task"] not in (REGRESSION, CLASSIFICATION):
        raise UsageError(f"unknown task {merged['task']!r}")

    data_dir = Path(merged.get("data_dir") or os.environ.get(DATA_ENV) or bundled_fixture_dir())
    seasons = _split(merged.get("season"))
    if args.command != "demo-overfit" and not seasons:
        seasons = _discover_seasons(data_dir)
    kinds = _split(merged.get("kind"))
    if not kinds:
        kinds = ["per-game"] if args.command in ("clean", "validate", "density") else list(KINDS)
    for kd in kinds:
        if kd not in KINDS:
            raise UsageError(f"unknown statistics kind {kd!r}; expected one of {', '.join(KINDS)}")

    return RunConfig(
        command=args.command,
        data_dir=str(data_dir),
        seasons=seasons,
        kinds=kinds,
        out=str(merged["out"]),
        seed=merged["seed"],
        k=merged["k"],
        reps=merged["reps"],
        trees=merged["trees"],
        mtry_grid=_parse_mtry(merged["mtry_grid"]),
        lasso=bool(merged.get("lasso", True)),
        threads=merged["threads"],
        min_games=merged["min_games"],
        levels=_parse_levels(merged["levels"]),
        n=merged["n"],
        p=merged["p"],
        task=merged["task"],
        features=_split(merged.get("features")),
    )


# ---------------------------------------------------------------- output helpers


def _stamp(cfg: RunConfig) -> str:
    return f"config {cfg.digest()} seed {cfg.seed}"


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _write_json(path: Path, cfg: RunConfig, payload: dict) -> None:
    doc = {"config": cfg.to_dict(), "config_hash": cfg.digest(), "seed": cfg.seed,
           "version": __version__, **payload}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, cfg: RunConfig, header, rows) -> None:
    """CSV whose first line is a ``#`` comment carrying the config hash and seed."""
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_stamp(cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_stamped_csv(path) -> tuple[list, list]:
    """Read back a CSV written by this tool; returns ``(header, rows)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _season_dir(cfg: RunConfig, season: str) -> Path:
    d = Path(cfg.data_dir) / season
    if not d.is_dir():
        raise UsageError(f"season directory not found: {d}")
    return d


def _load(cfg: RunConfig, season: str, kind: str):
    return load_season(_season_dir(cfg, season), season, kind, cfg.min_games)


# ---------------------------------------------------------------- commands


def cmd_clean(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    summary = {}
    for season in cfg.seasons:
        for kind in cfg.kinds:
            records, counts = _load(cfg, season, kind)
            stem = f"cleaned_{season}_{kind}"
            tmp = out / f"{stem}.csv.tmp"
            write_records_csv(records, tmp)
            body = tmp.read_text(encoding="utf-8")
            tmp.unlink()
            _write_text(out / f"{stem}.csv", f"# {_stamp(cfg)}\n" + body)
            _write_text(out / f"cleaning_log_{season}_{kind}.txt", f"# {_stamp(cfg)}\n" + counts.to_text())
            summary[f"{season}/{kind}"] = asdict(counts)
            print(f"{season} {kind}: {len(records)} records")
    _write_json(out / "clean_summary.json", cfg, {"datasets": summary})
    return 0


def _two_block_table(title, cfg, cells, metric) -> str:
    """Rows are statistics kinds; a With LASSO block and a Without LASSO block of season columns."""
    seasons = cfg.seasons
    head = ["Dataset"] + [f"{s} (with LASSO)" for s in seasons] + [f"{s} (without LASSO)" for s in seasons]
    lines = [f"# {title}", "", f"{_stamp(cfg)}; k={cfg.k}, repetitions={cfg.reps}, trees={cfg.trees}", "",
             "| " + " | ".join(head) + " |", "|---" * len(head) + "|"]
    for kind in cfg.kinds:
        row = [KIND_LABELS[kind]]
        for use in (True, False):
            for s in seasons:
                rep = cells.get((s, kind, use))
                row.append("-" if rep is None else f"{rep.mean(metric):.3f}")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def _selection_table(title, cfg, cells) -> str:
    lines = [f"# {title}", "", _stamp(cfg), "",
             "| Dataset | " + " | ".join(cfg.seasons) + " |", "|---" * (len(cfg.seasons) + 1) + "|"]
    for kind in cfg.kinds:
        row = [KIND_LABELS[kind]]
        for s in cfg.seasons:
            rep = cells.get((s, kind, True))
            row.append("-" if rep is None else (", ".join(rep.most_important) or "none"))
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def _run_cv_grid(cfg: RunConfig, task: str) -> dict:
    out = _out_dir(cfg)
    cells = {}
    modes = (True, False) if cfg.lasso else (False,)
    for season in cfg.seasons:
        for kind in cfg.kinds:
            records, _ = _load(cfg, season, kind)
            ds = build_design_matrix(records, kind, task)
            for use in modes:
                tag = "lasso" if use else "nolasso"
                print(f"{season} {kind} {tag}: n={ds.n}, p={ds.p}", flush=True)
                report = repeat_cv(ds, cfg.cv_config(task, use))
                cells[(season, kind, use)] = report
                stem = f"report_{task}_{season}_{kind}_{tag}"
                _write_json(out / f"{stem}.json", cfg, {"report": report.to_dict()})
                _write_text(out / f"{stem}.md", f"<!-- {_stamp(cfg)} -->\n" + report.to_markdown())
    return cells


def cmd_regress(cfg: RunConfig) -> int:
    cells = _run_cv_grid(cfg, REGRESSION)
    out = Path(cfg.out)
    _write_text(out / "table_pcc.md", _two_block_table("PCC per dataset and season", cfg, cells, "PCC"))
    _write_text(out / "table_pve.md", _two_block_table("PVE per dataset and season", cfg, cells, "PVE"))
    if cfg.lasso:
        _write_text(out / "table_selected.md", _selection_table("Most frequently selected statistics", cfg, cells))
    _write_json(out / "regress_summary.json", cfg, {"cells": _cell_summary(cells, ("PVE", "PCC"))})
    return 0


def _band_label(i: int) -> str:
    lo = int(round(SHARE_BANDS[i] * 100))
    if i + 1 < len(SHARE_BANDS):
        return f"[{lo}%, {int(round(SHARE_BANDS[i + 1] * 100))}%)"
    return f"[{lo}%, 100%]"


def share_band_counts(shares) -> list[int]:
    """Number of players per share band; the last band collects everything from 25% up."""
    idx = np.searchsorted(np.asarray(SHARE_BANDS), np.asarray(shares, dtype=float), side="right") - 1
    return [int(np.sum(idx == i)) for i in range(len(SHARE_BANDS))]


def _class_count_table(cfg: RunConfig) -> str:
    labels = [_band_label(i) for i in range(len(SHARE_BANDS))]
    lines = ["# Players per salary-share band", "", _stamp(cfg), "",
             "| Season | " + " | ".join(labels) + f" | low (<{SHARE_THRESHOLD:.0%}) | high |",
             "|---" * (len(labels) + 3) + "|"]
    for season in cfg.seasons:
        records, _ = _load(cfg, season, cfg.kinds[0])
        shares = [r.salary_share for r in records]
        bands = share_band_counts(shares)
        high = sum(1 for r in records if int(r.share_class) == 1)
        lines.append(f"| {season} | " + " | ".join(str(b) for b in bands) + f" | {len(records) - high} | {high} |")
    return "\n".join(lines) + "\n"


def cmd_classify(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    _write_text(out / "table_class_counts.md", _class_count_table(cfg))
    cells = _run_cv_grid(cfg, CLASSIFICATION)
    _write_text(out / "table_auc.md", _two_block_table("AUC per dataset and season", cfg, cells, "AUC"))
    if cfg.lasso:
        _write_text(out / "table_selected_classification.md",
                    _selection_table("Most frequently selected statistics (share class)", cfg, cells))
    _write_json(out / "classify_summary.json", cfg, {"cells": _cell_summary(cells, ("AUC",))})
    return 0


def _cell_summary(cells, metrics) -> list:
    out = []
    for (season, kind, use), rep in sorted(cells.items()):
        out.append({"season": season, "kind": kind, "lasso": use, "best_mtry": rep.labels[rep.best_index],
                    **{m: rep.mean(m) for m in metrics}, "most_important": rep.most_important})
    return out


def _validation_pairs(cfg: RunConfig) -> list:
    if len(cfg.seasons) < 2:
        raise UsageError("validate needs at least two seasons (training season then validation season)")
    return list(zip(cfg.seasons, cfg.seasons[1:]))


def cmd_validate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    task = cfg.task
    results = []
    for kind in cfg.kinds:
        for train_season, test_season in _validation_pairs(cfg):
            train = build_design_matrix(_load(cfg, train_season, kind)[0], kind, task)
            test = build_design_matrix(_load(cfg, test_season, kind)[0], kind, task)
            features = list(cfg.features)
            if not features and cfg.lasso:
                scaler = fit_scaler(train.X)
                sel, _, _, _ = _lasso_stage(apply_scaler(train.X, scaler), train.y, train.feature_names,
                                            cfg.cv_config(task, True), derive_seed(cfg.seed, 0))
                features = [train.feature_names[j] for j in (sel or [])]
            try:
                res = season_ahead_validation(train, test, features,
                                              ForestConfig(n_trees=cfg.trees, seed=derive_seed(cfg.seed, 1)), task)
            except KeyError as exc:
                raise UsageError(str(exc.args[0]) if exc.args else str(exc))
            stem = f"validate_{kind}_{train_season}_to_{test_season}"
            _write_csv(out / f"{stem}_predictions.csv", cfg, ["player", "observed", "predicted"],
                       [[pid, repr(float(o)), repr(float(p))]
                        for pid, o, p in zip(test.row_ids, test.y, res.predictions)])
            entry = {"kind": kind, "train_season": train_season, "test_season": test_season,
                     "features": list(res.features), "forest_digest": res.forest_digest, **res.metrics}
            results.append(entry)
            shown = ", ".join(f"{m} {res.metrics[m]:.3f}" for m in ("PVE", "PCC", "AUC") if m in res.metrics)
            print(f"{kind} {train_season} -> {test_season}: {shown}")
    _write_json(out / "validation.json", cfg, {"results": results})
    return 0


def cmd_demo(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    res = leakage_demo(n=cfg.n, p=cfg.p, complexity_levels=tuple(cfg.levels), seed=cfg.seed,
                       n_trees=cfg.trees, k=cfg.k)
    _write_csv(out / "demo_overfit.csv", cfg, ["level", "internal_pcc", "external_pve"],
               [[lv, repr(float(a)), repr(float(b))]
                for lv, a, b in zip(res.levels, res.internal_pcc, res.external_pve)])
    _write_text(out / "demo_overfit.md", f"<!-- {_stamp(cfg)} -->\n" + res.to_markdown())
    for lv, a, b in zip(res.levels, res.internal_pcc, res.external_pve):
        print(f"depth {lv:>3}: internal PCC {a:.3f}  external PVE {b:.3f}")
    return 0


def cmd_density(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    summary = {}
    for season in cfg.seasons:
        records, _ = _load(cfg, season, cfg.kinds[0])
        shares = np.array([r.salary_share for r in records], dtype=float)
        if shares.size < 2:
            raise UsageError(f"season {season} has fewer than two players; no density can be estimated")
        curve = evaluation.kde(shares)
        _write_csv(out / f"density_{season}.csv", cfg, ["share", "density"],
                   [[repr(float(g)), repr(float(d))] for g, d in zip(curve.grid, curve.density)])
        summary[season] = {"n": int(shares.size), "bandwidth": curve.bandwidth, "integral": curve.integral()}
        print(f"{season}: n={shares.size}, bandwidth={curve.bandwidth:.4f}")
    _write_json(out / "density_summary.json", cfg, {"seasons": summary})
    return 0


COMMANDS = {
    "clean": cmd_clean,
    "regress": cmd_regress,
    "classify": cmd_classify,
    "validate": cmd_validate,
    "demo-overfit": cmd_demo,
    "density": cmd_density,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values; command-line flags win")
    common.add_argument("--data-dir", dest="data_dir",
                        help=f"directory holding one subdirectory per season (default: ${DATA_ENV} or the bundled fixture)")
    common.add_argument("--season", action="append", help="season to use, e.g. 2016-2017; repeat or comma-separate")
    common.add_argument("--kind", action="append", help=f"statistics kind: {', '.join(KINDS)}; repeat or comma-separate")
    common.add_argument("--out", help="output directory (default: salaryshare-out)")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    common.add_argument("--min-games", dest="min_games", type=int, help="drop players with fewer games (default 10)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--k", type=int, help="number of folds (default 10)")
    model.add_argument("--reps", type=int, help="repetitions of the k-fold split (default 50)")
    model.add_argument("--trees", type=int, help="trees per forest (default 500)")
    model.add_argument("--mtry-grid", dest="mtry_grid",
                       help=f"comma-separated mtry values or rules ({', '.join(MTRY_RULES)})")
    model.add_argument("--no-lasso", dest="no_lasso", action="store_true", default=None,
                       help="skip LASSO selection and feed every statistic to the forest")

    parser = argparse.ArgumentParser(prog="salaryshare", description="Salary-share prediction from player statistics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("clean", parents=[common], help="merge and clean season files, write the cleaned dataset")
    sub.add_parser("regress", parents=[common, model], help="repeated CV of salary-share regression")
    sub.add_parser("classify", parents=[common, model], help="repeated CV of the low/high share classes")
    v = sub.add_parser("validate", parents=[common, model], help="fit on one season, predict the next")
    v.add_argument("--task", choices=(REGRESSION, CLASSIFICATION), help="response to validate (default regression)")
    v.add_argument("--features", help="comma-separated predictors; default is a LASSO selection on the training season")
    d = sub.add_parser("demo-overfit", parents=[common, model], help="internal vs external scores on pure noise")
    d.add_argument("--levels", help="increasing tree depths, e.g. 1-12 or 1,2,4,8")
    d.add_argument("--n", type=int, help="rows of the noise data (default 400)")
    d.add_argument("--p", type=int, help="columns of the noise data (default 20)")
    sub.add_parser("density", parents=[common], help="kernel density curves of the salary shares")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, IngestError, FileNotFoundError) as exc:
        print(f"salaryshare: error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"salaryshare: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

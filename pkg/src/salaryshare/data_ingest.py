"""Reading season snapshots and turning them into player-season records.

A season is described by four kinds of CSV file: player statistics (one file
per statistics family), salaries, team payrolls and years of experience.
The pipeline is ``merge_sources -> clean -> compute_salary_shares ->
build_design_matrix``.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

SHARE_THRESHOLD = 0.05
MIN_GAMES = 10
MAX_EXPERIENCE = 25
TOTAL_TEAM = "TOT"


class IngestError(ValueError):
    """Malformed or inconsistent input data."""


class StatKind(str, enum.Enum):
    PER_GAME = "per-game"
    PER_36 = "per-36"
    PER_100 = "per-100"
    ADVANCED = "advanced"

    @classmethod
    def parse(cls, value) -> "StatKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"pergame": "per-game", "per36": "per-36", "per100": "per-100"}
        return cls(aliases.get(key, key))


class ShareClass(enum.IntEnum):
    LOW = 0
    HIGH = 1


# identity columns; everything else numeric becomes a feature
_PLAYER, _TEAM, _POS, _AGE, _G, _GS, _MP = "Player", "Tm", "Pos", "Age", "G", "GS", "MP"
_MANDATORY = (_PLAYER, _TEAM, _G, _MP)
_SKIPPED = {"Rk", "Season", "Player-additional", "Awards", "Lg"}
_FRACTION_COLUMNS = {"FG%", "3P%", "2P%", "eFG%", "FT%", "TS%"}
_KIND_ONLY = {"eFG%": StatKind.PER_GAME, "ORtg": StatKind.PER_100, "DRtg": StatKind.PER_100}


@dataclass(frozen=True)
class RawStatRow:
    player_name: str
    season: str
    team: str
    position: str
    age: int | None
    games: int
    games_started: int | None
    minutes: float
    features: dict[str, float | None]
    kind: StatKind = StatKind.PER_GAME
    line: int = 0


@dataclass(frozen=True)
class SalaryRow:
    player_name: str
    season: str
    team: str
    salary_usd: float


@dataclass(frozen=True)
class PayrollRow:
    team: str
    season: str
    payroll_usd: float


@dataclass(frozen=True)
class ExperienceRow:
    player_name: str
    season: str
    experience_years: int


@dataclass(frozen=True)
class PlayerSeasonRecord:
    player_name: str
    season: str
    team: str
    position: str
    age: int | None
    games: int
    games_started: int | None
    minutes: float
    experience_years: int
    kind: StatKind
    features: dict[str, float | None]
    salary_usd: float
    payroll_usd: float
    effective_payroll: float | None = None
    salary_share: float | None = None
    share_class: ShareClass | None = None


@dataclass
class CleaningLog:
    """Counts of rows dropped or altered by each rule."""

    season: str = ""
    stat_rows: int = 0
    total_rows_discarded: int = 0
    team_rows_discarded: int = 0
    missing_salary: int = 0
    missing_experience: int = 0
    missing_stats: int = 0
    unmatched_team: int = 0
    merged: int = 0
    few_games: int = 0
    retained: int = 0
    corrected_teams: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"season: {self.season}",
            f"stat rows read: {self.stat_rows}",
            f"aggregate TOT rows discarded: {self.total_rows_discarded}",
            f"other-team rows of team switchers discarded: {self.team_rows_discarded}",
            f"players without salary dropped: {self.missing_salary}",
            f"players without experience dropped: {self.missing_experience}",
            f"salaried players without statistics dropped: {self.missing_stats}",
            f"switchers with no row for the salary team dropped: {self.unmatched_team}",
            f"merged records: {self.merged}",
            f"records with fewer than {MIN_GAMES} games dropped: {self.few_games}",
            f"records retained: {self.retained}",
            f"payroll corrected to salary sum: {', '.join(self.corrected_teams) or 'none'}",
        ]
        return "\n".join(lines) + "\n"


def normalize_name(name: str) -> str:
    """Join key for player names: diacritics stripped, lowercase, single spaces.

    Suffixes such as "Jr." or "III" are kept, and so is punctuation; the
    asterisk that some sources append to Hall-of-Fame players is removed.
    """
    decomposed = unicodedata.normalize("NFKD", name)
    plain = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return " ".join(plain.replace("*", " ").lower().split())


# ---------------------------------------------------------------- parsing


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _rows(source) -> tuple[list[str], list[tuple[int, dict[str, str]]]]:
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError("empty file: header row missing") from None
        out = []
        for lineno, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise IngestError(f"line {lineno}: expected {len(header)} cells, got {len(cells)}")
            out.append((lineno, dict(zip(header, (c.strip() for c in cells)))))
        return header, out
    finally:
        if isinstance(source, (str, Path, bytes, bytearray)):
            fh.close()


def _number(text: str, column: str, line: int, *, money: bool = False) -> float | None:
    if text == "":
        return None
    if money:
        text = text.replace("$", "").replace(",", "")
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"non-numeric value in column {column}, line {line}: {text!r}") from None


def _integer(text: str, column: str, line: int) -> int | None:
    value = _number(text, column, line)
    if value is None:
        return None
    if value != int(value):
        raise IngestError(f"non-integer value in column {column}, line {line}: {text!r}")
    return int(value)


def _require(header: list[str], columns: Iterable[str], what: str):
    for col in columns:
        if col not in header:
            raise IngestError(f"{what}: missing mandatory column {col}")


def _column(header, *candidates):
    for c in candidates:
        if c in header:
            return c
    return candidates[0]


def parse_stats_csv(source, kind=StatKind.PER_GAME, season: str = "") -> list[RawStatRow]:
    """Parse a statistics table; empty cells become ``None``.

    Every column other than the identity columns (player, position, age,
    team, games, games started, minutes) is kept as a feature, in file order.
    """
    kind = StatKind.parse(kind)
    header, rows = _rows(source)
    _require(header, _MANDATORY, f"{kind.value} statistics")
    for col, only in _KIND_ONLY.items():
        if col in header and kind is not only:
            raise IngestError(f"column {col} is only expected in {only.value} statistics, not {kind.value}")
    identity = {_PLAYER, _TEAM, _POS, _AGE, _G, _GS, _MP}
    feature_cols = [h for h in header if h not in identity and h not in _SKIPPED and h]
    out = []
    for line, cells in rows:
        games = _integer(cells[_G], _G, line)
        minutes = _number(cells[_MP], _MP, line)
        if games is None or minutes is None:
            raise IngestError(f"missing value in column {_G if games is None else _MP}, line {line}")
        gs = _integer(cells[_GS], _GS, line) if _GS in cells else None
        if games < 0:
            raise IngestError(f"negative games on line {line}")
        if gs is not None and gs > games:
            raise IngestError(f"games started exceeds games on line {line}")
        feats: dict[str, float | None] = {}
        for col in feature_cols:
            v = _number(cells[col], col, line)
            if v is not None and col in _FRACTION_COLUMNS and not 0.0 <= v <= 1.0:
                raise IngestError(f"value {v} in column {col}, line {line} is not a fraction in [0, 1]")
            feats[col] = v
        out.append(RawStatRow(
            player_name=cells[_PLAYER],
            season=cells.get("Season", "") or season,
            team=cells[_TEAM].upper(),
            position=cells.get(_POS, ""),
            age=_integer(cells[_AGE], _AGE, line) if _AGE in cells else None,
            games=games,
            games_started=gs,
            minutes=minutes,
            features=feats,
            kind=kind,
            line=line,
        ))
    return out


def parse_salaries_csv(source, season: str = "") -> list[SalaryRow]:
    header, rows = _rows(source)
    team_col = _column(header, "Tm", "Team")
    sal_col = _column(header, "Salary", "salary")
    _require(header, (_PLAYER, team_col, sal_col), "salaries")
    out = []
    for line, cells in rows:
        salary = _number(cells[sal_col], sal_col, line, money=True)
        if salary is None or salary < 0:
            raise IngestError(f"missing or negative salary on line {line}")
        out.append(SalaryRow(cells[_PLAYER], cells.get("Season", "") or season, cells[team_col].upper(), salary))
    return out


def parse_payrolls_csv(source, season: str = "") -> list[PayrollRow]:
    header, rows = _rows(source)
    team_col = _column(header, "Tm", "Team")
    pay_col = _column(header, "Payroll", "payroll")
    _require(header, (team_col, pay_col), "payrolls")
    out = []
    for line, cells in rows:
        payroll = _number(cells[pay_col], pay_col, line, money=True)
        if payroll is None or payroll <= 0:
            raise IngestError(f"payroll must be positive, line {line}")
        out.append(PayrollRow(cells[team_col].upper(), cells.get("Season", "") or season, payroll))
    return out


def parse_experience_csv(source, season: str = "") -> list[ExperienceRow]:
    header, rows = _rows(source)
    exp_col = _column(header, "EXP", "Experience")
    _require(header, (_PLAYER, exp_col), "experience")
    out = []
    for line, cells in rows:
        years = _integer(cells[exp_col], exp_col, line)
        if years is None or not 0 <= years <= MAX_EXPERIENCE:
            raise IngestError(f"experience must lie in [0, {MAX_EXPERIENCE}], line {line}")
        out.append(ExperienceRow(cells[_PLAYER], cells.get("Season", "") or season, years))
    return out


# ---------------------------------------------------------------- merging


def _check_season(rows, season, what):
    for r in rows:
        if r.season and r.season != season:
            raise IngestError(f"{what} row for {getattr(r, 'player_name', getattr(r, 'team', '?'))} "
                              f"belongs to season {r.season}, expected {season}")


def _unique_by_name(rows, what):
    out = {}
    for r in rows:
        key = normalize_name(r.player_name)
        if key in out:
            raise IngestError(f"duplicate {what} rows for player {r.player_name!r}")
        out[key] = r
    return out


def merge_sources(stats, salaries, payrolls, experience, season: str,
                  log_: CleaningLog | None = None) -> list[PlayerSeasonRecord]:
    """Join the four sources on the normalized player name.

    Only players present in the statistics, salary and experience sources
    survive. Aggregate ``TOT`` rows are discarded; a player who switched
    teams keeps the row of the team that pays the salary listed for that player.
    """
    counts = log_ if log_ is not None else CleaningLog()
    counts.season = season
    _check_season(stats, season, "statistics")
    _check_season(salaries, season, "salary")
    _check_season(payrolls, season, "payroll")
    _check_season(experience, season, "experience")

    salary_by = _unique_by_name(salaries, "salary")
    exp_by = _unique_by_name(experience, "experience")
    payroll_by = {}
    for r in payrolls:
        if r.team in payroll_by:
            raise IngestError(f"duplicate payroll rows for team {r.team}")
        payroll_by[r.team] = r.payroll_usd

    grouped: dict[str, list[RawStatRow]] = defaultdict(list)
    counts.stat_rows = len(stats)
    for row in stats:
        if row.team == TOTAL_TEAM:
            counts.total_rows_discarded += 1
            continue
        grouped[normalize_name(row.player_name)].append(row)

    counts.missing_stats = sum(1 for key in salary_by if key not in grouped)
    records = []
    missing_payroll = set()
    for key, rows in grouped.items():
        sal = salary_by.get(key)
        if sal is None:
            counts.missing_salary += 1
            continue
        exp = exp_by.get(key)
        if exp is None:
            counts.missing_experience += 1
            continue
        if len(rows) == 1:
            row = rows[0]
        else:
            matching = [r for r in rows if r.team == sal.team]
            if len(matching) != 1:
                counts.unmatched_team += 1
                continue
            row = matching[0]
            counts.team_rows_discarded += len(rows) - 1
        if sal.team not in payroll_by:
            missing_payroll.add(sal.team)
            continue
        records.append(PlayerSeasonRecord(
            player_name=row.player_name,
            season=season,
            team=sal.team,
            position=row.position,
            age=row.age,
            games=row.games,
            games_started=row.games_started,
            minutes=row.minutes,
            experience_years=exp.experience_years,
            kind=row.kind,
            features=dict(row.features),
            salary_usd=sal.salary_usd,
            payroll_usd=payroll_by[sal.team],
        ))
    if missing_payroll:
        raise IngestError(f"no payroll row for team(s): {', '.join(sorted(missing_payroll))}")
    counts.merged = len(records)
    log.info("season %s: merged %d player records", season, len(records))
    return records


def clean(records, min_games: int = MIN_GAMES, log_: CleaningLog | None = None) -> list[PlayerSeasonRecord]:
    """Drop records with fewer than ``min_games`` games."""
    kept = [r for r in records if r.games >= min_games]
    if log_ is not None:
        log_.few_games += len(records) - len(kept)
        log_.retained = len(kept)
    log.info("kept %d of %d records with at least %d games", len(kept), len(records), min_games)
    return kept


def compute_salary_shares(records, payrolls=None, log_: CleaningLog | None = None) -> list[PlayerSeasonRecord]:
    """Salary divided by the effective team payroll.

    The effective payroll is the reported payroll, raised to the sum of the
    team's listed salaries whenever that sum is larger, so shares within a
    team never add up to more than one. ``payrolls`` overrides the payroll
    already joined onto each record.
    """
    reported = {}
    for r in records:
        reported[r.team] = r.payroll_usd
    for p in payrolls or ():
        reported[p.team] = p.payroll_usd
    sums: dict[str, float] = defaultdict(float)
    for r in records:
        sums[r.team] += r.salary_usd
    effective = {}
    for team, total in sums.items():
        pay = reported[team]
        if total > pay:
            effective[team] = total
            if log_ is not None and team not in log_.corrected_teams:
                log_.corrected_teams.append(team)
            log.info("team %s: salaries sum %.0f exceed payroll %.0f; using the sum", team, total, pay)
        else:
            effective[team] = pay
        if effective[team] <= 0:
            raise IngestError(f"effective payroll of team {team} is not positive")
    if log_ is not None:
        log_.corrected_teams.sort()
    out = []
    for r in records:
        share = r.salary_usd / effective[r.team]
        out.append(replace(
            r,
            payroll_usd=reported[r.team],
            effective_payroll=effective[r.team],
            salary_share=share,
            share_class=label_share_class(share) if 0 < share < 1 else None,
        ))
    return out


def label_share_class(share: float, threshold: float = SHARE_THRESHOLD) -> ShareClass:
    """``LOW`` below the threshold, ``HIGH`` at or above it."""
    if not 0.0 < share < 1.0:
        raise ValueError(f"salary share must lie in (0, 1), got {share}")
    return ShareClass.LOW if share < threshold else ShareClass.HIGH


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class Dataset:
    """Predictor matrix with its response.

    ``X`` may contain NaN for undefined statistics; they are imputed during
    fold-local standardization.
    """

    X: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...]
    task: str = "regression"
    season: str = ""
    kind: str = ""
    row_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X shape {self.X.shape} does not match y length {self.y.shape[0]}")
        if self.X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names length does not match the number of columns")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        ids = tuple(self.row_ids[i] for i in rows) if self.row_ids else ()
        return replace(self, X=self.X[rows], y=self.y[rows], row_ids=ids)

    def select(self, names) -> "Dataset":
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise KeyError(f"columns not in dataset: {', '.join(missing)}")
        idx = [self.feature_names.index(n) for n in names]
        return replace(self, X=self.X[:, idx], feature_names=tuple(names))


BASE_COLUMNS = ("EXP", "AGE", "G", "GS", "MP")


def design_columns(records, include_age: bool = True) -> list[str]:
    records = list(records)
    attr = {"EXP": "experience_years", "AGE": "age", "G": "games", "GS": "games_started", "MP": "minutes"}
    # advanced tables carry no games-started column; drop base columns nobody has
    base = [c for c in BASE_COLUMNS if (include_age or c != "AGE")
            and any(getattr(r, attr[c]) is not None for r in records)]
    feats: list[str] = []
    for r in records:
        for name in r.features:
            if name not in feats and name not in base:
                feats.append(name)
    return base + feats


def build_design_matrix(records, kind=None, task: str = "regression", include_age: bool = True) -> Dataset:
    """Numeric predictor matrix in the order EXP, AGE, G, GS, MP, then the
    statistics in file order. Team and position are not used.
    """
    records = list(records)
    if kind is not None:
        kind = StatKind.parse(kind)
        records = [r for r in records if r.kind is kind]
    if not records:
        raise ValueError("no usable records for the design matrix")
    cols = design_columns(records, include_age)
    X = np.full((len(records), len(cols)), np.nan)
    for i, r in enumerate(records):
        base = {"EXP": r.experience_years, "AGE": r.age, "G": r.games, "GS": r.games_started, "MP": r.minutes}
        for j, c in enumerate(cols):
            v = base[c] if c in base else r.features.get(c)
            if v is not None:
                X[i, j] = v
    if task == "regression":
        if any(r.salary_share is None for r in records):
            raise ValueError("salary shares not computed")
        y = np.array([r.salary_share for r in records], dtype=float)
    elif task == "classification":
        if any(r.share_class is None for r in records):
            raise ValueError("share classes not computed")
        y = np.array([int(r.share_class) for r in records], dtype=float)
    else:
        raise ValueError(f"unknown task {task!r}")
    return Dataset(
        X=X, y=y, feature_names=tuple(cols), task=task,
        season=records[0].season, kind=records[0].kind.value,
        row_ids=tuple(r.player_name for r in records),
    )


# ---------------------------------------------------------------- season files


STAT_FILE = "stats_{kind}.csv"
SALARY_FILE = "salaries.csv"
PAYROLL_FILE = "payrolls.csv"
EXPERIENCE_FILE = "experience.csv"


def season_paths(directory, kind) -> dict[str, Path]:
    d = Path(directory)
    kind = StatKind.parse(kind)
    return {
        "stats": d / STAT_FILE.format(kind=kind.value),
        "salaries": d / SALARY_FILE,
        "payrolls": d / PAYROLL_FILE,
        "experience": d / EXPERIENCE_FILE,
    }


def load_season(directory, season: str, kind=StatKind.PER_GAME, min_games: int = MIN_GAMES):
    """Run the full ingestion pipeline on one season directory.

    Returns ``(records, cleaning_log)``.
    """
    paths = season_paths(directory, kind)
    for what, path in paths.items():
        if not path.is_file():
            raise FileNotFoundError(f"{what} file not found: {path}")
    counts = CleaningLog()
    records = merge_sources(
        parse_stats_csv(paths["stats"], kind, season),
        parse_salaries_csv(paths["salaries"], season),
        parse_payrolls_csv(paths["payrolls"], season),
        parse_experience_csv(paths["experience"], season),
        season,
        counts,
    )
    records = clean(records, min_games, counts)
    records = compute_salary_shares(records, log_=counts)
    return records, counts


def write_records_csv(records, path, include_age: bool = True) -> None:
    """Cleaned dataset: identity columns, predictors in design-matrix order, then salary data."""
    records = list(records)
    cols = design_columns(records, include_age)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Player", "Season", "Tm", "Pos", *cols, "Salary", "Payroll", "EffectivePayroll",
                    "Share", "Class"])
        for r in records:
            base = {"EXP": r.experience_years, "AGE": r.age, "G": r.games, "GS": r.games_started, "MP": r.minutes}
            vals = [base[c] if c in base else r.features.get(c) for c in cols]
            w.writerow([
                r.player_name, r.season, r.team, r.position,
                *("" if v is None else repr(v) for v in vals),
                repr(r.salary_usd), repr(r.payroll_usd), repr(r.effective_payroll),
                repr(r.salary_share), "" if r.share_class is None else r.share_class.name.lower(),
            ])

"""Generator for the bundled engineered season snapshots.

The files mimic the layout of the public statistics and salary tables. They
are synthetic, but built so the cleaning pipeline exercises every rule:
aggregate ``TOT`` rows, team switchers, players missing from one source,
players under the games threshold, a name that differs only by diacritics,
and exactly one team per season whose listed salaries exceed its reported
payroll. After cleaning, the seasons keep 443, 484 and 412 players.

Run ``python -m salaryshare.fixture OUTDIR`` to regenerate.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SEASONS = ("2016-2017", "2017-2018", "2018-2019")
RETAINED = {"2016-2017": 443, "2017-2018": 484, "2018-2019": 412}
FEW_GAMES = {"2016-2017": 7, "2017-2018": 6, "2018-2019": 5}
CORRECTED_TEAM = {"2016-2017": "CLE", "2017-2018": "OKC", "2018-2019": "MIA"}
TEAMS = (
    "ATL", "BOS", "BRK", "CHI", "CHO", "CLE", "DAL", "DEN", "DET", "GSW",
    "HOU", "IND", "LAC", "LAL", "MEM", "MIA", "MIL", "MIN", "NOP", "NYK",
    "OKC", "ORL", "PHI", "PHO", "POR", "SAC", "SAS", "TOR", "UTA", "WAS",
)
POSITIONS = ("PG", "SG", "SF", "PF", "C")
HARDEN_SALARY = 26_540_100.0
HARDEN_SHARE = 0.2918

_FIRST = ("Aaron", "Bruno", "Caleb", "Dario", "Elias", "Felix", "Goran", "Hugo", "Isaac", "Jonas",
          "Kemba", "Luka", "Marco", "Nikos", "Omar", "Pascal", "Quinn", "Rudy", "Sasha", "Tyus",
          "Udonis", "Victor", "Wesley", "Xavier", "Yannis", "Zach")
_LAST = ("Adams", "Baker", "Carter", "Dawson", "Ellis", "Foster", "Grant", "Hayes", "Irving", "Jensen",
         "Keller", "Lopez", "Mason", "Nolan", "Owens", "Parker", "Quincy", "Reed", "Sutton", "Turner",
         "Underwood", "Vance", "Walker", "Young", "Zeller")

PER_GAME_COLS = ["Rk", "Player", "Pos", "Age", "Tm", "G", "GS", "MP", "FG", "FGA", "FG%", "3P", "3PA", "3P%",
                 "2P", "2PA", "2P%", "eFG%", "FT", "FTA", "FT%", "ORB", "DRB", "TRB", "AST", "STL", "BLK",
                 "TOV", "PF", "PTS"]
RATE_COLS = ["FG", "FGA", "3P", "3PA", "2P", "2PA", "FT", "FTA", "ORB", "DRB", "TRB", "AST", "STL",
             "BLK", "TOV", "PF", "PTS"]
ADVANCED_COLS = ["Rk", "Player", "Pos", "Age", "Tm", "G", "MP", "PER", "TS%", "3PAr", "FTr", "ORB%", "DRB%",
                 "TRB%", "AST%", "STL%", "BLK%", "TOV%", "USG%", "OWS", "DWS", "WS", "WS/48", "OBPM",
                 "DBPM", "BPM", "VORP"]


@dataclass
class _Player:
    name: str
    position: str
    born: int
    debut: int
    skill: float
    shooter: bool


def _pool(rng, size=640):
    names = set()
    out = []
    while len(out) < size:
        name = f"{rng.choice(_FIRST)} {rng.choice(_LAST)}"
        if rng.random() < 0.35:
            name = f"{name[0]}.{rng.choice(_FIRST)[0]}. {name.split()[1]}"
        if rng.random() < 0.05:
            name += " Jr."
        if name in names:
            continue
        names.add(name)
        pos = str(rng.choice(POSITIONS))
        debut = int(rng.integers(2003, 2017))
        out.append(_Player(name, pos, debut - int(rng.integers(19, 23)), debut,
                           float(rng.normal()), pos != "C" or rng.random() < 0.4))
    out[0] = _Player("James Harden", "PG", 1989, 2009, 2.5, True)
    out[1] = _Player("Nikola Jokić", "C", 1995, 2015, 1.5, True)
    return out


def _fmt(v, digits=3):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.{digits}f}".rstrip("0").rstrip(".") if digits else str(int(round(v)))


def _per_game_line(rng, pl, games, mp):
    """Per-game box-score averages for one stint."""
    usage = np.clip(0.45 + 0.12 * pl.skill + rng.normal(0, 0.05), 0.2, 0.9)
    fga = mp * usage * 0.42
    tpa = fga * (rng.uniform(0.25, 0.5) if pl.shooter else 0.0)
    twa = fga - tpa
    tp_pct = np.clip(rng.normal(0.35, 0.04), 0.2, 0.5) if tpa > 0 else None
    two_pct = np.clip(rng.normal(0.49 + 0.02 * pl.skill, 0.04), 0.35, 0.65)
    tp = tpa * tp_pct if tpa > 0 else 0.0
    two = twa * two_pct
    fta = fga * rng.uniform(0.15, 0.4)
    ft_pct = np.clip(rng.normal(0.76, 0.07), 0.45, 0.95)
    big = pl.position in ("PF", "C")
    orb = mp * (0.07 if big else 0.025) * rng.uniform(0.7, 1.3)
    drb = mp * (0.2 if big else 0.11) * rng.uniform(0.7, 1.3)
    ast = mp * (0.2 if pl.position == "PG" else 0.07) * rng.uniform(0.6, 1.4) * (1 + 0.1 * pl.skill)
    line = {
        "FG": tp + two, "FGA": fga, "3P": tp, "3PA": tpa, "2P": two, "2PA": twa,
        "FT": fta * ft_pct, "FTA": fta, "ORB": orb, "DRB": drb, "TRB": orb + drb, "AST": ast,
        "STL": mp * 0.03 * rng.uniform(0.6, 1.4), "BLK": mp * (0.05 if big else 0.012) * rng.uniform(0.5, 1.5),
        "TOV": mp * 0.05 * rng.uniform(0.6, 1.4), "PF": mp * 0.08 * rng.uniform(0.7, 1.3),
    }
    line["PTS"] = 2 * two + 3 * tp + line["FT"]
    pct = {
        "FG%": line["FG"] / fga if fga > 0 else None,
        "3P%": tp_pct,
        "2P%": two / twa if twa > 0 else None,
        "eFG%": (line["FG"] + 0.5 * tp) / fga if fga > 0 else None,
        "FT%": ft_pct if fta > 0 else None,
    }
    return line, pct


def _stint_rows(rng, pl, season_year, team, games, gs, mp, rk):
    age = season_year - pl.born
    line, pct = _per_game_line(rng, pl, games, mp)
    pg = {"Rk": rk, "Player": pl.name, "Pos": pl.position, "Age": age, "Tm": team, "G": games, "GS": gs,
          "MP": round(mp, 1)}
    for c in PER_GAME_COLS[8:]:
        pg[c] = round(line[c], 1) if c in line else (None if pct[c] is None else round(pct[c], 3))
    total_mp = int(round(mp * games))
    f36 = 36.0 / mp
    p36 = dict(pg, MP=total_mp)
    p36.pop("eFG%")
    for c in RATE_COLS:
        p36[c] = round(line[c] * f36, 1)
    poss = mp * 2.08
    p100 = dict(p36)
    for c in RATE_COLS:
        p100[c] = round(line[c] * 100.0 / poss, 1)
    p100["ORtg"] = int(round(rng.normal(107 + 3 * pl.skill, 5)))
    p100["DRtg"] = int(round(rng.normal(108 - pl.skill, 3)))
    tsa = line["FGA"] + 0.44 * line["FTA"]
    adv = {"Rk": rk, "Player": pl.name, "Pos": pl.position, "Age": age, "Tm": team, "G": games, "MP": total_mp,
           "PER": round(15 + 4 * pl.skill + rng.normal(0, 2), 1),
           "TS%": round(line["PTS"] / (2 * tsa), 3) if tsa > 0 else None,
           "3PAr": round(line["3PA"] / line["FGA"], 3) if line["FGA"] > 0 else None,
           "FTr": round(line["FTA"] / line["FGA"], 3) if line["FGA"] > 0 else None,
           "ORB%": round(line["ORB"] / mp * 100 * 0.75, 1), "DRB%": round(line["DRB"] / mp * 100 * 0.7, 1),
           "TRB%": round(line["TRB"] / mp * 100 * 0.72, 1), "AST%": round(line["AST"] / mp * 100 * 0.9, 1),
           "STL%": round(line["STL"] / mp * 100 * 0.5, 1), "BLK%": round(line["BLK"] / mp * 100 * 0.6, 1),
           "TOV%": round(rng.uniform(8, 16), 1), "USG%": round(12 + 4 * pl.skill + mp * 0.25, 1)}
    ows = max(-1.0, 0.08 * games * mp / 36 * (0.3 + 0.2 * pl.skill) + rng.normal(0, 0.3))
    dws = max(0.0, 0.04 * games * mp / 36 + rng.normal(0, 0.2))
    adv.update({"OWS": round(ows, 1), "DWS": round(dws, 1), "WS": round(ows + dws, 1),
                "WS/48": round((ows + dws) * 48 / max(total_mp, 1), 3),
                "OBPM": round(1.5 * pl.skill + rng.normal(0, 1), 1), "DBPM": round(rng.normal(0, 1), 1)})
    adv["BPM"] = round(adv["OBPM"] + adv["DBPM"], 1)
    adv["VORP"] = round((adv["BPM"] + 2) * total_mp / 4000, 1)
    return {"per-game": pg, "per-36": p36, "per-100": p100, "advanced": adv}


def _write(path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(c), 3) if not isinstance(r.get(c), str) else r[c] for c in header])


def write_fixture(directory, seed: int = 2019) -> dict[str, Path]:
    """Write all three seasons under ``directory/<season>/``; returns the season directories."""
    rng = np.random.default_rng(seed)
    pool = _pool(rng)
    root = Path(directory)
    out = {}
    prev_team = {}
    for si, season in enumerate(SEASONS):
        year = 2017 + si
        n_keep, n_few = RETAINED[season], FEW_GAMES[season]
        n_merged = n_keep + n_few
        active = [p for p in pool if p.debut <= year - 1]
        core = [active[0], active[1]] + list(rng.permutation(np.array(active[2:], dtype=object)))
        merged = core[:n_merged]
        extras = core[n_merged:n_merged + 15]
        stats_only, salary_only, no_exp = extras[:6], extras[6:10], extras[10:13]
        unmatched = extras[13]

        team_of = {}
        for i, pl in enumerate(merged):
            team_of[pl.name] = prev_team.get(pl.name) if rng.random() < 0.7 and pl.name in prev_team \
                else TEAMS[i % len(TEAMS)]
        team_of["James Harden"] = "HOU"
        for pl in stats_only + salary_only + no_exp + [unmatched]:
            team_of[pl.name] = TEAMS[int(rng.integers(len(TEAMS)))]
        prev_team.update(team_of)

        few = {pl.name for pl in merged[2:2 + n_few]}
        switchers = {pl.name for pl in merged[2 + n_few:2 + n_few + 8]}

        stat_rows = {k: [] for k in ("per-game", "per-36", "per-100", "advanced")}
        mp_of, exp_of = {}, {}
        rk = 0
        for pl in sorted(merged + stats_only + no_exp + [unmatched], key=lambda p: p.name):
            rk += 1
            exp = max(0, year - 1 - pl.debut)
            exp_of[pl.name] = exp
            games = int(rng.integers(1, 10)) if pl.name in few else int(rng.integers(22, 83))
            mp = float(np.clip(14 + 4 * pl.skill + 0.6 * exp + rng.normal(0, 4), 6, 38))
            if pl.name == "James Harden":
                games, mp = 81, 36.4
            mp_of[pl.name] = mp
            gs = int(min(games, round(games * np.clip((mp - 14) / 20, 0, 1))))
            home = team_of[pl.name]
            if pl.name in switchers or pl is unmatched:
                other = TEAMS[(TEAMS.index(home) + 7) % len(TEAMS)]
                g1 = games // 2
                stints = [(other, g1), (home if pl is not unmatched else TEAMS[(TEAMS.index(home) + 3) % 30],
                                        games - g1)]
                for team, g in stints:
                    rows = _stint_rows(rng, pl, year, team, g, min(g, gs // 2), mp, rk)
                    for k in stat_rows:
                        stat_rows[k].append(rows[k])
                tot = _stint_rows(rng, pl, year, "TOT", games, gs, mp, rk)
                for k in stat_rows:
                    stat_rows[k].insert(len(stat_rows[k]) - 2, tot[k])
            else:
                rows = _stint_rows(rng, pl, year, home, games, gs, mp, rk)
                for k in stat_rows:
                    stat_rows[k].append(rows[k])

        salaries = {}
        for pl in merged + salary_only + no_exp + [unmatched]:
            exp = max(0, year - 1 - pl.debut)
            mp = mp_of.get(pl.name, 15.0)
            log_sal = 13.6 + 0.09 * exp + 0.055 * mp + 0.25 * pl.skill + rng.normal(0, 0.35)
            salaries[pl.name] = float(np.clip(round(np.exp(log_sal), -2), 50_000, 25_000_000))
        salaries["James Harden"] = HARDEN_SALARY if season == "2016-2017" else 28_299_399.0

        by_team: dict[str, float] = {t: 0.0 for t in TEAMS}
        kept_by_team: dict[str, float] = {t: 0.0 for t in TEAMS}
        for name, sal in salaries.items():
            by_team[team_of[name]] += sal
        for pl in merged:
            if pl.name not in few:
                kept_by_team[team_of[pl.name]] += salaries[pl.name]
        payroll = {}
        for t in TEAMS:
            if t == CORRECTED_TEAM[season]:
                payroll[t] = round(0.93 * kept_by_team[t], -2)
            else:
                payroll[t] = round(by_team[t] * float(rng.uniform(1.08, 1.3)), -2)
        if season == "2016-2017":
            # shrink the rest of the roster so the listed salaries fit under the payroll
            target = round(HARDEN_SALARY / HARDEN_SHARE, 2)
            room = 0.95 * target - HARDEN_SALARY
            others = by_team["HOU"] - HARDEN_SALARY
            if others > room:
                factor = room / others
                for name in salaries:
                    if team_of[name] == "HOU" and name != "James Harden":
                        salaries[name] = float(round(salaries[name] * factor, -2))
            payroll["HOU"] = target

        d = root / season
        d.mkdir(parents=True, exist_ok=True)
        _write(d / "stats_per-game.csv", PER_GAME_COLS, stat_rows["per-game"])
        _write(d / "stats_per-36.csv", [c for c in PER_GAME_COLS if c != "eFG%"], stat_rows["per-36"])
        _write(d / "stats_per-100.csv", [c for c in PER_GAME_COLS if c != "eFG%"] + ["ORtg", "DRtg"],
               stat_rows["per-100"])
        _write(d / "stats_advanced.csv", ADVANCED_COLS, stat_rows["advanced"])

        def salary_name(name):
            return "Nikola Jokic" if name == "Nikola Jokić" else name

        # the unmatched switcher is paid by a team with no statistics row for that player
        sal_rows = [{"Player": salary_name(n), "Tm": team_of[n], "Salary": f"{s:.0f}"}
                    for n, s in sorted(salaries.items())]
        _write(d / "salaries.csv", ["Player", "Tm", "Salary"], sal_rows)
        _write(d / "payrolls.csv", ["Tm", "Payroll"],
               [{"Tm": t, "Payroll": f"{payroll[t]:.2f}"} for t in TEAMS])
        no_exp_names = {pl.name for pl in no_exp}
        _write(d / "experience.csv", ["Player", "EXP"],
               [{"Player": n, "EXP": e} for n, e in sorted(exp_of.items()) if n not in no_exp_names])
        out[season] = d
    return out


def bundled_fixture_dir() -> Path:
    return Path(__file__).parent / "data" / "fixture"


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else bundled_fixture_dir()
    for season, path in write_fixture(target).items():
        print(season, path)

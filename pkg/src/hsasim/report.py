"""Descriptive tables for cohorts and simulated studies, plus plot feeds.

Money is carried in cents throughout. Text renderings round money to whole
R$; JSON rows carry R$ with cents as decimals. Cross-replication cells are
``(mean, sd)`` pairs over replications, with undefined replicate values
(e.g. the mean payment per life for a usage count no life reached) left
out of both.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .core import AGE_RANGES, CENTS, DEFAULT_BREAKS, LEVELS, SEXES, SIMULATION_STRATA
from .ingest import Cohort
from .sim import StudyResult
from .stats import (
    BALANCE_PERCENTILES,
    COHORT_PERCENTILES,
    StatsSummary,
    descriptive_stats,
    mean_sd,
    pct_label,
    skewness,
    tukey_outliers,
)

COUNT, PCT, MONEY, TEXT, REAL = "count", "pct", "money", "text", "real"

_STAT_KINDS = {"n": COUNT, "n0": COUNT, "pct_zero": PCT}

METHODS = {
    "percentiles": "linear interpolation between closest order statistics, position (n-1)q",
    "sd": "sample standard deviation (n-1 denominator)",
    "skewness": "adjusted Fisher-Pearson sample skewness",
    "outliers": "Tukey fences at 1.5 x IQR",
    "positive_only": "percentiles, max, mean and sd over strictly positive values; zero share over all values",
    "replications": "mean and sd across replications of each per-replication statistic",
}


class Moments(NamedTuple):
    mean: float | None
    sd: float | None
    n: int


def moments(values: Iterable[float | None]) -> Moments:
    return Moments(*mean_sd(list(values)))


@dataclass
class Table:
    """Rows of named cells; ``kinds`` maps a column (or, for stat-per-row tables, a row key) to its cell kind."""

    name: str
    title: str
    columns: list[str]
    rows: list[dict]
    kinds: dict[str, str] = field(default_factory=dict)
    row_key: str | None = None  # column whose value selects a per-row kind
    row_kinds: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def kind(self, row: dict, col: str) -> str:
        if self.row_key is not None and col != self.row_key:
            k = self.row_kinds.get(row.get(self.row_key))
            if k is not None:
                return k
        return self.kinds.get(col, REAL)

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    def json_rows(self) -> list[dict]:
        out = []
        for r in self.rows:
            out.append({c: _json_cell(r.get(c), self.kind(r, c)) for c in self.columns})
        return out

    def render(self) -> str:
        cells = [[_text_cell(r.get(c), self.kind(r, c)) for c in self.columns] for r in self.rows]
        widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(self.columns)]
        lines = [self.title, ""]
        lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(self.columns, widths))))
        lines.append("  ".join("-" * w for w in widths))
        for row in cells:
            lines.append("  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(row, widths))))
        lines.extend(self.notes)
        return "\n".join(lines) + "\n"


def _json_cell(v, kind):
    if v is None or kind == TEXT:
        return v
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if kind == MONEY:
        return round(v / CENTS, 2)
    if kind == COUNT and float(v).is_integer():
        return int(v)
    return v


def _text_cell(v, kind) -> str:
    if v is None:
        return "-"
    if kind == TEXT:
        return str(v)
    if kind == MONEY:
        return f"{v / CENTS:,.0f}"
    if kind == PCT:
        return f"{v:.2f}"
    if kind == COUNT:
        return f"{v:,.0f}" if float(v).is_integer() else f"{v:,.1f}"
    return f"{v:.4f}"


def _stat_rows(summaries: Mapping[str, StatsSummary], stats: Sequence[str]) -> list[dict]:
    cells = {k: s.cells() for k, s in summaries.items()}
    return [{"stat": st, **{k: c[st] for k, c in cells.items()}} for st in stats]


def _cohort_stat_names(percentiles=COHORT_PERCENTILES) -> list[str]:
    return ["n", "pct_zero", *[pct_label(q) for q in percentiles], "max", "mean", "sd"]


def _stat_table(name: str, title: str, summaries: Mapping[str, StatsSummary], stats: Sequence[str]) -> Table:
    return Table(name, title, ["stat", *summaries], _stat_rows(summaries, stats), kinds={"stat": TEXT},
                 row_key="stat", row_kinds={**_STAT_KINDS, **{s: MONEY for s in stats if s not in _STAT_KINDS}})


# -- cohort tables ---------------------------------------------------------------------------------------------


def _by_year(expenses: np.ndarray, masks: Mapping[int, np.ndarray], years) -> dict[str, StatsSummary]:
    out = {}
    for t, y in enumerate(years):
        vals = expenses[masks[t], t] if masks is not None else expenses[:, t]
        if vals.size:
            out[str(y)] = descriptive_stats(vals, True, COHORT_PERCENTILES)
    return out


def descriptive_tables(cohort: Cohort) -> list[Table]:
    """Per-year annual-expense statistics: whole cohort, by sex, and by sex and age range.

    A person's age range in a year is the one containing the age attributed
    to that year (completed age on January 1).
    """
    years = cohort.study_years
    exp = cohort.expenses
    stats = _cohort_stat_names()
    tables = [_stat_table("cohort_all", "Annual expenses, all persons (R$)", _by_year(exp, None, years), stats)]
    ages = np.stack([cohort.ages_in_year(y) for y in years], axis=1) if len(cohort) else np.zeros((0, len(years)))
    for sex in SEXES:
        is_sex = cohort.sex_codes == sex.code
        masks = {t: is_sex for t in range(len(years))}
        tables.append(_stat_table(f"cohort_{sex.value}", f"Annual expenses, sex {sex.value} (R$)",
                                  _by_year(exp, masks, years), stats))
    for sex in SEXES:
        is_sex = cohort.sex_codes == sex.code
        for r in AGE_RANGES:
            masks = {t: is_sex & (ages[:, t] >= r.lo) & (ages[:, t] <= r.hi) for t in range(len(years))}
            summaries = _by_year(exp, masks, years)
            if summaries:
                tables.append(_stat_table(f"cohort_{sex.value}_{r.value}",
                                          f"Annual expenses, sex {sex.value}, ages {r.value} (R$)", summaries, stats))
    return tables


def error_bar_feed(cohort: Cohort) -> list[dict]:
    """Mean, sd and n of positive expenses per (year, sex, age range), for error-bar plots."""
    rows = []
    exp = cohort.expenses
    for t, y in enumerate(cohort.study_years):
        ages = cohort.ages_in_year(y)
        for sex in SEXES:
            for r in AGE_RANGES:
                m = (cohort.sex_codes == sex.code) & (ages >= r.lo) & (ages <= r.hi)
                vals = exp[m, t]
                vals = vals[vals > 0]
                if vals.size == 0:
                    continue
                s = descriptive_stats(vals, True, ())
                rows.append({"year": y, "sex": sex.value, "age_range": r.value, "n": int(vals.size),
                             "mean": round(s.mean / CENTS, 2), "sd": None if s.sd is None else round(s.sd / CENTS, 2)})
    return rows


def level_share_table(cohort: Cohort, window=None, breaks=DEFAULT_BREAKS) -> Table:
    """Person-years per expense level within each simulation stratum.

    Counts cover exactly what the empirical distributions pool: every study
    year of each stratum member, with strata assigned by dominant age range
    over ``window`` (default: last three study years).
    """
    if not len(cohort):
        raise ValueError("empty cohort")
    years = cohort.study_years
    if window is None:
        window = (years[max(len(years) - 3, 0)], years[-1])
    codes = cohort.stratum_codes(window[0], window[1])
    levels = cohort.levels(breaks)
    rows = []
    for s in SIMULATION_STRATA:
        lv = levels[codes == s.index].ravel()
        counts = np.bincount(lv, minlength=len(LEVELS)) if lv.size else np.zeros(len(LEVELS), dtype=np.int64)
        n = int(counts.sum())
        row = {"stratum": s.label, "n": n}
        for l, c in zip(LEVELS, counts.tolist()):
            row[l.label] = c
        for l, c in zip(LEVELS, counts.tolist()):
            row[f"pct_{l.label}"] = 100.0 * c / n if n else None
        rows.append(row)
    cols = ["stratum", "n", *[l.label for l in LEVELS], *[f"pct_{l.label}" for l in LEVELS]]
    kinds = {"stratum": TEXT, "n": COUNT, **{l.label: COUNT for l in LEVELS}, **{f"pct_{l.label}": PCT for l in LEVELS}}
    return Table("level_shares", f"Person-years by expense level and stratum, {years[0]}-{years[-1]}", cols, rows, kinds)


# -- study tables ----------------------------------------------------------------------------------------------


def _balance_stat_names() -> list[str]:
    return ["n0", "pct_zero", *[pct_label(q) for q in BALANCE_PERCENTILES], "max", "mean", "sd"]


def _moment_table(name: str, title: str, groups: Mapping[str, Sequence[StatsSummary]], stats: Sequence[str]) -> Table:
    rows = []
    for st in stats:
        row = {"stat": st}
        for g, summaries in groups.items():
            m = moments(s.cells()[st] for s in summaries)
            row[f"{g}_mean"], row[f"{g}_sd"] = m.mean, m.sd
        rows.append(row)
    cols = ["stat", *[f"{g}_{x}" for g in groups for x in ("mean", "sd")]]
    return Table(name, title, cols, rows, kinds={"stat": TEXT}, row_key="stat",
                 row_kinds={**_STAT_KINDS, **{s: MONEY for s in stats if s not in _STAT_KINDS}})


def balance_snapshots(study: StudyResult, ages: Sequence[int] | None = None) -> Table:
    """Account balance at selected ages: zero counts and positive-balance statistics, mean and sd over replications."""
    available = study.params.simulated_snapshot_ages
    ages = tuple(available if ages is None else ages)
    for a in ages:
        if a not in available:
            raise ValueError(f"no balance snapshot at age {a}; simulated snapshots: {list(available)}")
    groups = {f"age{a}": [r.snapshot_stats[a] for r in study.replications] for a in ages}
    t = _moment_table("balance_snapshots", "Account balance by age (R$), mean and sd over replications",
                      groups, _balance_stat_names())
    t.notes.append(f"replications: {study.n_replications}; lives per replication: {study.params.n_lives}")
    return t


@dataclass(frozen=True)
class CiUsageRow:
    count: int
    n_lives: Moments
    pct_lives: Moments
    cum_pct_lives: Moments
    amount: Moments
    pct_amount: Moments
    cum_pct_amount: Moments
    per_life: Moments


def ci_usage_rows(study: StudyResult) -> list[CiUsageRow]:
    """Catastrophic-insurance use by number of years used, 0..max observed.

    Percentages and cumulative percentages are computed inside each
    replication and then averaged. Amount shares are undefined in a
    replication with no insurance payments, and the per-life mean is
    undefined in a replication where no life has that usage count.
    """
    reps = study.replications
    top = max(int(np.flatnonzero(r.ci_counts).max()) for r in reps)
    per = []
    for r in reps:
        n = r.ci_counts[: top + 1].astype(np.float64)
        amt = r.ci_amounts[: top + 1].astype(np.float64)
        total_n, total_amt = n.sum(), amt.sum()
        cum_n, cum_amt = np.cumsum(r.ci_counts[: top + 1]), np.cumsum(r.ci_amounts[: top + 1])
        per.append({
            "n": n,
            "pct": 100.0 * n / total_n,
            "cum_pct": 100.0 * cum_n / total_n,
            "amt": amt,
            "pct_amt": 100.0 * amt / total_amt if total_amt else None,
            "cum_pct_amt": 100.0 * cum_amt / total_amt if total_amt else None,
            "per_life": [a / c if c else None for a, c in zip(amt.tolist(), n.tolist())],
        })

    def col(key, c):
        return moments(None if p[key] is None else p[key][c] for p in per)

    rows = []
    for c in range(top + 1):
        rows.append(CiUsageRow(c, col("n", c), col("pct", c), col("cum_pct", c), col("amt", c), col("pct_amt", c),
                               col("cum_pct_amt", c), col("per_life", c)))
    return rows


def ci_usage_table(study: StudyResult) -> Table:
    rows = []
    for r in ci_usage_rows(study):
        rows.append({
            "uses": r.count,
            "lives_mean": r.n_lives.mean, "lives_sd": r.n_lives.sd,
            "pct_lives": r.pct_lives.mean, "cum_pct_lives": r.cum_pct_lives.mean,
            "amount_mean": r.amount.mean, "amount_sd": r.amount.sd,
            "pct_amount": r.pct_amount.mean, "cum_pct_amount": r.cum_pct_amount.mean,
            "per_life_mean": r.per_life.mean, "per_life_sd": r.per_life.sd,
        })
    cols = list(rows[0])
    kinds = {"uses": COUNT, "lives_mean": COUNT, "lives_sd": REAL, "pct_lives": PCT, "cum_pct_lives": PCT,
             "amount_mean": MONEY, "amount_sd": MONEY, "pct_amount": PCT, "cum_pct_amount": PCT,
             "per_life_mean": MONEY, "per_life_sd": MONEY}
    return Table("ci_usage", "Catastrophic insurance use by number of years used, mean and sd over replications",
                 cols, rows, kinds)


@dataclass(frozen=True)
class CoverageSummary:
    table: Table
    skewness: float | None
    fences: tuple[float, float, float, float]  # q1, q3, lower, upper (cents)
    outliers: np.ndarray  # pooled final balances outside the fences, cents

    def to_dict(self) -> dict:
        q1, q3, lo, hi = self.fences
        return {
            "final_balance_skewness": self.skewness,
            "tukey": {"q1": q1 / CENTS, "q3": q3 / CENTS, "lower": lo / CENTS, "upper": hi / CENTS,
                      "n_outliers": int(self.outliers.size),
                      "outliers": [round(v / CENTS, 2) for v in self.outliers.tolist()]},
        }


def coverage_summary(study: StudyResult) -> CoverageSummary:
    """Final balance, HSA-paid and insurance-paid totals per life, plus shape of the pooled final balances."""
    groups = {col: [r.coverage[col] for r in study.replications] for col in ("balance", "hsa", "ci")}
    table = _moment_table("coverage", "Balance at 65, expenses paid by the account and by the insurance (R$)",
                          groups, _balance_stat_names())
    balances = study.pooled("final_balance")
    f = tukey_outliers(balances, 1.5)
    table.notes.append(f"skewness of pooled final balances: {_text_cell(skewness(balances), REAL)}; "
                       f"outliers beyond 1.5 IQR: {f.n_outliers}")
    return CoverageSummary(table, skewness(balances), (f.q1, f.q3, f.lower, f.upper), f.outliers)


# -- plot feeds ------------------------------------------------------------------------------------------------


def histogram_feed(values: np.ndarray, bins: int = 50, log: bool = False, min_value: int = 0) -> dict:
    """Histogram of money values in R$; with ``log`` the natural log of values of at least ``min_value`` cents."""
    v = np.asarray(values, dtype=np.float64)
    excluded = int(np.count_nonzero(v < min_value))
    v = v[v >= min_value] / CENTS
    if log:
        v = np.log(v)
    if v.size == 0:
        return {"edges": [], "counts": [], "n": 0, "excluded": excluded, "log": log}
    counts, edges = np.histogram(v, bins=bins)
    return {"edges": edges.round(6).tolist(), "counts": counts.tolist(), "n": int(v.size), "excluded": excluded,
            "log": log}


def scatter_feed(study: StudyResult, replications: int = 1) -> list[dict]:
    """Total expense against insurance share per life, keyed by number of insurance years."""
    rows = []
    for r in study.replications[:replications]:
        lv = r.lives
        for e, c, k in zip(lv.expense_total.tolist(), lv.ci_total.tolist(), lv.ci_count.tolist()):
            rows.append({"replication": r.index, "total_expense": e / CENTS, "ci_share": (c / e) if e else 0.0,
                         "ci_uses": k})
    return rows


def plot_feeds(study: StudyResult, bins: int = 50) -> dict:
    ci = study.pooled("ci_total")
    return {
        "final_balance_hist": histogram_feed(study.pooled("final_balance"), bins),
        "ci_severity_hist": histogram_feed(ci[ci > 0], bins),
        # coverages under R$1.00 are left out of the log view
        "ci_severity_log_hist": histogram_feed(ci, bins, log=True, min_value=CENTS),
        "scatter": scatter_feed(study),
    }


# -- assembly --------------------------------------------------------------------------------------------------


def report_metadata(synthetic: bool = True, extra: Mapping | None = None) -> dict:
    return {
        "synthetic_calibrated": synthetic,
        "disclaimer": ("tables are computed from synthetic data calibrated to published summary statistics; "
                       "they do not reproduce results obtained on the original claims data") if synthetic else "",
        "methods": METHODS,
        **(dict(extra) if extra else {}),
    }


def study_tables(study: StudyResult) -> tuple[list[Table], CoverageSummary]:
    cov = coverage_summary(study)
    return [balance_snapshots(study), ci_usage_table(study), cov.table], cov


def write_report(outdir, tables: Sequence[Table], metadata: Mapping, extras: Mapping[str, object] | None = None
                 ) -> list[Path]:
    """Write ``<name>.txt`` and ``<name>.json`` per table plus ``metadata.json`` and extra JSON feeds."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in tables:
        p = out / f"{t.name}.txt"
        p.write_text(t.render(), encoding="utf-8")
        q = out / f"{t.name}.json"
        q.write_text(json.dumps({"title": t.title, "columns": t.columns, "rows": t.json_rows()}, indent=1) + "\n",
                     encoding="utf-8")
        written += [p, q]
    for name, obj in (extras or {}).items():
        p = out / f"{name}.json"
        p.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")
        written.append(p)
    p = out / "metadata.json"
    p.write_text(json.dumps(metadata, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    written.append(p)
    return written

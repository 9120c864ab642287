"""Pairwise and order-2 expense-level transition estimates.

Counts are the source of truth; probabilities are row-normalised counts.
Order-2 rows are indexed by the ordered pair (level two years back, level
last year) as ``4 * k + m``.
"""

from __future__ import annotations

import datetime as dt
import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping

import numpy as np

from .core import (
    DEFAULT_BREAKS,
    LEVELS,
    N_LEVELS,
    SIMULATION_STRATA,
    ExpenseLevel,
    Stratum,
    age_at,
)
from .ingest import Cohort, Person

OBSERVED = "observed"
FALLBACK_ORDER1 = "fallback_order1"
FALLBACK_POOLED = "fallback_pooled"
EMPTY = "empty"  # raw rows only; never present after complete_model

DEFAULT_POLICY = ("order1", "pooled", "uniform")

PersonFilter = Callable[[Person], bool]


class EstimationError(ValueError):
    pass


def everyone(person: Person) -> bool:
    return True


def age_between(lo: int, hi: int, reference: dt.date) -> PersonFilter:
    """Filter persons whose completed age on ``reference`` lies in ``[lo, hi]``."""

    def accept(person: Person) -> bool:
        return reference >= person.birth_date and lo <= age_at(person.birth_date, reference) <= hi

    accept.__name__ = f"age_{lo}_{hi}"
    return accept


def mid_window(cohort: Cohort) -> dt.date:
    """July 1 of the middle study year, the reference date for window-wide age filters."""
    years = cohort.study_years
    return dt.date(years[len(years) // 2], 7, 1)


def row_normalize(counts: np.ndarray) -> np.ndarray:
    """Row-normalise; rows with zero total become NaN (flagged, not invented)."""
    counts = np.asarray(counts, dtype=np.int64)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = counts / totals
    probs[totals[:, 0] == 0] = np.nan
    return probs


@dataclass(frozen=True, eq=False)
class PairwiseMatrix:
    origin_year: int
    destination_year: int
    counts: np.ndarray  # (4, 4) int64

    @property
    def probs(self) -> np.ndarray:
        return row_normalize(self.counts)

    @property
    def empty_rows(self) -> np.ndarray:
        return self.counts.sum(axis=1) == 0

    @property
    def gap(self) -> int:
        return self.destination_year - self.origin_year

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def mean_diagonal(self) -> float:
        """Average staying probability over non-empty origin levels."""
        p = self.probs
        diag = np.diag(p)[~self.empty_rows]
        return float(diag.mean()) if diag.size else float("nan")

    def to_dict(self) -> dict:
        p = self.probs
        return {
            "origin_year": self.origin_year,
            "destination_year": self.destination_year,
            "counts": self.counts.tolist(),
            "probs": [[None if np.isnan(x) else float(x) for x in row] for row in p],
            "empty_rows": [LEVELS[i].label for i in np.flatnonzero(self.empty_rows)],
        }

    def heatmap_rows(self) -> list[dict]:
        p = self.probs
        return [
            {
                "origin_year": self.origin_year,
                "destination_year": self.destination_year,
                "origin": LEVELS[k].label,
                "destination": LEVELS[l].label,
                "probability": None if np.isnan(p[k, l]) else float(p[k, l]),
            }
            for k in range(N_LEVELS)
            for l in range(N_LEVELS)
        ]


def _selected(cohort: Cohort, person_filter: PersonFilter | None) -> np.ndarray:
    if person_filter is None:
        return np.ones(len(cohort), dtype=bool)
    return np.fromiter((bool(person_filter(p)) for p in cohort.persons), dtype=bool, count=len(cohort))


def estimate_pairwise(
    cohort: Cohort,
    year_i: int,
    year_j: int,
    person_filter: PersonFilter | None = None,
    breaks=DEFAULT_BREAKS,
) -> PairwiseMatrix:
    if not year_i < year_j:
        raise ValueError(f"origin year {year_i} must precede destination year {year_j}")
    i, j = cohort.year_index(year_i), cohort.year_index(year_j)
    mask = _selected(cohort, person_filter)
    if not mask.any():
        raise EstimationError("empty estimation set")
    levels = cohort.levels(breaks)[mask]
    counts = np.zeros((N_LEVELS, N_LEVELS), dtype=np.int64)
    np.add.at(counts, (levels[:, i], levels[:, j]), 1)
    return PairwiseMatrix(year_i, year_j, counts)


@dataclass(frozen=True, eq=False)
class Order2Matrix:
    stratum: Stratum
    years: tuple[int, int, int]
    counts: np.ndarray  # (16, 4) int64
    probs: np.ndarray  # (16, 4) float64, NaN rows while empty
    row_provenance: tuple[str, ...]

    @staticmethod
    def row_index(k: ExpenseLevel | int, m: ExpenseLevel | int) -> int:
        return int(k) * N_LEVELS + int(m)

    def row(self, k, m) -> np.ndarray:
        return self.probs[self.row_index(k, m)]

    @property
    def order1_counts(self) -> np.ndarray:
        """Counts of the last transition (middle year -> last year), summed over the first level."""
        return self.counts.reshape(N_LEVELS, N_LEVELS, N_LEVELS).sum(axis=0)

    @property
    def n_persons(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {
            "stratum": self.stratum.label,
            "sex": self.stratum.sex.value,
            "age_range": self.stratum.age_range.value,
            "years": list(self.years),
            "rows": [f"{LEVELS[k].label},{LEVELS[m].label}" for k in range(N_LEVELS) for m in range(N_LEVELS)],
            "counts": self.counts.tolist(),
            "probs": [[None if np.isnan(x) else float(x) for x in row] for row in self.probs],
            "row_provenance": list(self.row_provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Order2Matrix:
        probs = np.array([[np.nan if x is None else x for x in row] for row in d["probs"]], dtype=np.float64)
        return cls(
            Stratum.parse(d["stratum"]),
            tuple(d["years"]),
            np.array(d["counts"], dtype=np.int64),
            probs,
            tuple(d["row_provenance"]),
        )


def _triple_check(cohort: Cohort, years) -> tuple[int, int, int]:
    years = tuple(int(y) for y in years)
    if len(years) != 3 or years[1] != years[0] + 1 or years[2] != years[1] + 1:
        raise ValueError(f"need three consecutive years, got {years}")
    for y in years:
        cohort.year_index(y)
    return years


def raw_order2(stratum: Stratum, years, counts: np.ndarray) -> Order2Matrix:
    totals = counts.sum(axis=1)
    provenance = tuple(OBSERVED if t > 0 else EMPTY for t in totals)
    return Order2Matrix(stratum, years, counts, row_normalize(counts), provenance)


def _order2_counts(levels: np.ndarray, idx: tuple[int, int, int]) -> np.ndarray:
    counts = np.zeros((N_LEVELS * N_LEVELS, N_LEVELS), dtype=np.int64)
    a, b, c = idx
    np.add.at(counts, (levels[:, a] * N_LEVELS + levels[:, b], levels[:, c]), 1)
    return counts


def estimate_order2(cohort: Cohort, years, stratum: Stratum, breaks=DEFAULT_BREAKS) -> Order2Matrix:
    """Raw order-2 counts for one stratum over three consecutive years.

    Stratum membership is sex plus the dominant age range over the same three
    years. Empty rows are left empty (NaN probabilities, provenance ``empty``).
    """
    years = _triple_check(cohort, years)
    codes = cohort.stratum_codes(years[0], years[2])
    mask = codes == stratum.index
    levels = cohort.levels(breaks)[mask].astype(np.int64)
    idx = tuple(cohort.year_index(y) for y in years)
    return raw_order2(stratum, years, _order2_counts(levels, idx))


@dataclass(frozen=True, eq=False)
class TransitionModel:
    matrices: Mapping[Stratum, Order2Matrix]
    years: tuple[int, int, int]
    breaks: tuple[int, int, int] = DEFAULT_BREAKS
    policy: tuple[str, ...] = DEFAULT_POLICY

    def __post_init__(self):
        if set(self.matrices) != set(SIMULATION_STRATA):
            raise ValueError("a transition model needs exactly the 16 simulation strata")
        for m in self.matrices.values():
            if EMPTY in m.row_provenance:
                raise ValueError(f"stratum {m.stratum.label} has unfilled rows")

    def __getitem__(self, stratum: Stratum) -> Order2Matrix:
        return self.matrices[stratum]

    @cached_property
    def _cumulative(self) -> np.ndarray:
        probs = np.stack([self.matrices[s].probs for s in SIMULATION_STRATA])
        cum = np.cumsum(probs, axis=2)
        cum[..., -1] = 1.0
        cum.setflags(write=False)
        return cum

    def cumulative(self) -> np.ndarray:
        """Cumulative row probabilities, shape ``(16 strata, 16 rows, 4)``, last column exactly 1 (read-only)."""
        return self._cumulative

    def fallback_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.matrices.values():
            for p in m.row_provenance:
                out[p] = out.get(p, 0) + 1
        return out

    def to_dict(self) -> dict:
        return {
            "years": list(self.years),
            "breaks": list(self.breaks),
            "policy": list(self.policy),
            "provenance_summary": self.fallback_counts(),
            "strata": [self.matrices[s].to_dict() for s in SIMULATION_STRATA],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> TransitionModel:
        mats = [Order2Matrix.from_dict(x) for x in d["strata"]]
        return cls(
            {m.stratum: m for m in mats},
            tuple(d["years"]),
            tuple(d.get("breaks", DEFAULT_BREAKS)),
            tuple(d.get("policy", DEFAULT_POLICY)),
        )


def complete_model(raw: Mapping[Stratum, Order2Matrix] | Iterable[Order2Matrix], policy=DEFAULT_POLICY,
                   breaks=DEFAULT_BREAKS) -> TransitionModel:
    """Fill every empty row so simulation never meets an undefined row.

    Rules run in ``policy`` order:

    ``order1``
        the stratum's first-order row for the last observed level, taken
        from the same three-year window's final transition;
    ``pooled``
        the order-2 row pooled over all 16 strata;
    ``uniform``
        equal probability for the four levels.

    ``uniform`` is reported as ``fallback_pooled`` provenance.
    """
    if not isinstance(raw, Mapping):
        raw = {m.stratum: m for m in raw}
    if set(raw) != set(SIMULATION_STRATA):
        raise ValueError("raw matrices must cover the 16 simulation strata")
    policy = tuple(policy)
    unknown = set(policy) - set(DEFAULT_POLICY)
    if unknown:
        raise ValueError(f"unknown fallback rules {sorted(unknown)}")
    years = {m.years for m in raw.values()}
    if len(years) != 1:
        raise ValueError("raw matrices disagree on estimation years")
    pooled_counts = sum(m.counts for m in raw.values())
    pooled = row_normalize(pooled_counts)
    uniform = np.full(N_LEVELS, 1.0 / N_LEVELS)

    completed = {}
    for stratum in SIMULATION_STRATA:
        m = raw[stratum]
        probs = m.probs.copy()
        provenance = list(m.row_provenance)
        order1 = row_normalize(m.order1_counts)
        for r in range(N_LEVELS * N_LEVELS):
            if m.counts[r].sum() > 0:
                provenance[r] = OBSERVED
                continue
            last = r % N_LEVELS
            for rule in policy:
                if rule == "order1" and not np.isnan(order1[last]).any():
                    probs[r], provenance[r] = order1[last], FALLBACK_ORDER1
                    break
                if rule == "pooled" and not np.isnan(pooled[r]).any():
                    probs[r], provenance[r] = pooled[r], FALLBACK_POOLED
                    break
                if rule == "uniform":
                    probs[r], provenance[r] = uniform, FALLBACK_POOLED
                    break
            else:
                raise EstimationError(f"fallback policy {policy} left row {r} of {stratum.label} empty")
        completed[stratum] = Order2Matrix(stratum, m.years, m.counts, probs, tuple(provenance))
    return TransitionModel(completed, next(iter(years)), tuple(breaks), policy)


def estimate_model(cohort: Cohort, years=None, breaks=DEFAULT_BREAKS, policy=DEFAULT_POLICY) -> TransitionModel:
    """Homogeneous order-2 model from one three-year window (default: the last three study years)."""
    if years is None:
        years = cohort.study_years[-3:]
    years = _triple_check(cohort, years)
    codes = cohort.stratum_codes(years[0], years[2])
    levels = cohort.levels(breaks).astype(np.int64)
    idx = tuple(cohort.year_index(y) for y in years)
    raw = {}
    for s in SIMULATION_STRATA:
        raw[s] = raw_order2(s, years, _order2_counts(levels[codes == s.index], idx))
    return complete_model(raw, policy, breaks)


@dataclass(frozen=True, eq=False)
class PersistenceReport:
    matrices: tuple[PairwiseMatrix, ...]
    label: str = "all"

    def by_gap(self) -> dict[int, list[PairwiseMatrix]]:
        out: dict[int, list[PairwiseMatrix]] = {}
        for m in self.matrices:
            out.setdefault(m.gap, []).append(m)
        return out

    def mean_diagonal_by_gap(self) -> dict[int, float]:
        return {g: float(np.mean([m.mean_diagonal() for m in ms])) for g, ms in sorted(self.by_gap().items())}

    def homogeneity(self) -> dict[int, float]:
        """Largest absolute probability difference between matrices sharing a gap (diagnostic only)."""
        out = {}
        for g, ms in sorted(self.by_gap().items()):
            worst = 0.0
            for a, b in itertools.combinations(ms, 2):
                d = np.abs(a.probs - b.probs)
                if np.isfinite(d).any():
                    worst = max(worst, float(np.nanmax(d)))
            out[g] = worst
        return out

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "matrices": [m.to_dict() for m in self.matrices],
            "mean_diagonal_by_gap": {str(k): v for k, v in self.mean_diagonal_by_gap().items()},
            "homogeneity_max_abs_diff_by_gap": {str(k): v for k, v in self.homogeneity().items()},
        }

    def heatmap_rows(self) -> list[dict]:
        return [dict(row, group=self.label) for m in self.matrices for row in m.heatmap_rows()]


def persistence_report(cohort: Cohort, person_filter: PersonFilter | None = None, breaks=DEFAULT_BREAKS,
                       label: str = "all") -> PersistenceReport:
    """Pairwise matrices for every pair of distinct study years."""
    mats = tuple(
        estimate_pairwise(cohort, a, b, person_filter, breaks)
        for a, b in itertools.combinations(cohort.study_years, 2)
    )
    return PersistenceReport(mats, label)

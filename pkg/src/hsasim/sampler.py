"""Per-stratum empirical expense distributions and the draws made from them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import (
    DEFAULT_BREAKS,
    N_LEVELS,
    SIMULATION_RANGES,
    SIMULATION_STRATA,
    AgeRange,
    ExpenseLevel,
    Sex,
    Stratum,
    age_in_year,
    classify_levels,
)
from .ingest import Cohort
from .rng import Stream


class EmptyStratumError(ValueError):
    pass


class EmptySliceError(LookupError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Sorted multiset of annual expenses with one contiguous slice per level.

    ``bounds[l]:bounds[l + 1]`` indexes the values of level ``l``.
    """

    stratum: Stratum
    values: np.ndarray  # sorted int64 cents
    bounds: np.ndarray  # (5,) int64
    breaks: tuple[int, int, int] = DEFAULT_BREAKS

    @classmethod
    def from_values(cls, stratum: Stratum, values, breaks=DEFAULT_BREAKS) -> EmpiricalDistribution:
        v = np.sort(np.asarray(values, dtype=np.int64))
        if v.size and v[0] < 0:
            raise ValueError("expenses must be non-negative")
        # bounds[l+1] = count of values at level <= l = count of values <= breaks[l]
        inner = np.searchsorted(v, np.asarray(breaks, dtype=np.int64), side="right")
        bounds = np.concatenate([[0], inner, [v.size]]).astype(np.int64)
        return cls(stratum, v, bounds, tuple(breaks))

    def __len__(self) -> int:
        return int(self.values.size)

    def level_slice(self, level: ExpenseLevel | int) -> np.ndarray:
        level = int(level)
        return self.values[self.bounds[level]:self.bounds[level + 1]]

    def level_counts(self) -> np.ndarray:
        return np.diff(self.bounds)

    def log_view(self) -> dict:
        """Natural-log expenses in R$ for plotting; zeros are counted, not logged."""
        positive = self.values[self.values > 0]
        return {
            "stratum": self.stratum.label,
            "n": len(self),
            "n_zero": int(len(self) - positive.size),
            "log_breaks": [float(np.log(b / 100)) for b in self.breaks],
            "log_values": np.log(positive / 100).round(6).tolist(),
        }


def _stratum_values(cohort: Cohort, stratum: Stratum, window) -> np.ndarray:
    codes = cohort.stratum_codes(*window)
    return cohort.expenses[codes == stratum.index].ravel()


def _window(cohort: Cohort, window) -> tuple[int, int]:
    if window is None:
        years = cohort.study_years[-3:]
        return years[0], years[-1]
    return int(window[0]), int(window[1])


def build_empirical(cohort: Cohort, stratum: Stratum, window=None, breaks=DEFAULT_BREAKS) -> EmpiricalDistribution:
    """Pool every study-year expense of the stratum's members.

    Members are persons of the stratum's sex whose dominant age range over
    ``window`` (default: last three study years) is the stratum's range.
    """
    if not len(cohort):
        raise EmptyStratumError("empty cohort")
    values = _stratum_values(cohort, stratum, _window(cohort, window))
    if values.size == 0:
        raise EmptyStratumError(f"stratum {stratum.label} has no members")
    return EmpiricalDistribution.from_values(stratum, values, breaks)


def sample_within_level(dist: EmpiricalDistribution, level, rng: Stream, fallback: DistributionSet | None = None,
                        size: int | None = None):
    """Uniform draw from the level's slice of ``dist``.

    With ``fallback`` given, an empty slice is replaced by the first
    non-empty pool of the chain described in :class:`DistributionSet`.
    One stream value is consumed per draw either way.
    """
    level = ExpenseLevel(int(level))
    pool = dist.level_slice(level)
    if pool.size == 0:
        if fallback is None:
            raise EmptySliceError(f"no {level.label} values in stratum {dist.stratum.label}")
        pool = fallback.pool(dist.stratum, level)
    idx = rng.integers(pool.size, size=size)
    if size is None:
        return int(pool[idx])
    return pool[idx]


# Fallback source labels
OWN = "own"
ADJACENT = "adjacent_range"
SEX_POOLED = "sex_pooled"
ALL_POOLED = "all_pooled"


@dataclass(frozen=True, eq=False)
class DistributionSet:
    """Distributions for all 16 simulation strata plus resolved sampling pools.

    For each (stratum, level) the pool is the stratum's own slice if
    non-empty, else in order: the same-sex adjacent age range's slice (older
    neighbour preferred when both qualify), the level pooled over the same
    sex, the level pooled over everyone. All pools are level slices, so every
    draw classifies to the requested level.

    Pools are stored concatenated in ``pool_values`` with offsets
    ``pool_start[s, l]`` and sizes ``pool_size[s, l]`` for the vectorised engine.
    """

    distributions: Mapping[Stratum, EmpiricalDistribution]
    breaks: tuple[int, int, int]
    pool_values: np.ndarray
    pool_start: np.ndarray  # (16, 4) int64
    pool_size: np.ndarray  # (16, 4) int64
    pool_source: tuple[tuple[str, ...], ...]  # (16, 4)

    def __getitem__(self, stratum: Stratum) -> EmpiricalDistribution:
        return self.distributions[stratum]

    def pool(self, stratum: Stratum, level) -> np.ndarray:
        s, l = stratum.index, int(level)
        size = self.pool_size[s, l]
        if size == 0:
            raise EmptySliceError(
                f"no {ExpenseLevel(l).label} values in stratum {stratum.label} or any fallback pool"
            )
        start = self.pool_start[s, l]
        return self.pool_values[start:start + size]

    def sample(self, stratum: Stratum, level, rng: Stream, size: int | None = None):
        return sample_within_level(self.distributions[stratum], level, rng, fallback=self, size=size)

    @classmethod
    def from_distributions(cls, dists: Mapping[Stratum, EmpiricalDistribution], breaks=DEFAULT_BREAKS):
        if set(dists) != set(SIMULATION_STRATA):
            raise ValueError("need a distribution (possibly empty) for each of the 16 strata")
        chunks: list[np.ndarray] = []
        offset = 0

        def add(arr: np.ndarray) -> tuple[int, int]:
            nonlocal offset
            start = offset
            chunks.append(arr)
            offset += arr.size
            return start, arr.size

        own = {}
        for s in SIMULATION_STRATA:
            for l in range(N_LEVELS):
                own[s, l] = add(dists[s].level_slice(l))
        sex_pool = {}
        for sex in (Sex.FEMALE, Sex.MALE):
            for l in range(N_LEVELS):
                parts = [dists[s].level_slice(l) for s in SIMULATION_STRATA if s.sex is sex]
                sex_pool[sex, l] = add(np.sort(np.concatenate(parts)))
        all_pool = {}
        for l in range(N_LEVELS):
            parts = [dists[s].level_slice(l) for s in SIMULATION_STRATA]
            all_pool[l] = add(np.sort(np.concatenate(parts)))

        start = np.zeros((len(SIMULATION_STRATA), N_LEVELS), dtype=np.int64)
        size = np.zeros_like(start)
        source = []
        for s in SIMULATION_STRATA:
            row = []
            for l in range(N_LEVELS):
                choice, label = own[s, l], OWN
                if choice[1] == 0:
                    choice, label = _adjacent(s, l, own)
                if choice[1] == 0:
                    choice, label = sex_pool[s.sex, l], SEX_POOLED
                if choice[1] == 0:
                    choice, label = all_pool[l], ALL_POOLED
                start[s.index, l], size[s.index, l] = choice
                row.append(label if choice[1] else "none")
            source.append(tuple(row))
        values = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
        return cls(dict(dists), tuple(breaks), values.astype(np.int64), start, size, tuple(source))

    def fallback_summary(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for row in self.pool_source:
            for label in row:
                out[label] = out.get(label, 0) + 1
        return out

    def export(self) -> dict:
        return {
            "breaks": list(self.breaks),
            "strata": [
                dict(self.distributions[s].log_view(),
                     level_counts=self.distributions[s].level_counts().tolist(),
                     pool_source=list(self.pool_source[s.index]))
                for s in SIMULATION_STRATA
            ],
        }


def _adjacent(stratum: Stratum, level: int, own) -> tuple[tuple[int, int], str]:
    i = SIMULATION_RANGES.index(stratum.age_range)
    for j in (i + 1, i - 1):  # older neighbour first
        if 0 <= j < len(SIMULATION_RANGES):
            cand = own[Stratum(stratum.sex, SIMULATION_RANGES[j]), level]
            if cand[1]:
                return cand, ADJACENT
    return (0, 0), ADJACENT


def build_distributions(cohort: Cohort, window=None, breaks=DEFAULT_BREAKS) -> DistributionSet:
    """Distributions for all 16 strata; strata without members get empty distributions."""
    window = _window(cohort, window)
    dists = {
        s: EmpiricalDistribution.from_values(s, _stratum_values(cohort, s, window), breaks)
        for s in SIMULATION_STRATA
    }
    return DistributionSet.from_distributions(dists, breaks)


@dataclass(frozen=True)
class InitialLife:
    sex: Sex
    history: tuple[ExpenseLevel, ExpenseLevel]
    first_expense: int
    source_id: str = ""


@dataclass(frozen=True, eq=False)
class InitialPool:
    """Persons eligible to seed simulated lives, as parallel arrays."""

    person_ids: tuple[str, ...]
    sex_codes: np.ndarray  # int8
    prev_level: np.ndarray  # int8, penultimate study year
    last_level: np.ndarray  # int8, final study year
    last_expense: np.ndarray  # int64 cents, final study year

    def __len__(self) -> int:
        return len(self.person_ids)

    def life(self, i: int) -> InitialLife:
        return InitialLife(
            Sex.FEMALE if self.sex_codes[i] == 0 else Sex.MALE,
            (ExpenseLevel(int(self.prev_level[i])), ExpenseLevel(int(self.last_level[i]))),
            int(self.last_expense[i]),
            self.person_ids[i],
        )


def initial_pool(cohort: Cohort, age_range: AgeRange = AgeRange.A25_30, breaks=DEFAULT_BREAKS) -> InitialPool:
    """Persons whose age in the final study year falls in ``age_range``."""
    if len(cohort.study_years) < 2:
        raise ValueError("need at least two study years for a two-level history")
    last = cohort.study_years[-1]
    mask = np.array([age_in_year(p.birth_date, last) in age_range for p in cohort.persons], dtype=bool)
    if not mask.any():
        raise EmptyStratumError(f"no cohort members aged {age_range.value} in {last}")
    levels = classify_levels(cohort.expenses[mask][:, -2:], breaks)
    return InitialPool(
        tuple(p.person_id for p, keep in zip(cohort.persons, mask) if keep),
        cohort.sex_codes[mask],
        levels[:, 0],
        levels[:, 1],
        cohort.expenses[mask][:, -1].copy(),
    )


def sample_initial_life(source: Cohort | InitialPool, rng: Stream, breaks=DEFAULT_BREAKS) -> InitialLife:
    """Draw a source person uniformly with replacement and copy sex, last two levels and last expense."""
    pool = source if isinstance(source, InitialPool) else initial_pool(source, breaks=breaks)
    return pool.life(rng.integers(len(pool)))

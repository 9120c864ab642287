"""Loading person-year claims files and selecting the complete-follow-up cohort."""

from __future__ import annotations

import csv
import datetime as dt
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import (
    DEFAULT_BREAKS,
    MoneyFormatError,
    PersonYearRecord,
    Sex,
    Stratum,
    age_at,
    age_in_year,
    classify_levels,
    dominant_age_range,
    format_money,
    parse_money,
)

HEADER = ("person_id", "sex", "birth_date", "year", "expense")

INCOMPLETE = "incomplete follow-up"
AGE_WINDOW = "age window"


class IngestError(ValueError):
    pass


class EmptyCohortError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    records: tuple[PersonYearRecord, ...]
    study_years: tuple[int, ...]

    def __post_init__(self):
        years = self.study_years
        if not years or list(years) != list(range(years[0], years[0] + len(years))):
            raise IngestError(f"study years must be consecutive, got {years}")
        allowed = set(years)
        for r in self.records:
            if r.year not in allowed:
                raise IngestError(f"record year {r.year} outside study years {years}")

    @classmethod
    def from_records(cls, records: Iterable[PersonYearRecord], study_years=None) -> Dataset:
        records = tuple(records)
        if study_years is None:
            if not records:
                raise IngestError("cannot infer study years from an empty dataset")
            years = sorted({r.year for r in records})
            study_years = tuple(range(years[0], years[-1] + 1))
        _check_consistency(records)
        return cls(records, tuple(study_years))

    @property
    def n_persons(self) -> int:
        return len({r.person_id for r in self.records})


def _check_consistency(records: Iterable[PersonYearRecord], lines: Mapping | None = None):
    seen: dict[tuple[str, int], int] = {}
    identity: dict[str, tuple[Sex, dt.date]] = {}
    for i, r in enumerate(records):
        where = f"line {lines[i]}: " if lines else ""
        key = (r.person_id, r.year)
        if key in seen:
            raise IngestError(f"{where}duplicate person-year ({r.person_id}, {r.year})")
        seen[key] = i
        known = identity.setdefault(r.person_id, (r.sex, r.birth_date))
        if known != (r.sex, r.birth_date):
            raise IngestError(f"{where}inconsistent sex/birth_date for person {r.person_id}")


def load_person_years(path) -> Dataset:
    """Read a ``person_id,sex,birth_date,year,expense`` CSV file."""
    path = Path(path)
    records: list[PersonYearRecord] = []
    lines: dict[int, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise IngestError(f"line 1: expected header {','.join(HEADER)}, got {','.join(header)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise IngestError(f"line {lineno}: expected {len(HEADER)} fields, got {len(row)}")
            pid, sex, birth, year, expense = (c.strip() for c in row)
            try:
                rec = PersonYearRecord(
                    person_id=pid,
                    sex=Sex(sex),
                    birth_date=dt.date.fromisoformat(birth),
                    year=int(year),
                    expense=parse_money(expense),
                )
            except MoneyFormatError as exc:
                raise IngestError(f"line {lineno}: {exc}") from None
            except ValueError as exc:
                raise IngestError(f"line {lineno}: malformed row ({exc})") from None
            if not pid:
                raise IngestError(f"line {lineno}: empty person_id")
            lines[len(records)] = lineno
            records.append(rec)
    if not records:
        raise IngestError(f"{path}: no data rows")
    _check_consistency(records, lines)
    return Dataset.from_records(records)


def write_person_years(records: Iterable[PersonYearRecord], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in records:
            w.writerow((r.person_id, r.sex.value, r.birth_date.isoformat(), r.year, format_money(r.expense)))


@dataclass(frozen=True)
class Person:
    person_id: str
    sex: Sex
    birth_date: dt.date
    expenses: tuple[int, ...]  # cents, one per study year


@dataclass(frozen=True, eq=False)
class Cohort:
    """Persons with complete follow-up inside the age window.

    Array views (``expenses``, ``sex_codes``) and per-person age ranges are
    computed once and cached.
    """

    persons: tuple[Person, ...]
    study_years: tuple[int, ...]
    dropped: Mapping[str, int] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        return self.persons == other.persons and self.study_years == other.study_years

    def __hash__(self):
        return hash((self.persons, self.study_years))

    def __len__(self):
        return len(self.persons)

    @property
    def records(self) -> tuple[PersonYearRecord, ...]:
        return tuple(
            PersonYearRecord(p.person_id, p.sex, p.birth_date, y, e)
            for p in self.persons
            for y, e in zip(self.study_years, p.expenses)
        )

    def year_index(self, year: int) -> int:
        try:
            return self.study_years.index(year)
        except ValueError:
            raise ValueError(f"year {year} outside study window {self.study_years}") from None

    @cached_property
    def expenses(self) -> np.ndarray:
        return np.array([p.expenses for p in self.persons], dtype=np.int64).reshape(
            len(self.persons), len(self.study_years)
        )

    @cached_property
    def sex_codes(self) -> np.ndarray:
        return np.array([p.sex.code for p in self.persons], dtype=np.int8)

    def levels(self, breaks=DEFAULT_BREAKS) -> np.ndarray:
        """Level codes with shape ``(n_persons, n_years)``."""
        return classify_levels(self.expenses, breaks)

    def ages_in_year(self, year: int) -> np.ndarray:
        return np.array([age_in_year(p.birth_date, year) for p in self.persons], dtype=np.int64)

    def dominant_ranges(self, first_year: int, last_year: int) -> tuple:
        key = (first_year, last_year)
        cache = self.__dict__.setdefault("_dominant_cache", {})
        if key not in cache:
            by_birth: dict[dt.date, object] = {}
            out = []
            for p in self.persons:
                if p.birth_date not in by_birth:
                    try:
                        by_birth[p.birth_date] = dominant_age_range(p.birth_date, first_year, last_year)
                    except ValueError:  # outside 21..65 for the whole window
                        by_birth[p.birth_date] = None
                out.append(by_birth[p.birth_date])
            cache[key] = tuple(out)
        return cache[key]

    def strata(self, first_year: int, last_year: int) -> tuple[Stratum | None, ...]:
        """Each person's simulation stratum; ``None`` when the dominant range is 21-24 or there is none."""
        out = []
        for p, r in zip(self.persons, self.dominant_ranges(first_year, last_year)):
            out.append(Stratum(p.sex, r) if r is not None and r.lo >= 25 else None)
        return tuple(out)

    def stratum_codes(self, first_year: int, last_year: int) -> np.ndarray:
        """Simulation-stratum index per person, -1 where not in any simulation stratum."""
        return np.array([-1 if s is None else s.index for s in self.strata(first_year, last_year)], dtype=np.int64)


def _group(records: Iterable[PersonYearRecord]) -> dict[str, list[PersonYearRecord]]:
    by_person: dict[str, list[PersonYearRecord]] = {}
    for r in records:
        by_person.setdefault(r.person_id, []).append(r)
    return by_person


def filter_cohort(data: Dataset | Cohort, min_age_at_start: int = 25, max_age_at_end: int = 65) -> Cohort:
    """Keep persons observed in every study year and inside the age window.

    Age is checked on January 1 of the first study year (at least
    ``min_age_at_start``) and on December 31 of the last (at most
    ``max_age_at_end``). A person failing both tests is counted once, under
    incomplete follow-up.
    """
    records = data.records
    years = data.study_years
    if not records:
        raise EmptyCohortError("empty dataset")
    start = dt.date(years[0], 1, 1)
    end = dt.date(years[-1], 12, 31)
    dropped: Counter = Counter()
    kept: list[Person] = []
    for pid, recs in _group(records).items():
        by_year = {r.year: r.expense for r in recs}
        first = recs[0]
        if len(by_year) != len(years) or any(y not in by_year for y in years):
            dropped[INCOMPLETE] += 1
            continue
        if first.birth_date > start or age_at(first.birth_date, start) < min_age_at_start:
            dropped[AGE_WINDOW] += 1
            continue
        if age_at(first.birth_date, end) > max_age_at_end:
            dropped[AGE_WINDOW] += 1
            continue
        kept.append(Person(pid, first.sex, first.birth_date, tuple(by_year[y] for y in years)))
    if not kept:
        raise EmptyCohortError("empty cohort")
    return Cohort(tuple(kept), tuple(years), dict(dropped))

"""Domain vocabulary: money in cents, expense levels, age ranges and strata."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum, IntEnum

import numpy as np

CENTS = 100

# Upper-inclusive level boundaries, in cents: F1=[0,300], F2=(300,1000], F3=(1000,5000], F4=(5000,inf)
DEFAULT_BREAKS: tuple[int, int, int] = (300 * CENTS, 1_000 * CENTS, 5_000 * CENTS)


class MoneyFormatError(ValueError):
    pass


def parse_money(text: str) -> int:
    """Parse a non-negative decimal amount such as ``"1234.5"`` into integer cents.

    At most two fractional digits are accepted; anything finer is rejected
    rather than rounded.
    """
    try:
        value = Decimal(text.strip())
    except (InvalidOperation, AttributeError):
        raise MoneyFormatError(f"not a decimal amount: {text!r}") from None
    if not value.is_finite():
        raise MoneyFormatError(f"not a decimal amount: {text!r}")
    if value < 0:
        raise MoneyFormatError(f"negative amount: {text!r}")
    cents = value * CENTS
    if cents != cents.to_integral_value():
        raise MoneyFormatError(f"expense precision exceeds cents: {text!r}")
    return int(cents)


def format_money(cents: int) -> str:
    """Render cents as decimal text with exactly two fractional digits."""
    cents = int(cents)
    if cents < 0:
        raise MoneyFormatError(f"negative amount: {cents}")
    return f"{cents // CENTS}.{cents % CENTS:02d}"


def reais(amount: int | str) -> int:
    """Whole or decimal R$ amount to cents, e.g. ``reais(2500) == 250_000``."""
    if isinstance(amount, int):
        if amount < 0:
            raise MoneyFormatError(f"negative amount: {amount}")
        return amount * CENTS
    return parse_money(amount)


class ExpenseLevel(IntEnum):
    F1 = 0
    F2 = 1
    F3 = 2
    F4 = 3

    @property
    def label(self) -> str:
        return self.name


LEVELS = tuple(ExpenseLevel)
N_LEVELS = len(LEVELS)


def _check_breaks(breaks) -> tuple[int, int, int]:
    b = tuple(int(x) for x in breaks)
    if len(b) != N_LEVELS - 1 or not (0 <= b[0] < b[1] < b[2]):
        raise ValueError(f"break points must be three increasing non-negative amounts, got {breaks}")
    return b


def classify_level(expense: int, breaks=DEFAULT_BREAKS) -> ExpenseLevel:
    if expense < 0:
        raise ValueError("expense must be non-negative")
    b = _check_breaks(breaks)
    level = 0
    for bound in b:
        if expense > bound:
            level += 1
    return ExpenseLevel(level)


def classify_levels(expenses, breaks=DEFAULT_BREAKS) -> np.ndarray:
    """Vectorised :func:`classify_level`; returns level codes as ``int8``."""
    b = np.asarray(_check_breaks(breaks), dtype=np.int64)
    values = np.asarray(expenses, dtype=np.int64)
    if values.size and values.min() < 0:
        raise ValueError("expense must be non-negative")
    # side="left" counts breaks strictly below the value, i.e. upper-inclusive bins
    return np.searchsorted(b, values, side="left").astype(np.int8)


class Sex(str, Enum):
    FEMALE = "F"
    MALE = "M"

    @property
    def code(self) -> int:
        return 0 if self is Sex.FEMALE else 1


SEXES = (Sex.FEMALE, Sex.MALE)


class AgeRange(Enum):
    A21_24 = "21-24"
    A25_30 = "25-30"
    A31_35 = "31-35"
    A36_40 = "36-40"
    A41_45 = "41-45"
    A46_50 = "46-50"
    A51_55 = "51-55"
    A56_60 = "56-60"
    A61_65 = "61-65"

    @property
    def lo(self) -> int:
        return int(self.value.split("-")[0])

    @property
    def hi(self) -> int:
        return int(self.value.split("-")[1])

    def __contains__(self, age: int) -> bool:
        return self.lo <= age <= self.hi

    @classmethod
    def containing(cls, age: int) -> AgeRange | None:
        return _RANGE_BY_AGE.get(age)


AGE_RANGES = tuple(AgeRange)
_RANGE_BY_AGE = {a: r for r in AGE_RANGES for a in range(r.lo, r.hi + 1)}
# 21-24 only appears in persistence analysis; simulation strata start at 25.
SIMULATION_RANGES = AGE_RANGES[1:]
MIN_SIM_AGE = SIMULATION_RANGES[0].lo
MAX_SIM_AGE = SIMULATION_RANGES[-1].hi


@dataclass(frozen=True)
class Stratum:
    sex: Sex
    age_range: AgeRange

    @property
    def label(self) -> str:
        return f"{self.sex.value}:{self.age_range.value}"

    @property
    def index(self) -> int:
        """Position among the 16 simulation strata (females first, then by age)."""
        return self.sex.code * len(SIMULATION_RANGES) + SIMULATION_RANGES.index(self.age_range)

    @classmethod
    def parse(cls, label: str) -> Stratum:
        sex, rng = label.split(":")
        return cls(Sex(sex), AgeRange(rng))


SIMULATION_STRATA = tuple(Stratum(s, r) for s in SEXES for r in SIMULATION_RANGES)


def stratum_index(sex_code, age) -> np.ndarray:
    """Vectorised simulation-stratum index for sex codes and ages in 25..65."""
    age = np.asarray(age)
    if np.any((age < MIN_SIM_AGE) | (age > MAX_SIM_AGE)):
        raise ValueError("age outside the simulated 25..65 span")
    his = np.array([r.hi for r in SIMULATION_RANGES])
    return np.asarray(sex_code) * len(SIMULATION_RANGES) + np.searchsorted(his, age, side="left")


@dataclass(frozen=True)
class PersonYearRecord:
    person_id: str
    sex: Sex
    birth_date: dt.date
    year: int
    expense: int  # cents


def age_at(birth_date: dt.date, reference_date: dt.date) -> int:
    """Completed years of age on ``reference_date``."""
    if reference_date < birth_date:
        raise ValueError(f"reference date {reference_date} precedes birth date {birth_date}")
    before_birthday = (reference_date.month, reference_date.day) < (birth_date.month, birth_date.day)
    return reference_date.year - birth_date.year - int(before_birthday)


def age_in_year(birth_date: dt.date, year: int) -> int:
    """Age attributed to a person for a calendar year: completed age on January 1."""
    return age_at(birth_date, dt.date(year, 1, 1))


def dominant_age_range(birth_date: dt.date, first_year: int = 2007, last_year: int = 2009) -> AgeRange:
    """Age range occupied for the most months of ``first_year``..``last_year``.

    A month's age is the completed age on its first day. Months spent outside
    21..65 count towards no range. Ties go to the older range.
    """
    if last_year < first_year:
        raise ValueError("empty window")
    by, bm, bd = birth_date.year, birth_date.month, birth_date.day
    months: dict[AgeRange, int] = {}
    for year in range(first_year, last_year + 1):
        for month in range(1, 13):
            if (year, month, 1) < (by, bm, bd):
                continue
            age = year - by - int(month < bm or (month == bm and bd > 1))
            r = AgeRange.containing(age)
            if r is not None:
                months[r] = months.get(r, 0) + 1
    if not months:
        raise ValueError(
            f"person born {birth_date} is outside ages 21..65 for all of {first_year}-{last_year}"
        )
    order = {r: i for i, r in enumerate(AGE_RANGES)}
    return max(months, key=lambda r: (months[r], order[r]))

"""Health savings account rules: yearly deposit, capped withdrawal, catastrophic cover."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .core import CENTS, MAX_SIM_AGE, MIN_SIM_AGE, Sex, format_money, parse_money

START_AGE = MIN_SIM_AGE
MAX_YEARS = MAX_SIM_AGE - MIN_SIM_AGE + 1


@dataclass(frozen=True)
class HsaParams:
    annual_deposit: int = 2_500 * CENTS
    annual_cap: int = 5_000 * CENTS
    years: int = MAX_YEARS
    deposits: int | None = None  # defaults to ``years``

    def __post_init__(self):
        if self.deposits is None:
            object.__setattr__(self, "deposits", self.years)
        if self.annual_deposit <= 0 or self.annual_cap <= 0:
            raise ValueError("deposit and cap must be positive")
        if not 1 <= self.years <= MAX_YEARS:
            raise ValueError(f"years must be in 1..{MAX_YEARS} (ages {START_AGE}..{MAX_SIM_AGE})")
        if not 1 <= self.deposits <= self.years:
            raise ValueError("deposits must be in 1..years")

    @property
    def deposits_total(self) -> int:
        return self.annual_deposit * self.deposits

    def deposit_for(self, year_index: int) -> int:
        return self.annual_deposit if year_index < self.deposits else 0

    def to_dict(self) -> dict:
        return {
            "annual_deposit": format_money(self.annual_deposit),
            "annual_cap": format_money(self.annual_cap),
            "years": self.years,
            "deposits": self.deposits,
        }

    @classmethod
    def from_dict(cls, d) -> HsaParams:
        base = cls()
        return cls(
            annual_deposit=parse_money(str(d["annual_deposit"])) if "annual_deposit" in d else base.annual_deposit,
            annual_cap=parse_money(str(d["annual_cap"])) if "annual_cap" in d else base.annual_cap,
            years=int(d.get("years", base.years)),
            deposits=int(d["deposits"]) if d.get("deposits") is not None else None,
        )


# 41 simulated years, deposits in the first 40: a zero-expense life ends with exactly 100,000.
PRESET_HSA = HsaParams(deposits=40)


@dataclass(frozen=True)
class YearOutcome:
    expense: int
    hsa_paid: int
    insurance_paid: int
    balance_after: int
    balance_before: int = 0

    @property
    def insurance_used(self) -> bool:
        return self.insurance_paid > 0


def apply_year(balance_before: int, expense: int, params: HsaParams) -> YearOutcome:
    """Pay one year's expense; ``balance_before`` already includes this year's deposit."""
    if balance_before < 0 or expense < 0:
        raise ValueError("balance and expense must be non-negative")
    hsa = min(expense, params.annual_cap, balance_before)
    return YearOutcome(expense, hsa, expense - hsa, balance_before - hsa, balance_before)


@dataclass(frozen=True)
class LifeTrajectory:
    sex: Sex
    outcomes: tuple[YearOutcome, ...]
    deposits_total: int
    levels: tuple[int, ...] = ()

    @property
    def final_balance(self) -> int:
        return self.outcomes[-1].balance_after if self.outcomes else 0

    @property
    def ci_use_count(self) -> int:
        return sum(o.insurance_used for o in self.outcomes)

    @property
    def ci_total(self) -> int:
        return sum(o.insurance_paid for o in self.outcomes)

    @property
    def hsa_total(self) -> int:
        return sum(o.hsa_paid for o in self.outcomes)

    @property
    def expense_total(self) -> int:
        return sum(o.expense for o in self.outcomes)

    def balance_at_age(self, age: int) -> int:
        i = age - START_AGE
        if not 0 <= i < len(self.outcomes):
            raise ValueError(f"age {age} outside simulated span")
        return self.outcomes[i].balance_after

    def rows(self) -> list[dict]:
        return [
            {
                "age": START_AGE + i,
                "expense": format_money(o.expense),
                "hsa_paid": format_money(o.hsa_paid),
                "insurance_paid": format_money(o.insurance_paid),
                "balance_after": format_money(o.balance_after),
                "insurance_used": o.insurance_used,
            }
            for i, o in enumerate(self.outcomes)
        ]


def simulate_account(initial, expenses: Iterable[int], params: HsaParams, levels: Iterable[int] = ()) -> LifeTrajectory:
    """Run the account for ``params.years`` years over the supplied expense path.

    ``initial`` only needs a ``sex`` attribute. ``expenses`` may be a lazy
    iterator (e.g. the simulation's level-then-value draws); exactly
    ``params.years`` values are consumed.
    """
    balance = 0
    deposited = 0
    outcomes = []
    it = iter(expenses)
    for t in range(params.years):
        deposit = params.deposit_for(t)
        balance += deposit
        deposited += deposit
        try:
            expense = next(it)
        except StopIteration:
            raise ValueError(f"expense path ended after {t} of {params.years} years") from None
        out = apply_year(balance, int(expense), params)
        balance = out.balance_after
        outcomes.append(out)
    return LifeTrajectory(initial.sex, tuple(outcomes), deposited, tuple(int(x) for x in levels))


def step_accounts(balance: np.ndarray, expense: np.ndarray, cap: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`apply_year`: returns ``(hsa_paid, insurance_paid, balance_after)``."""
    hsa = np.minimum(np.minimum(expense, cap), balance)
    return hsa, expense - hsa, balance - hsa


def with_deposits(params: HsaParams, deposits: int) -> HsaParams:
    return replace(params, deposits=deposits)

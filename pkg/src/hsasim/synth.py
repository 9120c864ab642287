"""Synthetic person-year claims with zero inflation, heavy tails and cost persistence.

Each person gets a log-frailty that follows a stationary AR(1) process over
the study years. A year's expense is zero with the probability of the
person's (sex, age range) in that year, otherwise lognormal::

    log(expense in R$) = location[stratum] + frailty[t] + scale[stratum] * z

The frailty is shared across years, so a person who is expensive one year
tends to stay expensive, and its autocorrelation makes that tendency fade
with the gap between years.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import CENTS, SEXES, SIMULATION_RANGES, SIMULATION_STRATA, PersonYearRecord, Stratum
from .ingest import Dataset

# The cohort filter keeps ages 25.. at the start and ..65 at the end of a
# five-year window, so persons start at 25..60.
MIN_START_AGE = 25
MAX_START_AGE = 60


@dataclass(frozen=True)
class StratumCalibration:
    zero_prob: float
    log_location: float  # log of the median positive expense, R$
    log_scale: float  # idiosyncratic spread on top of the frailty
    citation: str = ""

    def __post_init__(self):
        if not 0.0 <= self.zero_prob <= 1.0:
            raise ValueError(f"zero probability {self.zero_prob} outside [0, 1]")
        if not self.log_scale > 0:
            raise ValueError("log_scale must be positive")


@dataclass(frozen=True)
class SynthCalibration:
    strata: Mapping[Stratum, StratumCalibration]
    age_weights: Mapping[int, float]  # start age -> relative weight
    female_share: float = 0.5
    frailty_sd: float = 0.9
    frailty_autocorrelation: float = 0.7
    cohort_size: int = 27_780
    study_years: tuple[int, ...] = (2005, 2006, 2007, 2008, 2009)
    seed: int = 0
    dropout_rate: float = 0.0  # share of persons missing their last study year
    notes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.strata) != set(SIMULATION_STRATA):
            raise ValueError("calibration needs all 16 (sex, age range) strata")
        for p in (self.female_share, self.dropout_rate):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must be in [0, 1]")
        if not 0.0 <= self.frailty_autocorrelation <= 1.0:
            raise ValueError("frailty_autocorrelation must be in [0, 1]")
        if self.frailty_sd < 0:
            raise ValueError("frailty_sd must be non-negative")
        if self.cohort_size < 1:
            raise ValueError("cohort_size must be positive")
        if not self.age_weights or any(w < 0 for w in self.age_weights.values()) or sum(self.age_weights.values()) <= 0:
            raise ValueError("age weights must be non-negative with a positive total")
        last_age = max(self.age_weights) + len(self.study_years)
        if min(self.age_weights) < MIN_START_AGE or last_age > 65:
            raise ValueError("start ages must keep every person inside 25..65 for the whole study")

    def with_overrides(self, **kw) -> SynthCalibration:
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "cohort_size": self.cohort_size,
            "study_years": list(self.study_years),
            "seed": self.seed,
            "female_share": self.female_share,
            "frailty_sd": self.frailty_sd,
            "frailty_autocorrelation": self.frailty_autocorrelation,
            "dropout_rate": self.dropout_rate,
            "age_weights": {str(a): w for a, w in sorted(self.age_weights.items())},
            "strata": {
                s.label: {
                    "zero_prob": c.zero_prob,
                    "log_location": c.log_location,
                    "log_scale": c.log_scale,
                    **({"citation": c.citation} if c.citation else {}),
                }
                for s, c in self.strata.items()
            },
            **({"notes": dict(self.notes)} if self.notes else {}),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SynthCalibration:
        strata = {}
        for label, v in d["strata"].items():
            if "median" in v and "log_location" not in v:
                loc = math.log(float(v["median"]))
            else:
                loc = float(v["log_location"])
            strata[Stratum.parse(label)] = StratumCalibration(
                float(v["zero_prob"]), loc, float(v["log_scale"]), v.get("citation", "")
            )
        return cls(
            strata=strata,
            age_weights={int(a): float(w) for a, w in d["age_weights"].items()},
            female_share=float(d.get("female_share", 0.5)),
            frailty_sd=float(d.get("frailty_sd", 0.9)),
            frailty_autocorrelation=float(d.get("frailty_autocorrelation", 0.7)),
            cohort_size=int(d.get("cohort_size", 27_780)),
            study_years=tuple(int(y) for y in d.get("study_years", (2005, 2006, 2007, 2008, 2009))),
            seed=int(d.get("seed", 0)),
            dropout_rate=float(d.get("dropout_rate", 0.0)),
            notes=dict(d.get("notes", {})),
        )


def load_calibration(path=None) -> SynthCalibration:
    """Read a calibration JSON file; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("hsasim").joinpath("data/default_calibration.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return SynthCalibration.from_dict(json.loads(text))


def default_calibration() -> SynthCalibration:
    return load_calibration(None)


def idiosyncratic_scale(p25: float, p75: float, frailty_sd: float, floor: float = 0.25) -> float:
    """Spread left for the yearly shock once the frailty takes its share of the IQR-implied log sd."""
    total = math.log(p75 / p25) / 1.3489795
    return math.sqrt(max(total * total - frailty_sd * frailty_sd, floor * floor))


def _birth_dates(rng: np.random.Generator, start_ages: np.ndarray, first_year: int) -> list[dt.date]:
    # Uniform over the year of birth giving exactly this completed age on Jan 1 of the first year.
    out = []
    offsets = rng.integers(0, 365, size=start_ages.size)
    for age, off in zip(start_ages.tolist(), offsets.tolist()):
        out.append(dt.date(first_year - age, 1, 1) - dt.timedelta(days=off))
    return out


def generate_dataset(cal: SynthCalibration) -> Dataset:
    """Draw a closed cohort as person-year records (deterministic under ``cal.seed``)."""
    rng = np.random.Generator(np.random.PCG64(cal.seed))
    n = cal.cohort_size
    years = cal.study_years
    n_years = len(years)

    sex_codes = (rng.random(n) >= cal.female_share).astype(np.int64)
    ages = np.array(sorted(cal.age_weights))
    w = np.array([cal.age_weights[a] for a in ages], dtype=np.float64)
    start_ages = rng.choice(ages, size=n, p=w / w.sum())
    births = _birth_dates(rng, start_ages, years[0])

    rho = cal.frailty_autocorrelation
    frailty = np.empty((n, n_years))
    frailty[:, 0] = rng.standard_normal(n) * cal.frailty_sd
    innov_sd = cal.frailty_sd * math.sqrt(1.0 - rho * rho)
    for t in range(1, n_years):
        frailty[:, t] = rho * frailty[:, t - 1] + rng.standard_normal(n) * innov_sd

    zero_u = rng.random((n, n_years))
    shock = rng.standard_normal((n, n_years))
    drop = rng.random(n) < cal.dropout_rate

    his = np.array([r.hi for r in SIMULATION_RANGES])
    params = np.array(
        [[cal.strata[s].zero_prob, cal.strata[s].log_location, cal.strata[s].log_scale] for s in SIMULATION_STRATA]
    )
    records = []
    sexes = [SEXES[c] for c in sex_codes.tolist()]
    for t, year in enumerate(years):
        # completed age on Jan 1 of the year; start ages are exact on Jan 1 of the first year
        age = start_ages + t
        s = sex_codes * len(SIMULATION_RANGES) + np.searchsorted(his, age, side="left")
        zp, loc, scale = params[s, 0], params[s, 1], params[s, 2]
        log_r = loc + frailty[:, t] + scale * shock[:, t]
        cents = np.rint(np.exp(log_r) * CENTS).astype(np.int64)
        cents = np.where(zero_u[:, t] < zp, 0, np.maximum(cents, 1))
        for i in range(n):
            if drop[i] and t == n_years - 1:
                continue
            records.append(PersonYearRecord(f"P{i + 1:06d}", sexes[i], births[i], year, int(cents[i])))
    records.sort(key=lambda r: (r.person_id, r.year))
    return Dataset(tuple(records), tuple(years))


def calibration_targets(cal: SynthCalibration) -> dict[str, dict[str, float]]:
    """Expected zero share (%) and positive median (R$) per stratum."""
    return {
        s.label: {"pct_zero": 100.0 * c.zero_prob, "median": math.exp(c.log_location)}
        for s, c in cal.strata.items()
    }


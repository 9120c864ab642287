import datetime as dt

import pytest

from hsasim.core import Sex
from hsasim.ingest import Cohort, Person, filter_cohort
from hsasim.markov import estimate_model
from hsasim.sampler import build_distributions
from hsasim.synth import default_calibration, generate_dataset

YEARS = (2005, 2006, 2007, 2008, 2009)


def make_cohort(people, years=YEARS):
    """people: iterable of (sex 'F'/'M', birth date, expenses in cents per year)."""
    persons = tuple(
        Person(f"p{i}", Sex(sex), birth, tuple(int(e) for e in exp)) for i, (sex, birth, exp) in enumerate(people)
    )
    return Cohort(persons, tuple(years))


def birth_for_age(age, year=2009):
    """A birth date giving completed age ``age`` all through ``year`` after March."""
    return dt.date(year - age, 1, 1)


@pytest.fixture(scope="session")
def synth_cohort():
    cal = default_calibration().with_overrides(cohort_size=6000, seed=11)
    return filter_cohort(generate_dataset(cal))


@pytest.fixture(scope="session")
def synth_inputs(synth_cohort):
    model = estimate_model(synth_cohort)
    dists = build_distributions(synth_cohort)
    return synth_cohort, model, dists


# -- acceptance summary ------------------------------------------------------------------------------------------

_CRITERIA = {}
_OUTCOMES = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            _CRITERIA[item.nodeid] = (m.args[0], m.args[1])


def pytest_runtest_logreport(report):
    if report.nodeid not in _CRITERIA:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _OUTCOMES.get(report.nodeid, "passed")
        _OUTCOMES[report.nodeid] = report.outcome if prev == "passed" else prev


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    by_num = {}
    for nodeid, (num, title) in _CRITERIA.items():
        ok = _OUTCOMES.get(nodeid)
        entry = by_num.setdefault(num, [title, []])
        entry[1].append(ok)
    terminalreporter.section("acceptance criteria")
    for num in sorted(by_num):
        title, outcomes = by_num[num]
        if any(o is None for o in outcomes):
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"AC{num} {status:7s} {title}")

"""Exit criteria for the package, one test (or group) per criterion.

Run ``pytest tests/test_acceptance.py`` to get a PASS/FAIL line per criterion
in the terminal summary.
"""

import datetime as dt
import time

import numpy as np
import pytest
from scipy import stats

from hsasim.core import SIMULATION_STRATA, ExpenseLevel, Sex, classify_levels, reais, stratum_index
from hsasim.hsa import PRESET_HSA, HsaParams, simulate_account
from hsasim.markov import estimate_order2, estimate_pairwise, persistence_report
from hsasim.report import (
    balance_snapshots,
    ci_usage_rows,
    ci_usage_table,
    coverage_summary,
    report_metadata,
    study_tables,
)
from hsasim.rng import Stream
from hsasim.sampler import InitialLife, initial_pool, sample_within_level
from hsasim.sim import SimulationParams, run_replication, run_study
from hsasim.stats import tukey_outliers

from conftest import make_cohort
from oracles import account, dominant_range, order2_counts, pairwise_counts
from test_sim import dists_from_values, model_from_rows, one_person_pool
import toy

acceptance = pytest.mark.acceptance

# expenses on and around every level boundary
LEVEL_VALUES = [0, 1, 29999, 30000, 30001, 99999, 100000, 100001, 499999, 500000, 500001, 3_000_000]


def fixture_people(seed, n=100):
    rng = np.random.default_rng(seed)
    people = []
    for _ in range(n):
        sex = "F" if rng.random() < 0.5 else "M"
        birth = dt.date(1943, 1, 1) + dt.timedelta(days=int(rng.integers(0, 365 * 39)))
        people.append((sex, birth, [int(x) for x in rng.choice(LEVEL_VALUES, size=5)]))
    return people


@acceptance(1, "estimator oracle equivalence")
@pytest.mark.parametrize("seed", range(4))
def test_ac1_estimators_match_brute_force(seed):
    people = fixture_people(seed)
    cohort = make_cohort(people)
    expenses = [p[2] for p in people]
    start = time.perf_counter()
    pairwise = {(i, j): estimate_pairwise(cohort, 2005 + i, 2005 + j) for i in range(5) for j in range(i + 1, 5)}
    order2 = {s: estimate_order2(cohort, (2007, 2008, 2009), s) for s in SIMULATION_STRATA}
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    for (i, j), m in pairwise.items():
        assert m.counts.tolist() == pairwise_counts(expenses, i, j)
        ok = ~m.empty_rows
        assert np.abs(m.probs[ok].sum(axis=1) - 1).max() <= 1e-9
    total = 0
    for s, m in order2.items():
        members = [p[2] for p in people
                   if p[0] == s.sex.value and dominant_range(p[1]) == (s.age_range.lo, s.age_range.hi)]
        assert m.counts.tolist() == order2_counts(members, 2, 3, 4)
        observed = m.counts.sum(axis=1) > 0
        assert np.abs(m.probs[observed].sum(axis=1) - 1).max() <= 1e-9
        total += m.counts.sum()
    # every person inside the simulation ages over 2007-2009 lands in exactly one stratum
    assert total == sum(1 for p in people if dominant_range(p[1]) not in (None, (21, 24)))


@pytest.fixture(scope="module")
def pool(synth_inputs):
    cohort, model, dists = synth_inputs
    return model, dists, initial_pool(cohort)


@acceptance(2, "conservation laws")
def test_ac2_conservation(pool):
    model, dists, init = pool
    params = SimulationParams(n_lives=10_000, n_replications=10)
    assert params.hsa.years == 41
    start = time.perf_counter()
    study = run_study(model, dists, init, params)
    elapsed = time.perf_counter() - start
    assert elapsed < 60
    for rep in study.replications:
        lv = rep.lives
        assert len(lv) == 10_000
        assert np.array_equal(lv.hsa_total + lv.final_balance, np.full(10_000, lv.deposits_total))
        assert np.array_equal(lv.hsa_total + lv.ci_total, lv.expense_total)
        assert rep.totals["deposits"] == rep.totals["hsa"] + rep.totals["final_balance"]
        assert rep.totals["expense"] == rep.totals["hsa"] + rep.totals["ci"]
    t = study.totals()
    assert t["deposits"] == 10 * 10_000 * reais(102_500)
    assert t["deposits"] == t["hsa"] + t["final_balance"]
    assert t["expense"] == t["hsa"] + t["ci"]


@acceptance(3, "zero-expense point check")
def test_ac3_zero_expense_balances():
    life = InitialLife(Sex.FEMALE, (0, 0), 0)
    assert simulate_account(life, [0] * 41, PRESET_HSA).final_balance == reais(100_000)
    assert simulate_account(life, [0] * 41, HsaParams(deposits=41)).final_balance == reais(102_500)
    # the same through the simulation engine, with a model that never leaves F1 and only zero expenses
    model, dists = model_from_rows(lambda k, m: 0), dists_from_values([0])
    for hsa, want in ((PRESET_HSA, 100_000), (HsaParams(deposits=41), 102_500)):
        rep = run_replication(model, dists, one_person_pool([0] * 5), SimulationParams(n_lives=5, hsa=hsa), 0)
        assert (rep.lives.final_balance == reais(want)).all()


@acceptance(4, "HSA rule trace audit")
def test_ac4_trace_audit(pool):
    model, dists, init = pool
    params = SimulationParams(n_lives=1_000, n_replications=1)
    rep = run_replication(model, dists, init, params, 0, record_trace=True)
    tr = rep.trace
    assert tr.hsa_paid.shape == (1_000, 41)
    cap, deposit = params.hsa.annual_cap, params.hsa.annual_deposit
    assert (tr.hsa_paid <= reais(5_000)).all() and cap == reais(5_000)
    assert (tr.hsa_paid <= tr.balance_before).all()
    assert (tr.balance_after >= 0).all() and (tr.balance_before >= 0).all()
    assert np.array_equal(tr.hsa_paid, np.minimum(np.minimum(tr.expense, cap), tr.balance_before))
    assert np.array_equal(tr.hsa_paid + tr.insurance_paid, tr.expense)
    assert np.array_equal(tr.balance_after, tr.balance_before - tr.hsa_paid)
    assert np.array_equal(tr.balance_before[:, 0], np.full(1_000, deposit))
    assert np.array_equal(tr.balance_before[:, 1:], tr.balance_after[:, :-1] + deposit)
    assert (classify_levels(tr.expense) == tr.levels).all()
    ages = np.arange(25, 66)
    sex = rep.lives.sex.astype(np.int64)[:, None]
    assert np.array_equal(tr.strata, stratum_index(np.broadcast_to(sex, tr.strata.shape), ages[None, :]))
    # spot-check whole lives against the scalar recurrence
    for i in range(0, 1_000, 97):
        rows = account(tr.expense[i].tolist())
        assert [r[2] for r in rows] == tr.balance_after[i].tolist()


@acceptance(5, "determinism and scheduling invariance")
def test_ac5_thread_invariance(pool):
    model, dists, init = pool
    params = SimulationParams(n_lives=2_000, n_replications=16, master_seed=424242)
    prints = {t: run_study(model, dists, init, params, threads=t).fingerprint() for t in (1, 2, 8)}
    assert len(set(prints.values())) == 1
    assert run_study(model, dists, init, params, threads=8).fingerprint() == prints[1]


def grouped_chisquare(draws, pool):
    """Chi-square of draws against uniform over the pool positions, grouping values to keep cells >= 5 expected."""
    values, mult = np.unique(pool, return_counts=True)
    idx = np.searchsorted(values, draws)
    assert np.array_equal(values[idx], draws)
    observed = np.bincount(idx, minlength=values.size)
    expected = mult / pool.size * draws.size
    n_groups = int(max(1, min(values.size, expected.sum() // 5)))
    cuts = np.searchsorted(np.cumsum(expected), np.linspace(0, expected.sum(), n_groups + 1)[1:-1], side="right")
    starts = np.unique(np.r_[0, cuts[(cuts > 0) & (cuts < values.size)]])
    if starts.size < 2:
        return 1.0  # a single distinct value: nothing to test
    obs_g = np.add.reduceat(observed, starts)
    exp_g = np.add.reduceat(expected, starts)
    return stats.chisquare(obs_g, exp_g).pvalue


@acceptance(6, "sampler conditioning")
def test_ac6_sampler_conditioning(pool):
    _, dists, _ = pool
    rng = Stream(606)
    for s in SIMULATION_STRATA:
        for level in ExpenseLevel:
            draws = sample_within_level(dists[s], level, rng, fallback=dists, size=100_000)
            assert draws.size == 100_000
            assert (classify_levels(draws) == int(level)).all(), (s.label, level.label)
            p = grouped_chisquare(draws, dists.pool(s, level))
            assert p >= 0.001, (s.label, level.label, p)


@acceptance(7, "persistence decay")
def test_ac7_persistence_decay(synth_cohort):
    diag = persistence_report(synth_cohort).mean_diagonal_by_gap()
    assert diag[1] > diag[4]


@acceptance(8, "report correctness on toy study")
def test_ac8_report_toy_oracle():
    study = toy.toy_study()
    for rep, counts, amounts in zip(study.replications, toy.CI_COUNTS, toy.CI_AMOUNTS):
        assert rep.ci_counts.tolist()[:3] == list(counts)
        assert rep.ci_amounts.tolist()[:3] == [reais(a) for a in amounts]
    t = ci_usage_table(study)
    for row in t.json_rows():
        for col, want in toy.CI_ROWS[row["uses"]].items():
            assert row[col] == pytest.approx(want, abs=0.005), (row["uses"], col)
    last = ci_usage_rows(study)[-1]
    assert round(last.cum_pct_lives.mean, 2) == 100.00 and round(last.cum_pct_amount.mean, 2) == 100.00
    snap = {r["stat"]: r for r in balance_snapshots(study).json_rows()}
    assert snap["mean"]["age25_mean"] == pytest.approx(toy.AGE25_MEAN)
    assert snap["mean"]["age26_mean"] == pytest.approx(toy.AGE26_MEAN, abs=0.005)
    assert snap["mean"]["age27_mean"] == pytest.approx(toy.FINAL_MEAN, abs=0.005)
    assert snap["n0"]["age27_mean"] == toy.FINAL_N0
    assert snap["sd"]["age27_mean"] == pytest.approx(np.mean(toy.FINAL_SD_REP), abs=0.005)
    cov = {r["stat"]: r for r in coverage_summary(study).table.json_rows()}
    assert cov["mean"]["hsa_mean"] == pytest.approx(toy.HSA_MEAN)
    assert cov["mean"]["ci_mean"] == pytest.approx(toy.CI_MEAN)


@acceptance(8, "report correctness on toy study")
def test_ac8_tukey_fixture():
    f = tukey_outliers(list(range(1, 101)) + [10_000])
    assert f.n_outliers == 1 and f.outliers.tolist() == [10_000]


@acceptance(9, "synthetic-calibrated flag on reported tables")
def test_ac9_report_metadata(pool):
    model, dists, init = pool
    study = run_study(model, dists, init, SimulationParams(n_lives=500, n_replications=2))
    tables, cov = study_tables(study)
    assert [t.name for t in tables] == ["balance_snapshots", "ci_usage", "coverage"]
    assert cov.skewness is not None
    meta = report_metadata()
    assert meta["synthetic_calibrated"] is True and meta["disclaimer"]

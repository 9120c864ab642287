import datetime as dt
import json

import numpy as np
import pytest

from hsasim.core import SIMULATION_STRATA, AgeRange, Sex, Stratum
from hsasim.markov import (
    EMPTY,
    FALLBACK_ORDER1,
    FALLBACK_POOLED,
    OBSERVED,
    EstimationError,
    TransitionModel,
    age_between,
    complete_model,
    estimate_model,
    estimate_order2,
    estimate_pairwise,
    mid_window,
    persistence_report,
    raw_order2,
)

from conftest import make_cohort
from oracles import dominant_range, order2_counts, pairwise_counts

# values hitting every level, including the boundaries
LEVEL_VALUES = [0, 30000, 30001, 100000, 100001, 500000, 500001, 2_000_000]


def random_people(seed, n):
    rng = np.random.default_rng(seed)
    people = []
    for _ in range(n):
        sex = "F" if rng.random() < 0.5 else "M"
        birth = dt.date(1940, 1, 1) + dt.timedelta(days=int(rng.integers(0, 365 * 40)))
        exp = [int(x) for x in rng.choice(LEVEL_VALUES, size=5)]
        people.append((sex, birth, exp))
    return people


def test_pairwise_all_move_f1_to_f2():
    people = [("F", dt.date(1970, 1, 1), [100, 50000, 0, 0, 0]) for _ in range(4)]
    m = estimate_pairwise(make_cohort(people), 2005, 2006)
    assert m.counts[0].tolist() == [0, 4, 0, 0]
    assert m.probs[0].tolist() == [0, 1, 0, 0]
    assert m.empty_rows.tolist() == [False, True, True, True]
    assert np.isnan(m.probs[1]).all()


@pytest.mark.parametrize("seed", range(5))
def test_pairwise_matches_oracle(seed):
    people = random_people(seed, 20)
    cohort = make_cohort(people)
    for i, j in [(0, 1), (0, 4), (2, 3)]:
        m = estimate_pairwise(cohort, 2005 + i, 2005 + j)
        assert m.counts.tolist() == pairwise_counts([p[2] for p in people], i, j)
        assert m.n == 20
        ok = ~m.empty_rows
        assert np.allclose(m.probs[ok].sum(axis=1), 1.0, atol=1e-9)


def test_pairwise_age_filters_differ():
    young = [("F", dt.date(1975, 3, 3), [0, 600000, 0, 0, 0])] * 3
    old = [("M", dt.date(1950, 3, 3), [0, 0, 0, 0, 0])] * 3
    cohort = make_cohort(young + old)
    ref = mid_window(cohort)
    a = estimate_pairwise(cohort, 2005, 2006, age_between(21, 40, ref))
    b = estimate_pairwise(cohort, 2005, 2006, age_between(41, 65, ref))
    assert a.counts[0].tolist() == [0, 0, 0, 3]
    assert b.counts[0].tolist() == [3, 0, 0, 0]
    assert a.n == b.n == 3


def test_pairwise_empty_estimation_set():
    cohort = make_cohort([("F", dt.date(1975, 3, 3), [0] * 5)])
    with pytest.raises(EstimationError, match="empty estimation set"):
        estimate_pairwise(cohort, 2005, 2006, age_between(50, 60, mid_window(cohort)))


def test_order2_single_person():
    # aged 40-42 over 2007-2009, dominant range 41-45
    people = [("F", dt.date(1966, 1, 1), [0, 0, 100, 200, 40000])]
    m = estimate_order2(make_cohort(people), (2007, 2008, 2009), Stratum(Sex.FEMALE, AgeRange.A41_45))
    assert m.counts[0].tolist() == [0, 1, 0, 0]
    assert m.counts.sum() == 1
    assert m.row_provenance[0] == OBSERVED
    assert m.row_provenance[1] == EMPTY


def test_order2_empty_stratum():
    people = [("F", dt.date(1966, 1, 1), [0] * 5)]
    m = estimate_order2(make_cohort(people), (2007, 2008, 2009), Stratum(Sex.MALE, AgeRange.A25_30))
    assert m.counts.sum() == 0
    assert all(p == EMPTY for p in m.row_provenance)


@pytest.mark.parametrize("seed", range(5))
def test_order2_matches_oracle(seed):
    people = random_people(100 + seed, 30)
    cohort = make_cohort(people)
    for s in SIMULATION_STRATA:
        members = [p[2] for p in people if p[0] == s.sex.value
                   and dominant_range(p[1]) == (s.age_range.lo, s.age_range.hi)]
        m = estimate_order2(cohort, (2007, 2008, 2009), s)
        assert m.counts.tolist() == order2_counts(members, 2, 3, 4)


def test_estimate_model_uses_order2_path(synth_cohort):
    model = estimate_model(synth_cohort)
    for s in SIMULATION_STRATA:
        raw = estimate_order2(synth_cohort, (2007, 2008, 2009), s)
        assert np.array_equal(model[s].counts, raw.counts)
        observed = [i for i, p in enumerate(model[s].row_provenance) if p == OBSERVED]
        assert np.array_equal(model[s].probs[observed], raw.probs[observed])


def _raw(counts_by_stratum):
    return {s: raw_order2(s, (2007, 2008, 2009), counts_by_stratum[s]) for s in SIMULATION_STRATA}


def test_fallback_order1():
    counts = {s: np.zeros((16, 4), dtype=np.int64) for s in SIMULATION_STRATA}
    target = SIMULATION_STRATA[3]
    counts[target][1 * 4 + 3] = [1, 0, 0, 3]  # (F2,F4) observed: order-1 row for F4 is (1,0,0,3)
    model = complete_model(_raw(counts))
    row = model[target].row(3, 3)
    assert model[target].row_provenance[15] == FALLBACK_ORDER1
    assert row.tolist() == [0.25, 0, 0, 0.75]


def test_fallback_pooled():
    counts = {s: np.zeros((16, 4), dtype=np.int64) for s in SIMULATION_STRATA}
    counts[SIMULATION_STRATA[0]][0] = [2, 2, 0, 0]
    model = complete_model(_raw(counts))
    other = model[SIMULATION_STRATA[5]]
    assert other.row_provenance[0] == FALLBACK_POOLED
    assert other.row(0, 0).tolist() == [0.5, 0.5, 0, 0]


def test_fallback_uniform_everywhere():
    counts = {s: np.zeros((16, 4), dtype=np.int64) for s in SIMULATION_STRATA}
    model = complete_model(_raw(counts))
    for s in SIMULATION_STRATA:
        assert set(model[s].row_provenance) == {FALLBACK_POOLED}
        assert np.array_equal(model[s].probs, np.full((16, 4), 0.25))


def test_fully_observed_unchanged():
    rng = np.random.default_rng(3)
    counts = {s: rng.integers(1, 9, size=(16, 4)) for s in SIMULATION_STRATA}
    raw = _raw(counts)
    model = complete_model(raw)
    for s in SIMULATION_STRATA:
        assert set(model[s].row_provenance) == {OBSERVED}
        assert np.array_equal(model[s].probs, raw[s].probs)
        assert np.allclose(model[s].probs.sum(axis=1), 1.0, atol=1e-9)


def test_model_rejects_unfilled_rows():
    counts = {s: np.zeros((16, 4), dtype=np.int64) for s in SIMULATION_STRATA}
    with pytest.raises(ValueError):
        TransitionModel(_raw(counts), (2007, 2008, 2009))


def test_model_json_round_trip(synth_inputs):
    _, model, _ = synth_inputs
    back = TransitionModel.from_dict(json.loads(model.to_json()))
    assert np.array_equal(back.cumulative(), model.cumulative())
    for s in SIMULATION_STRATA:
        assert np.array_equal(back[s].counts, model[s].counts)
        assert back[s].row_provenance == model[s].row_provenance
    cum = model.cumulative()
    assert cum.shape == (16, 16, 4) and (cum[..., -1] == 1.0).all()
    assert (np.diff(cum, axis=2) >= 0).all()


def test_persistence_report(synth_cohort):
    rep = persistence_report(synth_cohort)
    assert len(rep.matrices) == 10
    for m in rep.matrices:
        assert m.n == len(synth_cohort)
        assert np.allclose(m.probs.sum(axis=1), 1.0, atol=1e-9)
        assert ((m.probs >= 0) & (m.probs <= 1)).all()
    diag = rep.mean_diagonal_by_gap()
    assert diag[1] > diag[4]
    rows = rep.heatmap_rows()
    assert len(rows) == 160 and {"origin", "destination", "probability"} <= set(rows[0])


def test_persistence_age_groups(synth_cohort):
    ref = mid_window(synth_cohort)
    young = persistence_report(synth_cohort, age_between(21, 40, ref), label="young")
    old = persistence_report(synth_cohort, age_between(41, 65, ref), label="old")
    assert young.matrices[0].n + old.matrices[0].n == len(synth_cohort)
    assert not np.array_equal(young.matrices[0].counts, old.matrices[0].counts)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from hsasim.stats import (
    BALANCE_PERCENTILES,
    COHORT_PERCENTILES,
    descriptive_stats,
    mean_sd,
    pct_label,
    skewness,
    tukey_outliers,
)

from oracles import percentile_sorted, sample_sd


def test_positive_only_example():
    s = descriptive_stats([0, 0, 100, 300])
    assert s.n == 4 and s.n_zero == 2 and s.pct_no_expense == 50
    assert s.percentiles["p50"] == 200
    assert s.max == 300 and s.mean == 200
    assert s.sd == pytest.approx(sample_sd([100, 300]))


def test_constant_values():
    s = descriptive_stats([5] * 7)
    assert set(s.percentiles.values()) == {5}
    assert s.sd == 0.0 and s.max == 5 and s.mean == 5


def test_all_zero_values():
    s = descriptive_stats([0, 0, 0])
    assert s.pct_zero == 100
    assert set(s.percentiles.values()) == {0.0} and s.mean == 0.0 and s.sd == 0.0


def test_single_positive_has_undefined_sd():
    assert descriptive_stats([0, 4]).sd is None


def test_empty_input():
    with pytest.raises(ValueError):
        descriptive_stats([])


def test_labels():
    assert [pct_label(q) for q in COHORT_PERCENTILES][-3:] == ["p99", "p995", "p999"]
    assert pct_label(5) == "p5" and len(BALANCE_PERCENTILES) == 10


@given(st.lists(st.integers(1, 10**7), min_size=2, max_size=1000))
def test_matches_sort_and_index_oracle(values):
    s = descriptive_stats(values)
    for q in COHORT_PERCENTILES:
        assert s.percentiles[pct_label(q)] == pytest.approx(percentile_sorted(values, q), rel=1e-12)
    ordered = [s.percentiles[pct_label(q)] for q in COHORT_PERCENTILES]
    assert ordered == sorted(ordered) and s.max >= ordered[-1]
    assert s.mean == pytest.approx(sum(values) / len(values), rel=1e-12)
    assert s.sd == pytest.approx(sample_sd(values), rel=1e-9, abs=1e-9)


def test_agrees_with_numpy_linear_percentile():
    v = np.random.default_rng(0).integers(1, 10**6, size=999)
    s = descriptive_stats(v)
    for q in COHORT_PERCENTILES:
        assert s.percentiles[pct_label(q)] == pytest.approx(np.percentile(v, q), rel=1e-12)


def test_uniform_median_sampling_check():
    v = np.random.default_rng(1).uniform(0, 1, size=1000) + 1e-12
    s = descriptive_stats(v, positive_only=False)
    # median of n uniforms has sd about 1 / (2 sqrt(n))
    assert abs(s.percentiles["p50"] - 0.5) < 3 / (2 * np.sqrt(1000))


def test_skewness_matches_scipy():
    v = np.random.default_rng(2).lognormal(0, 1, size=500)
    assert skewness(v) == pytest.approx(sps.skew(v, bias=False), rel=1e-10)


def test_symmetric_fixture_skewness_near_zero():
    half = np.random.default_rng(3).normal(0, 1, size=5000)
    v = np.concatenate([half, -half]) + 100
    assert abs(skewness(v)) < 0.05


def test_skewness_degenerate():
    assert skewness([1, 1, 1]) is None and skewness([1, 2]) is None


def test_tukey_fixture():
    f = tukey_outliers(list(range(1, 101)) + [10_000])
    assert f.outliers.tolist() == [10_000]
    assert f.n_outliers == 1


def test_mean_sd():
    assert mean_sd([1.0, None, 3.0]) == (2.0, pytest.approx(np.sqrt(2)), 2)
    assert mean_sd([4.0]) == (4.0, None, 1)
    assert mean_sd([7.0, 7.0, 7.0]) == (7.0, 0.0, 3)
    assert mean_sd([None]) == (None, None, 0)

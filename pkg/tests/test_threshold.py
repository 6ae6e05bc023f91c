import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from truncmix import threshold, tmog
from truncmix.constraints import FullSpace, Interval
from truncmix.exceptions import ConfigError
from truncmix.mixture import Dataset, MixtureState
from truncmix.threshold import ThresholdPolicy


def state_1d(weights, means, variances, assignments):
    return MixtureState(np.asarray(weights, float), np.asarray(means, float).reshape(-1, 1),
                        np.asarray(variances, float).reshape(-1, 1, 1), assignments)


def half_mass_problem(n):
    s = state_1d([1.0], [0.0], [1.0], np.zeros(n, int))
    return s, Dataset(np.ones((n, 1)), Interval(0, np.inf))


def test_policy_basics():
    p = ThresholdPolicy()
    assert p.variant == "capped_run" and p.threshold == 1.0 and p.rho == 0.5
    assert ThresholdPolicy.from_rho(0.2).threshold == pytest.approx(4.0)
    assert ThresholdPolicy("exact", 3.0).exact
    assert ThresholdPolicy("fixed_average", 0.5).budget(400) == 200
    assert ThresholdPolicy("capped_run", 0.001).budget(10) == 1
    assert ThresholdPolicy("fixed_average", 0.25).average_count(10) == 3
    assert ThresholdPolicy("fixed_average", 0.001).average_count(10) == 0
    with pytest.raises(ValueError):
        ThresholdPolicy("bogus")
    with pytest.raises(ValueError):
        ThresholdPolicy("capped_run", -1)


def test_parse_threshold_list():
    assert threshold.parse_threshold_list("0,0.5,1,5,50,inf") == list(threshold.THRESHOLD_GRID)
    with pytest.raises(ConfigError):
        threshold.parse_threshold_list("1,x")
    with pytest.raises(ConfigError):
        threshold.parse_threshold_list("-1")


@pytest.mark.parametrize("mode", ["pooled", "per_observation"])
@pytest.mark.parametrize("variant", ["geometric_count", "fixed_average", "capped_run"])
def test_zero_threshold_is_empty(rng, variant, mode):
    s, data = half_mass_problem(50)
    before = rng.bit_generator.state
    aug = threshold.impute(rng, s, data, ThresholdPolicy(variant, 0.0), mode)
    assert aug.count == 0
    # no random numbers are consumed, so t = 0 sweeps are the plain sampler
    assert rng.bit_generator.state == before


def test_geometric_rho_one_is_empty(rng):
    s, data = half_mass_problem(50)
    assert threshold.impute_geometric_count(rng, s, data, ThresholdPolicy.from_rho(1.0,
                                            "geometric_count")).count == 0


def test_geometric_count_mean(rng):
    s, data = half_mass_problem(100)
    pol = ThresholdPolicy.from_rho(0.5, "geometric_count")
    totals = [threshold.impute_geometric_count(rng, s, data, pol).count for _ in range(2000)]
    assert np.mean(totals) == pytest.approx(100, rel=0.03)


def test_geometric_locations_are_truncated_normal(rng):
    s, data = half_mass_problem(200)
    pol = ThresholdPolicy.from_rho(0.5, "geometric_count")
    pts = np.concatenate([threshold.impute_geometric_count(rng, s, data, pol).points[:, 0]
                          for _ in range(20)])
    # inverse-CDF oracle for N(0, 1) restricted to (-inf, 0)
    u = np.random.default_rng(1).random(len(pts))
    oracle = stats.norm.ppf(u * stats.norm.cdf(0))
    assert stats.ks_2samp(pts, oracle).pvalue > 0.01
    assert np.all(pts < 0)


@pytest.mark.parametrize("t,n,want", [(1.0, 400, 400), (0.5, 400, 200), (0.3, 10, 3)])
def test_fixed_average_counts(rng, t, n, want):
    s, data = half_mass_problem(n)
    for mode in ("pooled", "per_observation"):
        aug = threshold.impute_fixed_average(rng, s, data, ThresholdPolicy("fixed_average", t),
                                             mode)
        assert aug.count == want
        assert not np.any(data.constraint.contains(aug.points))


def test_capped_run_high_acceptance(rng):
    n = 200
    s = state_1d([1.0], [0.5], [1e-4], np.zeros(n, int))
    data = Dataset(np.full((n, 1), 0.5), Interval(0, 1))
    aug = threshold.impute_capped_run(rng, s, data, ThresholdPolicy("capped_run", 1.0))
    assert aug.count < 5


def test_capped_run_cap_binds_at_low_acceptance(rng):
    n = 100
    s = state_1d([1.0], [stats.norm.ppf(0.05)], [1.0], np.zeros(n, int))
    data = Dataset(np.ones((n, 1)), Interval(0, np.inf))
    pol = ThresholdPolicy("capped_run", 1.0)
    for _ in range(20):
        assert threshold.impute_capped_run(rng, s, data, pol, "pooled").count == 100
    # per observation the cap is one rejection each, so about 5% accept first
    counts = [threshold.impute_capped_run(rng, s, data, pol, "per_observation").count
              for _ in range(200)]
    assert max(counts) <= 100
    assert np.mean(counts) == pytest.approx(95, abs=1)


def test_capped_run_pooled_is_prefix_of_exact_stream():
    n = 50
    s, data = half_mass_problem(n)
    capped = threshold.impute_capped_run(np.random.default_rng(5), s, data,
                                         ThresholdPolicy("capped_run", 1e9))
    exact = tmog.impute_pooled(np.random.default_rng(5), s, data)
    assert np.array_equal(capped.points, exact.points)


def test_exact_variant_uses_exact_code_path():
    s, data = half_mass_problem(30)
    a = threshold.impute(np.random.default_rng(2), s, data, ThresholdPolicy("exact"), "pooled")
    b = tmog.impute_pooled(np.random.default_rng(2), s, data)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.owners, b.owners)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["geometric_count", "fixed_average", "capped_run"]),
       st.sampled_from(["pooled", "per_observation"]),
       st.floats(0.05, 6.0), st.integers(1, 60), st.floats(-2.0, 1.0),
       st.integers(0, 2 ** 31 - 1))
def test_imputed_points_outside_and_capped(variant, mode, t, n, mean, seed):
    rng = np.random.default_rng(seed)
    s = state_1d([0.6, 0.4], [mean, 0.5], [0.5, 0.05], rng.integers(0, 2, size=n))
    data = Dataset(rng.uniform(size=(n, 1)), Interval(0, 1))
    pol = ThresholdPolicy(variant, t)
    aug = threshold.impute(rng, s, data, pol, mode)
    assert not np.any(data.constraint.contains(aug.points))
    assert aug.owners.min(initial=0) >= 0 and aug.owners.max(initial=0) < n
    if variant == "fixed_average":
        assert aug.count == math.floor(n * t + 0.5)
    elif variant == "capped_run":
        assert aug.count <= math.ceil(n * t)
    if mode == "per_observation":
        assert np.array_equal(aug.labels, s.assignments[aug.owners])


def test_fullspace_is_empty_for_every_variant(rng):
    s = state_1d([1.0], [0.0], [1.0], np.zeros(10, int))
    data = Dataset(np.zeros((10, 1)), FullSpace(1))
    for v in ("geometric_count", "fixed_average", "capped_run"):
        assert threshold.impute(rng, s, data, ThresholdPolicy(v, 5.0)).count == 0

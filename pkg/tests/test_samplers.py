import math

import numpy as np
import pytest
from scipy import stats

from truncmix import kernels, motg, tmog
from truncmix.constraints import FullSpace, Interval
from truncmix.kernels import NiwParams
from truncmix.mixture import (AugmentedRejections, Dataset, Hyperparams, MixtureState,
                              initial_state)


def state_1d(weights, means, variances, assignments=None):
    return MixtureState(np.asarray(weights, float), np.asarray(means, float).reshape(-1, 1),
                        np.asarray(variances, float).reshape(-1, 1, 1), assignments)


def hp_1d(**kw):
    base = dict(k_trunc=2, iters=2, burn_in=0)
    base.update(kw)
    return Hyperparams(NiwParams([0.0], 0.5, [[0.1]], 4.0), **base)


# ---------------------------------------------------------------- imputation

def test_impute_pooled_fullspace_is_empty(rng):
    s = state_1d([1.0], [0.0], [1.0], [0] * 5)
    aug = tmog.impute_pooled(rng, s, Dataset(np.zeros((5, 1)), FullSpace(1)))
    assert aug.count == 0 and aug.mode == "pooled"


def test_impute_pooled_half_mass(rng):
    s = state_1d([1.0], [0.0], [1.0], [0] * 1000)
    data = Dataset(np.abs(rng.normal(size=(1000, 1))), Interval(0, np.inf))
    totals = [tmog.impute_pooled(rng, s, data).count for _ in range(50)]
    assert np.mean(totals) == pytest.approx(1000, rel=0.1)


def test_impute_pooled_total_is_negative_binomial():
    # q(S) = 0.5 overall from two components
    s = state_1d([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0], [0] * 40)
    data = Dataset(np.full((40, 1), 0.5), Interval(0, np.inf))
    rng = np.random.default_rng(3)
    totals = np.array([tmog.impute_pooled(rng, s, data).count for _ in range(2000)])
    direct = rng.negative_binomial(40, 0.5, size=2000)
    assert stats.ks_2samp(totals, direct).pvalue > 0.01


def test_impute_pooled_points_outside_and_owned(rng):
    s = state_1d([0.3, 0.7], [-0.5, 0.6], [0.5, 0.2], [0] * 30)
    S = Interval(0, 1)
    data = Dataset(rng.uniform(size=(30, 1)), S)
    aug = tmog.impute_pooled(rng, s, data)
    assert not np.any(S.contains(aug.points))
    assert aug.owners.min() >= 0 and aug.owners.max() < 30
    assert np.all(np.diff(aug.owners) >= 0)


def test_impute_per_observation_expected_counts(rng):
    S = Interval(0, np.inf)
    for p_acc, want, rel in ((0.5, 1.0, 0.03), (0.05, 19.0, 0.05)):
        mean = stats.norm.ppf(p_acc)
        n = 1000
        s = state_1d([0.5, 0.5], [mean, 5.0], [1.0, 1.0], [0] * n)
        data = Dataset(np.ones((n, 1)), S)
        per_obs = np.concatenate([motg.impute_per_observation(rng, s, data)
                                  .counts_per_observation() for _ in range(100)])
        assert per_obs.mean() == pytest.approx(want, rel=rel)


def test_impute_per_observation_labels_owner_component(rng):
    s = state_1d([0.5, 0.5], [-0.2, 1.1], [0.1, 0.1], [0, 1, 0, 1, 1])
    S = Interval(0, 1)
    data = Dataset(np.array([[0.1], [0.9], [0.2], [0.95], [0.7]]), S)
    aug = motg.impute_per_observation(rng, s, data)
    assert aug.mode == "per_observation"
    assert np.array_equal(aug.labels, s.assignments[aug.owners])
    assert not np.any(S.contains(aug.points))
    empty = motg.impute_per_observation(rng, s, Dataset(data.points, FullSpace(1)))
    assert empty.count == 0


# ---------------------------------------------------------------- weights

def test_update_weights_tmog_dirichlet_example():
    hp = hp_1d(weight_prior="dirichlet")
    draws = np.array([tmog.update_weights_tmog(np.random.default_rng(i), [3, 1], [2, 0], hp)
                      for i in range(20000)])
    # Dir(6, 2): first coordinate ~ Beta(6, 2)
    assert stats.kstest(draws[:, 0], stats.beta(6, 2).cdf).pvalue > 0.01


def test_update_weights_motg_dirichlet_example():
    hp = hp_1d(weight_prior="dirichlet")
    draws = np.array([motg.update_weights_motg(np.random.default_rng(i), [3, 1], hp)
                      for i in range(20000)])
    assert stats.kstest(draws[:, 0], stats.beta(4, 2).cdf).pvalue > 0.01


def test_update_weights_zero_counts_is_prior_draw():
    hp = hp_1d()
    a = tmog.update_weights_tmog(np.random.default_rng(0), [0, 0], [0, 0], hp)
    b = kernels.stick_breaking_posterior(np.random.default_rng(0), [0, 0], 1.0)
    assert np.array_equal(a, b)


def test_update_weights_tmog_stick_mean():
    hp = hp_1d(k_trunc=5)
    rng = np.random.default_rng(1)
    w = np.array([tmog.update_weights_tmog(rng, [80, 0, 0, 0, 0], [20, 0, 0, 0, 0], hp)
                  for _ in range(100000)])
    assert w[:, 0].mean() == pytest.approx(101 / 102, abs=0.01)


def test_motg_weight_update_sees_observation_counts_only(monkeypatch, rng):
    hp = hp_1d(k_trunc=3, threshold=math.inf)
    data = Dataset(np.abs(rng.normal(0, 0.2, size=(30, 1))).clip(0, 1), Interval(0, 1))
    seen = []
    orig = motg.update_weights_motg

    def spy(rng_, n_k, hp_):
        seen.append(np.array(n_k))
        return orig(rng_, n_k, hp_)

    monkeypatch.setattr(motg, "update_weights_motg", spy)
    s = initial_state(rng, data, hp)
    for it in range(10):
        before = s.occupancy()
        s, rec = motg.motg_sweep(rng, s, data, hp, it)
        assert np.array_equal(seen[-1], before)
    # identical observation counts give identical draws whatever was imputed
    a = orig(np.random.default_rng(9), [10, 20, 0], hp)
    b = orig(np.random.default_rng(9), [10, 20, 0], hp)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- assignments

def test_assignments_single_component(rng):
    hp = hp_1d(k_trunc=1)
    s = state_1d([1.0], [0.5], [0.1], [0] * 20)
    data = Dataset(rng.uniform(size=(20, 1)), Interval(0, 1))
    for mode in ("conditional", "crp"):
        c = tmog.update_assignments_tmog(rng, s.copy(), data, hp, mode=mode)
        assert np.all(c == 0)


def test_assignments_symmetric_half(rng):
    hp = hp_1d()
    n = 40000
    s = state_1d([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0], np.zeros(n, int))
    data = Dataset(np.zeros((n, 1)), FullSpace(1))
    c = tmog.update_assignments_tmog(rng, s, data, hp)
    assert c.mean() == pytest.approx(0.5, abs=0.01)


def test_assignment_logits_match_direct_evaluation():
    s = state_1d([0.3, 0.7], [0.1, 0.8], [0.02, 0.05])
    x = np.array([[0.2], [0.5], [0.9]])
    logits = tmog.assignment_logits(s, x)
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    dens = np.array([[w * stats.norm.pdf(xi[0], m, math.sqrt(v))
                      for w, m, v in zip([0.3, 0.7], [0.1, 0.8], [0.02, 0.05])] for xi in x])
    assert np.allclose(p, dens / dens.sum(axis=1, keepdims=True), atol=1e-12, rtol=0)


def test_motg_assignment_logits_include_rejections():
    s = state_1d([0.5, 0.5], [0.1, 0.8], [0.02, 0.05], [0, 1])
    x = np.array([[0.4], [0.6]])
    aug = AugmentedRejections("per_observation", np.array([[-0.1], [1.2], [1.1]]),
                              [0, 1, 1], [0, 1, 1], 2)
    rej = motg.rejection_loglik_by_owner(s, aug)
    for i, ys in enumerate([[-0.1], [1.2, 1.1]]):
        for k, (m, v) in enumerate(zip([0.1, 0.8], [0.02, 0.05])):
            want = sum(stats.norm.logpdf(y, m, math.sqrt(v)) for y in ys)
            assert rej[i, k] == pytest.approx(want, abs=1e-12)


def test_motg_symmetric_rejections_give_half(rng):
    hp = hp_1d()
    n = 20000
    s = state_1d([0.5, 0.5], [-1.0, 1.0], [1.0, 1.0], np.zeros(n, int))
    data = Dataset(np.zeros((n, 1)), FullSpace(1))
    pts = np.tile([[-2.0], [2.0]], (n, 1))
    aug = AugmentedRejections("per_observation", pts, np.zeros(2 * n, int),
                              np.repeat(np.arange(n), 2), n)
    c = motg.update_assignments_motg(rng, s, data, aug, hp)
    assert c.mean() == pytest.approx(0.5, abs=0.015)
    assert np.array_equal(aug.labels, c[aug.owners])


def test_motg_without_rejections_matches_tmog_conditional():
    hp = hp_1d()
    s = state_1d([0.3, 0.7], [0.1, 0.8], [0.02, 0.05], [0, 1, 0, 1])
    data = Dataset(np.array([[0.1], [0.5], [0.6], [0.95]]), Interval(0, 1))
    a = tmog.update_assignments_tmog(np.random.default_rng(4), s, data, hp)
    b = motg.update_assignments_motg(np.random.default_rng(4), s, data,
                                     AugmentedRejections.empty("per_observation", 1, 4), hp)
    assert np.array_equal(a, b)


def test_crp_mode_runs_and_stays_in_range(rng):
    hp = hp_1d(k_trunc=6, assignment_mode="crp")
    data = Dataset(rng.uniform(size=(50, 1)), Interval(0, 1))
    for sweep in (tmog.tmog_sweep, motg.motg_sweep):
        s = initial_state(rng, data, hp)
        for it in range(20):
            s, rec = sweep(rng, s, data, hp, it)
            assert s.assignments.min() >= 0 and s.assignments.max() < 6


# ---------------------------------------------------------------- components

def test_update_components_empty_cluster_is_prior_draw(rng):
    hp = hp_1d()
    s = state_1d([0.5, 0.5], [0.1, 0.8], [0.02, 0.05], [0, 0, 0])
    data = Dataset(np.array([[0.1], [0.2], [0.15]]), Interval(0, 1))
    aug = AugmentedRejections.empty("pooled", 1, 3)
    draws = np.array([tmog.update_components_tmog(np.random.default_rng(i), s, data, aug, hp)[0][1, 0]
                      for i in range(3000)])
    prior = np.array([c.mu[0] for c in kernels.sample_niw(rng, hp.niw, 3000)])
    assert stats.ks_2samp(draws, prior).pvalue > 0.01


def test_update_components_concentrates_on_union(rng):
    hp = hp_1d(k_trunc=1)
    x = rng.normal(0.3, 0.1, size=(5000, 1)).clip(0, 1)
    s = state_1d([1.0], [0.5], [0.1], np.zeros(5000, int))
    data = Dataset(x, Interval(0, 1))
    y = rng.normal(-0.1, 0.05, size=(1000, 1))
    aug = AugmentedRejections("pooled", y, np.zeros(1000, int), np.arange(1000), 5000)
    means, covs, _ = tmog.update_components_tmog(rng, s, data, aug, hp)
    union = np.vstack([x, y])
    post_sd = union.std() / math.sqrt(len(union))
    assert abs(means[0, 0] - union.mean()) < 3 * post_sd


def test_component_updates_tmog_motg_share_formula():
    hp = hp_1d()
    s = state_1d([0.5, 0.5], [0.1, 0.8], [0.02, 0.05], [0, 1, 1])
    data = Dataset(np.array([[0.1], [0.8], [0.6]]), Interval(0, 1))
    y = np.array([[-0.1], [1.2], [1.3]])
    pooled = AugmentedRejections("pooled", y, [0, 1, 1], [0, 1, 2], 3)
    per_obs = AugmentedRejections("per_observation", y, [0, 1, 1], [0, 1, 2], 3)
    a = tmog.update_components_tmog(np.random.default_rng(1), s, data, pooled, hp)
    b = motg.update_components_motg(np.random.default_rng(1), s, data, per_obs, hp)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


# ---------------------------------------------------------------- sweeps

@pytest.mark.parametrize("sweep", [tmog.tmog_sweep, motg.motg_sweep])
def test_sweep_determinism_and_record(sweep):
    hp = hp_1d(k_trunc=5, threshold=math.inf)
    x = np.abs(np.random.default_rng(0).normal(0, 0.2, size=(60, 1))).clip(0, 1)
    data = Dataset(x, Interval(0, 1))
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(7)
        s = initial_state(rng, data, hp)
        trace = []
        for it in range(15):
            s, rec = sweep(rng, s, data, hp, it)
            trace.append((rec["rejections"], rec["log_joint"], tuple(rec["occupancy"])))
            assert rec["iteration"] == it and rec["occupancy"].sum() == 60
            assert s.assignments.min() >= 0 and s.assignments.max() < 5
        runs.append(trace)
    assert runs[0] == runs[1]


def test_tmog_weight_counts_are_observations_plus_rejections(monkeypatch, rng):
    hp = hp_1d(k_trunc=4, threshold=math.inf)
    x = np.abs(rng.normal(0, 0.2, size=(40, 1))).clip(0, 1)
    data = Dataset(x, Interval(0, 1))
    seen = {}
    orig_impute = tmog.impute
    orig_weights = tmog.update_weights_tmog

    def spy_impute(*a, **k):
        seen["aug"] = orig_impute(*a, **k)
        return seen["aug"]

    def spy_weights(rng_, n_k, m_k, hp_):
        seen["n"], seen["m"] = np.array(n_k), np.array(m_k)
        return orig_weights(rng_, n_k, m_k, hp_)

    monkeypatch.setattr(tmog, "impute", spy_impute)
    monkeypatch.setattr(tmog, "update_weights_tmog", spy_weights)
    s = initial_state(rng, data, hp)
    for it in range(10):
        before = s.occupancy()
        s, rec = tmog.tmog_sweep(rng, s, data, hp, it)
        assert np.array_equal(seen["n"], before)
        assert np.array_equal(seen["m"], seen["aug"].label_counts(4))
        assert seen["m"].sum() == rec["rejections"]

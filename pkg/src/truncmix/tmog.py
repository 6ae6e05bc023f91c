"""Gibbs sampler for the truncated mixture of Gaussians.

One sweep imputes pooled rejections from the whole proposal mixture, then
updates the weights (counting observations and rejections), the
assignments and the component parameters, and finally discards the
rejections.
"""

import math
import time

import numpy as np

from . import kernels, threshold
from .mixture import (AugmentedRejections, DEFAULT_SAFETY_CAP, component_logpdf,
                      log_joint_tmog, mixture_proposer, run_stream)


def impute_pooled(rng, state, data, safety_cap=DEFAULT_SAFETY_CAP):
    """Exact imputation: one rejection run per observation from ``q``.

    Each run's accepted proposal is discarded; the rejections are pooled with
    the component label each was drawn from.
    """
    n, d = data.points.shape
    if data.constraint.is_full:
        return AugmentedRejections.empty("pooled", d, n)
    res = run_stream(rng, mixture_proposer(state), data.constraint.contains, n,
                     safety_cap=safety_cap)
    owners = np.repeat(np.arange(n), res.runs)
    return AugmentedRejections("pooled", res.rejected, res.rejected_labels,
                               owners, n)


def update_weights_tmog(rng, counts_obs, counts_rej, hp):
    """Weights given observation counts ``n_k`` plus rejection counts ``m_k``."""
    counts = np.asarray(counts_obs, dtype=float) + np.asarray(counts_rej, dtype=float)
    return draw_weights(rng, counts, hp)


def draw_weights(rng, counts, hp):
    if hp.weight_prior == "dirichlet":
        return kernels.sample_dirichlet(rng, counts + hp.alpha0)
    return kernels.stick_breaking_posterior(rng, counts, hp.alpha0)


def assignment_logits(state, x):
    with np.errstate(divide="ignore"):
        return component_logpdf(state, x) + np.log(state.weights)


def update_assignments_tmog(rng, state, data, hp, aug=None, mode=None):
    """Resample the observation assignments.

    ``conditional`` draws every ``c_i`` independently from
    ``pi_k N(x_i | k)``.  ``crp`` marginalises the weights and sweeps
    sequentially with counts ``n_k^{-i} + m_k`` and ``alpha0`` for a fresh
    component drawn from the prior.
    """
    mode = mode or hp.assignment_mode
    x = data.points
    if mode == "conditional":
        return kernels.sample_categorical(rng, assignment_logits(state, x))
    if mode != "crp":
        raise ValueError("unknown assignment mode %r" % mode)
    m = np.zeros(state.K) if aug is None else aug.label_counts(state.K)
    return crp_assignments(rng, state, x, hp, extra_counts=m)


def crp_assignments(rng, state, x, hp, extra_counts, rejection_loglik=None,
                    owner_rejections=None):
    """Sequential Chinese-restaurant assignment sweep with one auxiliary slot.

    New components reuse the lowest empty slot of the truncation; their
    parameters are a fresh prior draw unless observation ``i`` was alone in
    its component, in which case the auxiliary keeps those parameters.
    ``rejection_loglik`` (n, K) adds per-observation terms that move with the
    observation; ``owner_rejections`` supplies the points needed to score a
    freshly drawn auxiliary component.  Mutates the components of ``state``
    and returns the new assignments.
    """
    p = hp.niw
    phi_chol = kernels.cholesky(p.phi)
    c = state.assignments.copy()
    n = len(x)
    loglik = component_logpdf(state, x)
    if rejection_loglik is not None:
        loglik = loglik + rejection_loglik
    counts = np.bincount(c, minlength=state.K).astype(float) + extra_counts
    log_alpha = math.log(hp.alpha0)
    for i in range(n):
        k_old = c[i]
        counts[k_old] -= 1
        occ = counts > 0
        logits = np.full(state.K, -np.inf)
        logits[occ] = np.log(counts[occ]) + loglik[i, occ]
        aux = fresh = None
        if not occ[k_old]:
            aux = k_old
            logits[aux] = log_alpha + loglik[i, aux]
        elif not occ.all():
            aux = int(np.flatnonzero(~occ)[0])
            fresh = kernels.sample_niw_batch(
                rng, p.mu0[None], np.array([p.lam]), phi_chol[None], np.array([p.nu]))
            mu, _, chol = fresh
            pts = x[i:i + 1]
            if owner_rejections is not None and len(owner_rejections[i]):
                pts = np.vstack([pts, owner_rejections[i]])
            logits[aux] = log_alpha + kernels.mvn_logpdf_chol(pts, mu, chol)[:, 0].sum()
        k_new = int(kernels.sample_categorical(rng, logits[None])[0])
        if fresh is not None and k_new == aux:
            mu, sigma, chol = fresh
            state.means[aux] = mu[0]
            state.covs[aux] = sigma[0]
            state.chols[aux] = chol[0]
            col = kernels.mvn_logpdf_chol(x, mu, chol)[:, 0]
            if rejection_loglik is not None:
                col = col + np.array([
                    kernels.mvn_logpdf_chol(r, mu, chol)[:, 0].sum() if len(r) else 0.0
                    for r in owner_rejections])
            loglik[:, aux] = col
        c[i] = k_new
        counts[k_new] += 1
    return c


def update_components(rng, state, x, labels, hp):
    """Conjugate NIW draw for every component from the points labelled to it.

    Empty components draw from the prior.  Returns ``(means, covs, chols)``.
    """
    counts, means, scat = kernels.grouped_stats(x, labels, state.K)
    mu_n, lam_n, phi_n, nu_n = kernels.niw_posterior_stats(hp.niw, counts, means, scat)
    phi_chol = kernels.cholesky(phi_n, jitter_retry=True)
    return kernels.sample_niw_batch(rng, mu_n, lam_n, phi_chol, nu_n)


def update_components_tmog(rng, state, data, aug, hp):
    """Component update over observations and pooled rejections together."""
    if aug.count:
        x = np.vstack([data.points, aug.points])
        labels = np.concatenate([state.assignments, aug.labels])
    else:
        x, labels = data.points, state.assignments
    return update_components(rng, state, x, labels, hp)


def impute(rng, state, data, hp):
    """Exact or thresholded imputation according to ``hp.threshold``."""
    if math.isinf(hp.threshold):
        return impute_pooled(rng, state, data, hp.safety_cap)
    policy = threshold.ThresholdPolicy(hp.threshold_variant, hp.threshold)
    return threshold.impute(rng, state, data, policy, "pooled",
                            safety_cap=hp.safety_cap, sweep_cap=hp.sweep_cap)


def tmog_sweep(rng, state, data, hp, iteration=0):
    """One full Gibbs iteration; returns ``(new_state, trace_record)``."""
    t0 = time.perf_counter()
    state = state.copy()
    aug = impute(rng, state, data, hp)
    m = aug.label_counts(state.K)
    state.weights = update_weights_tmog(rng, state.occupancy(), m, hp)
    state.assignments = update_assignments_tmog(rng, state, data, hp, aug)
    state.set_components(*update_components_tmog(rng, state, data, aug, hp))
    record = {
        "iteration": iteration,
        "rejections": aug.count,
        "log_joint": log_joint_tmog(state, data, aug, hp),
        "occupancy": state.occupancy(),
        "seconds": time.perf_counter() - t0,
    }
    return state, record

"""Gibbs sampler for the mixture of truncated Gaussians.

Rejections belong to the observation whose run they preceded and are drawn
from that observation's component only.  They never enter the weight
update, they do enter the assignment update, and they move with their
observation when it changes component.
"""

import math
import time

import numpy as np

from . import kernels, threshold
from .exceptions import RunawayRejectionError
from .mixture import (AugmentedRejections, DEFAULT_SAFETY_CAP, DEFAULT_SWEEP_CAP,
                      component_proposer, log_joint_motg, run_stream)
from .tmog import assignment_logits, crp_assignments, draw_weights, update_components

_CHUNK = 20000


def impute_per_observation(rng, state, data, safety_cap=DEFAULT_SAFETY_CAP,
                           sweep_cap=DEFAULT_SWEEP_CAP):
    """Exact imputation: propose from component ``c_i`` until acceptance.

    Observations sharing a component consume consecutive runs of one
    proposal stream, which is the same as independent runs per observation.
    """
    n, d = data.points.shape
    if data.constraint.is_full:
        return AugmentedRejections.empty("per_observation", d, n)
    c = state.assignments
    pts, labels, owners = [], [], []
    total = 0
    for k in np.unique(c):
        idx = np.flatnonzero(c == k)
        res = run_stream(rng, component_proposer(state, k),
                         data.constraint.contains, len(idx),
                         safety_cap=safety_cap, component=int(k))
        total += res.n_rejected
        if total > sweep_cap:
            raise RunawayRejectionError(
                "per-sweep rejection total exceeded %d" % sweep_cap,
                count=total, component=int(k))
        pts.append(res.rejected)
        labels.append(res.rejected_labels)
        owners.append(np.repeat(idx, res.runs))
    return AugmentedRejections("per_observation", np.concatenate(pts),
                               np.concatenate(labels), np.concatenate(owners), n)


def update_weights_motg(rng, counts_obs, hp):
    """Weights from observation counts only."""
    return draw_weights(rng, np.asarray(counts_obs, dtype=float), hp)


def rejection_loglik_by_owner(state, aug):
    """(n, K) matrix of ``sum_r log N(y_ir | k)`` for every observation."""
    out = np.zeros((aug.n, state.K))
    if not aug.count:
        return out
    for start in range(0, aug.count, _CHUNK):
        sl = slice(start, start + _CHUNK)
        ll = kernels.mvn_logpdf_chol(aug.points[sl], state.means, state.chols)
        np.add.at(out, aug.owners[sl], ll)
    return out


def update_assignments_motg(rng, state, data, aug, hp, mode=None):
    """Resample assignments; each observation carries its rejections along.

    The conditional weight of component ``k`` is
    ``pi_k N(x_i | k) prod_r N(y_ir | k)``.  ``aug.labels`` is rewritten to
    the owners' new components.
    """
    mode = mode or hp.assignment_mode
    rej = rejection_loglik_by_owner(state, aug)
    if mode == "conditional":
        c = kernels.sample_categorical(rng, assignment_logits(state, data.points) + rej)
    elif mode == "crp":
        groups = [g[0] for g in aug.groups()] if aug.count else None
        c = crp_assignments(rng, state, data.points, hp, np.zeros(state.K),
                            rejection_loglik=rej, owner_rejections=groups)
    else:
        raise ValueError("unknown assignment mode %r" % mode)
    aug.labels = c[aug.owners]
    return c


def update_components_motg(rng, state, data, aug, hp):
    """Component update over ``{x_i : c_i = k}`` and their rejection groups."""
    if aug.count:
        x = np.vstack([data.points, aug.points])
        labels = np.concatenate([state.assignments, state.assignments[aug.owners]])
    else:
        x, labels = data.points, state.assignments
    return update_components(rng, state, x, labels, hp)


def impute(rng, state, data, hp):
    if math.isinf(hp.threshold):
        return impute_per_observation(rng, state, data, hp.safety_cap, hp.sweep_cap)
    policy = threshold.ThresholdPolicy(hp.threshold_variant, hp.threshold)
    return threshold.impute(rng, state, data, policy, "per_observation",
                            safety_cap=hp.safety_cap, sweep_cap=hp.sweep_cap)


def motg_sweep(rng, state, data, hp, iteration=0):
    """One full Gibbs iteration; returns ``(new_state, trace_record)``."""
    t0 = time.perf_counter()
    state = state.copy()
    aug = impute(rng, state, data, hp)
    state.weights = update_weights_motg(rng, state.occupancy(), hp)
    state.assignments = update_assignments_motg(rng, state, data, aug, hp)
    state.set_components(*update_components_motg(rng, state, data, aug, hp))
    record = {
        "iteration": iteration,
        "rejections": aug.count,
        "log_joint": log_joint_motg(state, data, aug, hp),
        "occupancy": state.occupancy(),
        "seconds": time.perf_counter() - t0,
    }
    return state, record

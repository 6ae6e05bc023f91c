"""Thresholded imputation of rejected proposals.

Believing ``q(S) = rho`` bounds the rejection budget at ``t = (1 - rho) / rho``
rejections per observation.  Three variants replace the exact imputation
step:

``geometric_count``
    draw a geometric number of rejections per observation, then simulate
    their locations from ``q`` conditioned to fall outside ``S``;
``fixed_average``
    use the average count ``round(n t)`` instead of a random one;
``capped_run`` (default)
    run the plain rejection sampler until ``ceil(n t)`` rejections or ``n``
    acceptances, whichever comes first.

``t = inf`` is the exact sampler and ``t = 0`` means no augmentation at all.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import ConfigError, RunawayRejectionError
from .mixture import (AugmentedRejections, DEFAULT_SAFETY_CAP, DEFAULT_SWEEP_CAP,
                      component_proposer, mixture_proposer, run_stream)

VARIANTS = ("exact", "geometric_count", "fixed_average", "capped_run")
THRESHOLD_GRID = (0.0, 0.5, 1.0, 5.0, 50.0, math.inf)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Imputation variant and its per-observation rejection budget ``t``."""

    variant: str = "capped_run"
    threshold: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError("unknown threshold variant %r" % self.variant)
        t = float(self.threshold)
        if self.variant == "exact":
            t = math.inf
        if not t >= 0:
            raise ValueError("threshold must be nonnegative, got %r" % t)
        object.__setattr__(self, "threshold", t)

    @classmethod
    def from_rho(cls, rho, variant="capped_run"):
        if not 0.0 < rho <= 1.0:
            raise ValueError("rho must lie in (0, 1], got %r" % rho)
        return cls(variant, (1.0 - rho) / rho)

    @property
    def rho(self):
        return 1.0 / (1.0 + self.threshold)

    @property
    def exact(self):
        return math.isinf(self.threshold)

    def budget(self, n):
        """Aggregate rejection cap ``ceil(n t)``."""
        return int(math.ceil(n * self.threshold))

    def average_count(self, n):
        """Fixed rejection count ``round(n t)``, halves rounded up."""
        return int(math.floor(n * self.threshold + 0.5))


def parse_threshold_list(text):
    """Parse ``"0,0.5,1,5,50,inf"`` into floats."""
    out = []
    for tok in str(text).split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        try:
            val = math.inf if tok in ("inf", "infinity") else float(tok)
        except ValueError:
            raise ConfigError("invalid threshold %r" % tok)
        if not val >= 0:
            raise ConfigError("thresholds must be nonnegative, got %r" % tok)
        out.append(val)
    if not out:
        raise ConfigError("empty threshold list")
    return out


def _empty(data, mode):
    return AugmentedRejections.empty(mode, data.dim, data.n)


def _outside(constraint):
    return lambda pts: ~constraint.contains(pts)


def _check_sweep_cap(total, sweep_cap, component=None):
    if total > sweep_cap:
        raise RunawayRejectionError("per-sweep rejection total exceeded %d" % sweep_cap,
                                    count=int(total), component=component)


def _locate(rng, state, data, per_obs, mode, safety_cap, sweep_cap):
    """Simulate ``per_obs[i]`` locations outside ``S`` for every observation.

    Pooled mode proposes from the whole mixture (the kept proposal's
    component becomes the label); per-observation mode proposes from the
    owner's component.
    """
    n = data.n
    per_obs = np.asarray(per_obs, dtype=np.intp)
    total = int(per_obs.sum())
    _check_sweep_cap(total, sweep_cap)
    if total == 0:
        return _empty(data, mode)
    outside = _outside(data.constraint)
    if mode == "pooled":
        res = run_stream(rng, mixture_proposer(state), outside, total,
                         safety_cap=safety_cap)
        owners = np.repeat(np.arange(n), per_obs)
        return AugmentedRejections(mode, res.accepted, res.accepted_labels, owners, n)
    c = state.assignments
    pts, labels, owners = [], [], []
    for k in np.unique(c):
        idx = np.flatnonzero(c == k)
        need = int(per_obs[idx].sum())
        if need == 0:
            continue
        res = run_stream(rng, component_proposer(state, k), outside, need,
                         safety_cap=safety_cap, component=int(k))
        pts.append(res.accepted)
        labels.append(res.accepted_labels)
        owners.append(np.repeat(idx, per_obs[idx]))
    return AugmentedRejections(mode, np.concatenate(pts), np.concatenate(labels),
                               np.concatenate(owners), n)


def impute_geometric_count(rng, state, data, policy, mode="pooled",
                           safety_cap=DEFAULT_SAFETY_CAP, sweep_cap=DEFAULT_SWEEP_CAP):
    """Geometric(rho) rejection counts per observation, located outside ``S``."""
    if policy.threshold == 0 or data.constraint.is_full:
        return _empty(data, mode)
    counts = kernels.sample_geometric_failures(rng, policy.rho, size=data.n)
    return _locate(rng, state, data, counts, mode, safety_cap, sweep_cap)


def impute_fixed_average(rng, state, data, policy, mode="pooled",
                         safety_cap=DEFAULT_SAFETY_CAP, sweep_cap=DEFAULT_SWEEP_CAP):
    """Exactly ``round(n t)`` rejections, spread as evenly as possible."""
    if policy.threshold == 0 or data.constraint.is_full:
        return _empty(data, mode)
    total = policy.average_count(data.n)
    base, extra = divmod(total, data.n)
    counts = np.full(data.n, base, dtype=np.intp)
    counts[:extra] += 1
    return _locate(rng, state, data, counts, mode, safety_cap, sweep_cap)


def _capped_component_runs(rng, propose, accept, m, cap, safety_cap, component):
    """Runs for ``m`` observations sharing one proposal stream.

    Each observation stops at its first acceptance or after ``cap``
    rejections.  Returns the rejected points in order and the run lengths.
    """
    chunks_pts = []
    buf_ok = np.zeros(0, dtype=bool)
    acc_pos = np.zeros(0, dtype=np.intp)
    pos = 0
    a = 0
    runs = np.zeros(m, dtype=np.intp)
    batch = max(64, 2 * m * (min(cap, 8) + 1))
    for i in range(m):
        while True:
            while a < len(acc_pos) and acc_pos[a] < pos:
                a += 1
            nxt = acc_pos[a] if a < len(acc_pos) else None
            if nxt is not None and nxt - pos < cap:
                runs[i] = nxt - pos
                pos = nxt + 1
                break
            if nxt is not None or len(buf_ok) - pos >= cap:
                runs[i] = cap
                pos += cap
                break
            p, _ = propose(rng, batch)
            ok = accept(p)
            acc_pos = np.concatenate([acc_pos, len(buf_ok) + np.flatnonzero(ok)])
            chunks_pts.append(p)
            buf_ok = np.concatenate([buf_ok, ok])
    buf_pts = np.concatenate(chunks_pts) if chunks_pts else np.zeros((0, 1))
    used = buf_ok[:pos]
    return buf_pts[:pos][~used], runs


def impute_capped_run(rng, state, data, policy, mode="pooled",
                      safety_cap=DEFAULT_SAFETY_CAP, sweep_cap=DEFAULT_SWEEP_CAP):
    """Plain rejection sampling stopped at ``ceil(n t)`` rejections or ``n``
    acceptances, whichever occurs first; accepted draws are discarded.

    In per-observation mode every observation runs from its own component
    and stops at acceptance or ``ceil(t)`` rejections; the aggregate
    ``ceil(n t)`` cap is then enforced in observation order.
    """
    if policy.exact:
        return impute_exact(rng, state, data, mode, safety_cap, sweep_cap)
    n = data.n
    if policy.threshold == 0 or data.constraint.is_full:
        return _empty(data, mode)
    budget = policy.budget(n)
    contains = data.constraint.contains
    if mode == "pooled":
        res = run_stream(rng, mixture_proposer(state), contains, n,
                         max_reject=budget, safety_cap=safety_cap)
        runs = np.concatenate([res.runs, [res.trailing]]) if res.trailing else res.runs
        owners = np.repeat(np.arange(len(runs)), runs)
        return AugmentedRejections(mode, res.rejected, res.rejected_labels, owners, n)
    cap = int(math.ceil(policy.threshold))
    c = state.assignments
    per_obs = np.zeros(n, dtype=np.intp)
    located = {}
    for k in np.unique(c):
        idx = np.flatnonzero(c == k)
        pts, runs = _capped_component_runs(rng, component_proposer(state, k),
                                           contains, len(idx), cap, safety_cap, int(k))
        per_obs[idx] = runs
        located[int(k)] = (idx, pts, runs)
    allowed = np.minimum(per_obs, np.maximum(budget - (np.cumsum(per_obs) - per_obs), 0))
    pts_out, lab_out, own_out = [], [], []
    for k, (idx, pts, runs) in located.items():
        starts = np.concatenate([[0], np.cumsum(runs)[:-1]])
        for j, i in enumerate(idx):
            r = allowed[i]
            if r:
                pts_out.append(pts[starts[j]:starts[j] + r])
                own_out.append(np.full(r, i, dtype=np.intp))
                lab_out.append(np.full(r, k, dtype=np.intp))
    if not pts_out:
        return _empty(data, mode)
    return AugmentedRejections(mode, np.concatenate(pts_out), np.concatenate(lab_out),
                               np.concatenate(own_out), n)


def impute_exact(rng, state, data, mode, safety_cap=DEFAULT_SAFETY_CAP,
                 sweep_cap=DEFAULT_SWEEP_CAP):
    """The unthresholded imputation of the corresponding sampler."""
    if mode == "pooled":
        from .tmog import impute_pooled
        return impute_pooled(rng, state, data, safety_cap)
    from .motg import impute_per_observation
    return impute_per_observation(rng, state, data, safety_cap, sweep_cap)


_DISPATCH = {
    "geometric_count": impute_geometric_count,
    "fixed_average": impute_fixed_average,
    "capped_run": impute_capped_run,
}


def impute(rng, state, data, policy, mode="pooled", safety_cap=DEFAULT_SAFETY_CAP,
           sweep_cap=DEFAULT_SWEEP_CAP):
    """Impute rejections according to ``policy``; ``t = inf`` is always exact."""
    if policy.exact:
        return impute_exact(rng, state, data, mode, safety_cap, sweep_cap)
    return _DISPATCH[policy.variant](rng, state, data, policy, mode,
                                     safety_cap=safety_cap, sweep_cap=sweep_cap)

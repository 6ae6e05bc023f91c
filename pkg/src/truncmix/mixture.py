"""Model state, the unconstrained proposal mixture and rejection sampling.

The observations are modelled as accepted proposals of a rejection sampler
whose proposal is a Gaussian mixture ``q(x | theta)``.  This module holds the
shared state containers, the proposal density, the streaming rejection
sampler used by every imputation scheme, and the two augmented joint
log-densities (pooled rejections for the truncated mixture, per-observation
rejections for the mixture of truncated components).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .constraints import ConstraintSet
from .exceptions import ConstraintViolationError, RunawayRejectionError

DEFAULT_SAFETY_CAP = 10 ** 6
DEFAULT_SWEEP_CAP = 10 ** 8

_MAX_BATCH = 1 << 16


class MixtureState(object):
    """Mixture parameters ``theta = (pi, {(mu_k, Sigma_k)})`` and assignments.

    Components are stored as stacked arrays; ``chols`` always holds the lower
    Cholesky factors of ``covs``.
    """

    def __init__(self, weights, means, covs, assignments=None, chols=None):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.covs = np.asarray(covs, dtype=float).reshape(
            len(self.means), self.means.shape[1], self.means.shape[1])
        self.chols = kernels.cholesky(self.covs) if chols is None else chols
        if assignments is None:
            assignments = np.zeros(0, dtype=np.intp)
        self.assignments = np.asarray(assignments, dtype=np.intp)
        K = len(self.weights)
        if len(self.means) != K:
            raise ValueError("weights and components must have the same length")
        if len(self.assignments) and (self.assignments.min() < 0
                                      or self.assignments.max() >= K):
            raise ValueError("assignments must lie in 0..K-1")

    @classmethod
    def from_components(cls, weights, components, assignments=None):
        means = np.array([c.mu for c in components])
        covs = np.array([c.sigma for c in components])
        return cls(weights, means, covs, assignments)

    @property
    def K(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def components(self):
        return [kernels.ComponentParams(self.means[k], self.covs[k])
                for k in range(self.K)]

    def set_components(self, means, covs, chols):
        self.means = means
        self.covs = covs
        self.chols = chols

    def occupancy(self):
        return np.bincount(self.assignments, minlength=self.K)

    def copy(self):
        return MixtureState(self.weights.copy(), self.means.copy(),
                            self.covs.copy(), self.assignments.copy(),
                            self.chols.copy())

    def __repr__(self):
        return "MixtureState(K=%d, dim=%d, n=%d)" % (
            self.K, self.dim, len(self.assignments))


class Dataset(object):
    """Observations ``X`` (n, d) together with their constraint set.

    Every row is checked against the constraint; the first violating row
    raises :class:`ConstraintViolationError`.
    """

    def __init__(self, points, constraint):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[1] != constraint.dim:
            raise ValueError("data of shape %s does not match a %d-dimensional "
                             "constraint" % (pts.shape, constraint.dim))
        if not np.all(np.isfinite(pts)):
            bad = int(np.flatnonzero(~np.isfinite(pts).all(axis=1))[0])
            raise ConstraintViolationError("row %d is not finite" % bad, row=bad)
        inside = constraint.contains(pts)
        if not np.all(inside):
            bad = int(np.flatnonzero(~inside)[0])
            raise ConstraintViolationError(
                "row %d (%s) lies outside the constraint set"
                % (bad, pts[bad].tolist()), row=bad)
        self.points = pts
        self.constraint = constraint

    @property
    def n(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def subset(self, index):
        ds = Dataset.__new__(Dataset)
        ds.points = self.points[index]
        ds.constraint = self.constraint
        return ds


class AugmentedRejections(object):
    """Imputed rejected proposals.

    Attributes
    ----------
    mode : {'pooled', 'per_observation'}
    points : ndarray of shape (R, d)
    labels : ndarray of shape (R,)
        Component of each rejection (``C*`` when pooled, the owner's
        assignment when per-observation).
    owners : ndarray of shape (R,)
        Index of the observation whose rejection run contained the point.
    n : int
        Number of observations.
    """

    def __init__(self, mode, points, labels, owners, n):
        if mode not in ("pooled", "per_observation"):
            raise ValueError("unknown augmentation mode %r" % mode)
        self.mode = mode
        self.points = points
        self.labels = np.asarray(labels, dtype=np.intp)
        self.owners = np.asarray(owners, dtype=np.intp)
        self.n = n

    @classmethod
    def empty(cls, mode, dim, n):
        return cls(mode, np.zeros((0, dim)), np.zeros(0, np.intp),
                   np.zeros(0, np.intp), n)

    @property
    def count(self):
        return len(self.points)

    def __len__(self):
        return self.count

    def counts_per_observation(self):
        return np.bincount(self.owners, minlength=self.n)

    def label_counts(self, K):
        return np.bincount(self.labels, minlength=K)

    def groups(self):
        """Rejections grouped by owner: list of (points, label) per observation."""
        order = np.argsort(self.owners, kind="stable")
        bounds = np.searchsorted(self.owners[order], np.arange(self.n + 1))
        out = []
        for i in range(self.n):
            sel = order[bounds[i]:bounds[i + 1]]
            out.append((self.points[sel], self.labels[sel]))
        return out


@dataclass
class Hyperparams:
    """Fixed hyperparameters of a run."""

    niw: kernels.NiwParams
    alpha0: float = 1.0
    k_trunc: int = 50
    threshold: float = math.inf
    threshold_variant: str = "capped_run"
    iters: int = 5000
    burn_in: int = 2000
    seed: int = 0
    weight_prior: str = "stick_breaking"
    assignment_mode: str = "conditional"
    safety_cap: int = DEFAULT_SAFETY_CAP
    sweep_cap: int = DEFAULT_SWEEP_CAP

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if self.k_trunc < 1:
            raise ValueError("k_trunc must be at least 1")
        if not self.threshold >= 0:
            raise ValueError("threshold must be nonnegative")
        if self.burn_in >= self.iters:
            raise ValueError("burn_in must be smaller than iters")
        if self.weight_prior not in ("stick_breaking", "dirichlet"):
            raise ValueError("weight_prior must be 'stick_breaking' or 'dirichlet'")
        if self.assignment_mode not in ("conditional", "crp"):
            raise ValueError("assignment_mode must be 'conditional' or 'crp'")


def proposal_logpdf(state, x):
    """``log q(x | theta) = log sum_k pi_k N(x | mu_k, Sigma_k)``.

    ``x`` is a d-vector (returns a float) or an (n, d) array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    pts = x.reshape(1, -1) if single else x
    comp = component_logpdf(state, pts)
    with np.errstate(divide="ignore"):
        out = logsumexp(comp + np.log(state.weights), axis=1)
    return float(out[0]) if single else out


def component_logpdf(state, x):
    """(n, K) matrix of per-component Gaussian log-densities."""
    return kernels.mvn_logpdf_chol(np.asarray(x, dtype=float), state.means, state.chols)


def labeled_logpdf(x, labels, means, chols):
    """Log-density of each row of ``x`` under its own labelled component."""
    if len(x) == 0:
        return np.zeros(0)
    diff = x - means[labels]
    z = kernels.tri_solve(chols[labels], diff[:, None, :])[:, 0, :]
    half_logdet = np.log(np.diagonal(chols, axis1=-2, axis2=-1)).sum(-1)
    return (-0.5 * (z ** 2).sum(-1) - half_logdet[labels]
            - 0.5 * x.shape[1] * np.log(2.0 * np.pi))


def mixture_proposer(state):
    """Proposal function drawing a fresh component label per proposal."""
    weights, means, chols = state.weights, state.means, state.chols
    d = state.dim

    def propose(rng, size):
        labels = kernels.categorical_from_weights(rng, weights, size)
        z = rng.standard_normal((size, d))
        pts = means[labels] + np.einsum("nij,nj->ni", chols[labels], z)
        return pts, labels

    return propose


def component_proposer(state, k):
    """Proposal function that only ever uses component ``k``."""
    mu, L = state.means[k], state.chols[k]
    d = state.dim

    def propose(rng, size):
        z = rng.standard_normal((size, d))
        return mu + z @ L.T, np.full(size, k, dtype=np.intp)

    return propose


@dataclass
class StreamResult:
    """Outcome of a rejection stream."""

    accepted: np.ndarray
    accepted_labels: np.ndarray
    rejected: np.ndarray
    rejected_labels: np.ndarray
    runs: np.ndarray = field(default=None)
    # rejections after the last acceptance (stream stopped by a rejection cap)
    trailing: int = 0

    @property
    def n_rejected(self):
        return len(self.rejected)


def run_stream(rng, propose, accept, n_accept, max_reject=None,
               safety_cap=DEFAULT_SAFETY_CAP, component=None):
    """Draw proposals until ``n_accept`` acceptances or ``max_reject`` rejections.

    The stream is generated in batches but consumed strictly in order, so the
    result is the prefix of one i.i.d. proposal sequence.  ``runs[j]`` is the
    number of rejections immediately preceding the ``j``-th acceptance.

    Raises
    ------
    RunawayRejectionError
        If a single run of consecutive rejections exceeds ``safety_cap``.
    """
    acc_pts, acc_lab, rej_pts, rej_lab, runs = [], [], [], [], []
    n_acc = 0
    n_rej = 0
    carry = 0
    rate = 0.5
    proposed = 0
    accepted_total = 0
    while n_acc < n_accept and (max_reject is None or n_rej < max_reject):
        need = n_accept - n_acc
        size = int(min(_MAX_BATCH, max(64, math.ceil(1.2 * need / rate) + 16)))
        pts, labels = propose(rng, size)
        ok = accept(pts)
        cum_acc = np.cumsum(ok)
        stop = size
        hit = np.searchsorted(cum_acc, need)
        if hit < size:
            stop = hit + 1
        if max_reject is not None:
            cum_rej = np.cumsum(~ok)
            hit_r = np.searchsorted(cum_rej, max_reject - n_rej)
            if hit_r < size:
                stop = min(stop, hit_r + 1)
        ok = ok[:stop]
        pos = np.flatnonzero(ok)
        if len(pos):
            gaps = np.diff(np.concatenate([[-1], pos])) - 1
            gaps[0] += carry
            tail = stop - 1 - pos[-1]
        else:
            gaps = np.zeros(0, dtype=np.intp)
            tail = carry + stop
        longest = max(gaps.max() if len(gaps) else 0, tail)
        if longest > safety_cap:
            raise RunawayRejectionError(
                "rejection run exceeded the safety cap of %d proposals"
                % safety_cap, count=int(longest), component=component)
        runs.append(gaps)
        carry = tail
        acc_pts.append(pts[:stop][ok])
        acc_lab.append(labels[:stop][ok])
        rej_pts.append(pts[:stop][~ok])
        rej_lab.append(labels[:stop][~ok])
        n_acc += len(pos)
        n_rej += stop - len(pos)
        proposed += stop
        accepted_total += len(pos)
        rate = max((accepted_total + 0.5) / (proposed + 1.0), 1e-6)
    d = None
    for p in acc_pts + rej_pts:
        d = p.shape[1]
        break
    return StreamResult(
        accepted=np.concatenate(acc_pts) if acc_pts else np.zeros((0, d or 1)),
        accepted_labels=np.concatenate(acc_lab) if acc_lab else np.zeros(0, np.intp),
        rejected=np.concatenate(rej_pts) if rej_pts else np.zeros((0, d or 1)),
        rejected_labels=np.concatenate(rej_lab) if rej_lab else np.zeros(0, np.intp),
        runs=np.concatenate(runs) if runs else np.zeros(0, np.intp),
        trailing=int(carry))


def rejection_sample_observation(rng, state, constraint, mode="pooled",
                                 safety_cap=DEFAULT_SAFETY_CAP):
    """Simulate one observation from the constrained model.

    Parameters
    ----------
    mode : 'pooled' or ('single_component', k) or an int ``k``
        Pooled draws a fresh component label for every proposal; a single
        component proposes only from component ``k``.

    Returns
    -------
    accepted : ndarray of shape (d,)
    rejected : list of (point, label)
    """
    if mode == "pooled":
        propose, comp = mixture_proposer(state), None
    else:
        k = mode[1] if isinstance(mode, tuple) else int(mode)
        propose, comp = component_proposer(state, k), k
    res = run_stream(rng, propose, constraint.contains, 1,
                     safety_cap=safety_cap, component=comp)
    rejected = [(res.rejected[r], int(res.rejected_labels[r]))
                for r in range(res.n_rejected)]
    return res.accepted[0], rejected


def simulate_tmog(rng, state, constraint, n, safety_cap=DEFAULT_SAFETY_CAP):
    """``n`` observations from the truncated mixture, with their labels."""
    res = run_stream(rng, mixture_proposer(state), constraint.contains, n,
                     safety_cap=safety_cap)
    return res.accepted, res.accepted_labels


def simulate_motg(rng, state, constraint, n, safety_cap=DEFAULT_SAFETY_CAP):
    """``n`` observations from the mixture of truncated components.

    Labels are drawn from the weights first; each observation is then
    rejection-sampled from its own component.
    """
    labels = kernels.categorical_from_weights(rng, state.weights, n)
    pts = np.empty((n, state.dim))
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        res = run_stream(rng, component_proposer(state, k), constraint.contains,
                         len(idx), safety_cap=safety_cap, component=int(k))
        pts[idx] = res.accepted
    return pts, labels


def log_weight_prior(weights, hp):
    if hp.weight_prior == "dirichlet":
        return kernels.dirichlet_logpdf(weights, np.full(len(weights), hp.alpha0))
    return kernels.stick_breaking_logpdf(weights, hp.alpha0)


def _log_prior(state, hp):
    return (log_weight_prior(state.weights, hp)
            + kernels.niw_logpdf(state.means, state.covs, hp.niw).sum())


def log_joint_tmog(state, data, aug, hp):
    """Augmented joint log-density of the truncated mixture.

    Weight prior, NIW priors, then ``log pi_c + log N`` for every
    observation and every pooled rejection.
    """
    if aug.mode != "pooled":
        raise ValueError("log_joint_tmog needs pooled rejections")
    x = data.points if isinstance(data, Dataset) else np.asarray(data)
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights)
    c = state.assignments
    obs = (logw[c] + labeled_logpdf(x, c, state.means, state.chols)).sum()
    rej = (logw[aug.labels] + labeled_logpdf(aug.points, aug.labels,
                                            state.means, state.chols)).sum()
    return float(_log_prior(state, hp) + obs + rej)


def log_joint_motg(state, data, aug, hp):
    """Augmented joint log-density of the mixture of truncated components.

    Rejections enter only through the Gaussian of their owner's component;
    the label is drawn once per observation.
    """
    if aug.mode != "per_observation":
        raise ValueError("log_joint_motg needs per-observation rejections")
    x = data.points if isinstance(data, Dataset) else np.asarray(data)
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights)
    c = state.assignments
    obs = (logw[c] + labeled_logpdf(x, c, state.means, state.chols)).sum()
    owner_labels = c[aug.owners]
    rej = labeled_logpdf(aug.points, owner_labels, state.means, state.chols).sum()
    return float(_log_prior(state, hp) + obs + rej)


def initial_state(rng, data, hp):
    """Prior draw of the parameters; assignments are drawn given them."""
    K = hp.k_trunc
    p = hp.niw
    if hp.weight_prior == "dirichlet":
        weights = kernels.sample_dirichlet(rng, np.full(K, hp.alpha0))
    else:
        weights = kernels.stick_breaking_posterior(rng, np.zeros(K), hp.alpha0)
    means, covs, chols = kernels.sample_niw_batch(
        rng, np.tile(p.mu0, (K, 1)), np.full(K, p.lam),
        np.tile(kernels.cholesky(p.phi), (K, 1, 1)), np.full(K, p.nu))
    state = MixtureState(weights, means, covs, chols=chols)
    x = data.points if isinstance(data, Dataset) else np.asarray(data)
    with np.errstate(divide="ignore"):
        logits = component_logpdf(state, x) + np.log(weights)
    state.assignments = kernels.sample_categorical(rng, logits)
    return state

"""Posterior summaries: normalizers, predictive densities, grids and checks.

The predictive density is the posterior mean of the per-sample constrained
densities.  Each stored sample's intractable normalizer (``q(S)`` for the
truncated mixture, one ``Z_k`` per component for the mixture of truncated
components) is estimated by simple Monte Carlo.  The random stream used for
a sample is derived from the sample's own parameter values, so duplicated or
permuted stores give identical estimates.
"""

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .exceptions import DegenerateNormalizerError
from .mixture import (MixtureState, component_logpdf, component_proposer,
                      mixture_proposer, proposal_logpdf, simulate_motg, simulate_tmog)

DEFAULT_M_NORM = 10 ** 5
_DRAW_CHUNK = 1 << 18


class SampleStore(object):
    """Recorded posterior draws plus per-iteration traces.

    Parameters
    ----------
    weights : ndarray of shape (S, K)
    means : ndarray of shape (S, K, d)
    covs : ndarray of shape (S, K, d, d)
    assignments : ndarray of shape (S, n), optional
    traces : dict of per-iteration arrays
        ``iteration``, ``rejections``, ``log_joint``, ``seconds`` and
        ``occupancy`` (iters, K).
    model : {'tmog', 'motg'}
    """

    def __init__(self, weights, means, covs, assignments=None, traces=None,
                 model="tmog", chols=None):
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.covs = np.asarray(covs, dtype=float)
        self.chols = kernels.cholesky(self.covs) if chols is None else chols
        self.assignments = assignments
        self.traces = traces if traces is not None else {}
        self.model = model
        self._norm_cache = {}
        if not np.allclose(self.weights.sum(axis=1), 1.0, atol=1e-10):
            raise ValueError("stored weight vectors must lie on the simplex")

    @classmethod
    def from_states(cls, states, traces=None, model="tmog", keep_assignments=True):
        states = list(states)
        assignments = None
        if keep_assignments and states and len(states[0].assignments):
            assignments = np.array([s.assignments for s in states])
        return cls(np.array([s.weights for s in states]),
                   np.array([s.means for s in states]),
                   np.array([s.covs for s in states]),
                   assignments, traces, model,
                   chols=np.array([s.chols for s in states]))

    def __len__(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[-1]

    def state(self, s):
        a = None if self.assignments is None else self.assignments[s]
        return MixtureState(self.weights[s], self.means[s], self.covs[s], a,
                            chols=self.chols[s])

    def states(self):
        return [self.state(s) for s in range(len(self))]

    def subset(self, index):
        index = np.asarray(index)
        return SampleStore(self.weights[index], self.means[index], self.covs[index],
                           None if self.assignments is None else self.assignments[index],
                           self.traces, self.model, chols=self.chols[index])


def _sample_seed(state, seed, tag):
    h = hashlib.sha256()
    h.update(str((int(seed), tag)).encode())
    # Cholesky factors, not covariances: they survive a file round trip exactly
    for arr in (state.weights, state.means, state.chols):
        h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def _count_inside(rng, propose, constraint, m):
    hits = 0
    done = 0
    while done < m:
        size = min(_DRAW_CHUNK, m - done)
        pts, _ = propose(rng, size)
        hits += int(np.count_nonzero(constraint.contains(pts)))
        done += size
    return hits


def estimate_q_mass(rng, state, constraint, m=DEFAULT_M_NORM):
    """Monte Carlo estimate of ``q(S)``: the fraction of ``m`` proposals in S."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if constraint.is_full:
        return 1.0
    return _count_inside(rng, mixture_proposer(state), constraint, m) / float(m)


def estimate_component_masses(rng, state, constraint, m=DEFAULT_M_NORM):
    """Per-component Monte Carlo estimates of ``Z_k = N_k(S)``."""
    if constraint.is_full:
        return np.ones(state.K)
    return np.array([_count_inside(rng, component_proposer(state, k), constraint, m)
                     for k in range(state.K)], dtype=float) / m


def constrained_logdensity_tmog(state, x, q_mass, constraint=None):
    """``log q(x | theta) - log q(S)`` inside ``S`` and ``-inf`` outside."""
    if not q_mass > 0:
        raise DegenerateNormalizerError("q(S) estimate is zero")
    if q_mass > 1:
        raise ValueError("q(S) must lie in (0, 1]")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = proposal_logpdf(state, x) - np.log(q_mass)
    if constraint is not None:
        out = np.where(constraint.contains(x), out, -np.inf)
    return out


def constrained_logdensity_motg(state, x, masses, constraint=None):
    """``log sum_k pi_k N(x | k) / Z_k`` inside ``S`` and ``-inf`` outside.

    A zero ``Z_k`` is an error for a component that holds observations; for
    an empty component it means the component's truncation to ``S`` could
    not be resolved at the Monte Carlo budget and its term is dropped.
    """
    masses = np.asarray(masses, dtype=float)
    zero = ~(masses > 0)
    if zero.any():
        occupied = (state.occupancy() > 0) if len(state.assignments) else state.weights > 0
        if np.any(zero & occupied):
            raise DegenerateNormalizerError(
                "normalizer estimate is zero for occupied component(s) %s"
                % np.flatnonzero(zero & occupied).tolist())
    x = np.atleast_2d(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        logw = np.where(zero, -np.inf, np.log(state.weights) - np.log(np.where(zero, 1.0, masses)))
    out = logsumexp(component_logpdf(state, x) + logw, axis=1)
    if constraint is not None:
        out = np.where(constraint.contains(x), out, -np.inf)
    return out


def sample_normalizer(store, s, constraint, m_norm=DEFAULT_M_NORM, seed=0, model=None):
    """Cached normalizer(s) of stored sample ``s``."""
    model = model or store.model
    state = store.state(s)
    key = (model, _sample_seed(state, seed, model), m_norm, hash(constraint))
    if key not in store._norm_cache:
        rng = np.random.default_rng(key[1])
        if model == "tmog":
            val = estimate_q_mass(rng, state, constraint, m_norm)
        else:
            val = estimate_component_masses(rng, state, constraint, m_norm)
        store._norm_cache[key] = val
    return store._norm_cache[key]


def sample_logdensities(store, x, constraint, model=None, m_norm=DEFAULT_M_NORM, seed=0):
    """(S, n) matrix of per-sample constrained log-densities at ``x``."""
    model = model or store.model
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty((len(store), len(x)))
    inside = constraint.contains(x)
    for s in range(len(store)):
        state = store.state(s)
        z = sample_normalizer(store, s, constraint, m_norm, seed, model)
        if model == "tmog":
            out[s] = constrained_logdensity_tmog(state, x, z)
        else:
            out[s] = constrained_logdensity_motg(state, x, z)
    out[:, ~inside] = -np.inf
    return out


def predictive_logdensity(store, x, constraint, model=None, m_norm=DEFAULT_M_NORM, seed=0):
    """Log of the posterior-mean constrained density at each row of ``x``."""
    ld = sample_logdensities(store, x, constraint, model, m_norm, seed)
    return logsumexp(ld, axis=0) - np.log(len(store))


def test_loglikelihood(store, test, model=None, m_norm=DEFAULT_M_NORM, seed=0):
    """Held-out log-likelihood under the posterior predictive density.

    Returns
    -------
    total : float
    per_point : ndarray of shape (n_test,)
    """
    per_point = predictive_logdensity(store, test.points, test.constraint, model,
                                      m_norm, seed)
    return float(per_point.sum()), per_point


test_loglikelihood.__test__ = False


@dataclass
class DensityGrid:
    """Posterior-mean density on a regular grid of cell centres.

    ``values`` and ``inside_mask`` have one axis per entry of ``axes``
    (``indexing='ij'``); ``plane`` names the coordinates for marginal planes.
    """

    axes: list
    values: np.ndarray
    inside_mask: np.ndarray
    plane: tuple = field(default=None)

    def cell_volume(self):
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    def integral(self):
        """Riemann sum over cells inside the constraint."""
        return float((self.values * self.inside_mask).sum() * self.cell_volume())

    def rows(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        coords = np.stack([m.ravel() for m in mesh], axis=1)
        return coords, self.values.ravel(), self.inside_mask.ravel()


def _grid_bounds(store, constraint, inflate=0.2):
    if constraint.is_full:
        sd = np.sqrt(np.diagonal(store.covs, axis1=-2, axis2=-1))
        lo = (store.means - 3 * sd).min(axis=(0, 1))
        hi = (store.means + 3 * sd).max(axis=(0, 1))
    else:
        lo, hi = constraint.bounding_box()
    pad = 0.5 * inflate * (hi - lo)
    return lo - pad, hi + pad


def _axes(lo, hi, resolution):
    return [lo[j] + (np.arange(resolution) + 0.5) * (hi[j] - lo[j]) / resolution
            for j in range(len(lo))]


def _mean_density(store, pts, constraint, model, m_norm, seed, chunk=20000):
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        sl = slice(start, start + chunk)
        ld = predictive_logdensity(store, pts[sl], constraint, model, m_norm, seed)
        out[sl] = np.exp(ld)
    return out


def posterior_mean_grid(store, constraint, resolution=100, model=None,
                        m_norm=DEFAULT_M_NORM, seed=0, bounds=None, n_mc=64):
    """Posterior-mean constrained density on a grid over the inflated
    bounding box of ``S``.

    For ``d <= 2`` one grid is returned.  For ``d > 2`` a dict maps every
    coordinate pair ``(i, j)`` to a marginal-plane grid whose remaining
    coordinates are integrated by uniform Monte Carlo (``n_mc`` points per
    cell) over the bounding box.
    """
    lo, hi = bounds if bounds is not None else _grid_bounds(store, constraint)
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    d = store.dim
    if d <= 2:
        axes = _axes(lo, hi, resolution)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        inside = constraint.contains(pts)
        vals = np.zeros(len(pts))
        if inside.any():
            vals[inside] = _mean_density(store, pts[inside], constraint, model, m_norm, seed)
        shape = tuple([resolution] * d)
        return DensityGrid(axes, vals.reshape(shape), inside.reshape(shape))
    rng = np.random.default_rng(seed)
    grids = {}
    for i, j in itertools.combinations(range(d), 2):
        rest = [r for r in range(d) if r not in (i, j)]
        axes = _axes(lo[[i, j]], hi[[i, j]], resolution)
        gi, gj = np.meshgrid(*axes, indexing="ij")
        plane = np.stack([gi.ravel(), gj.ravel()], axis=1)
        u = lo[rest] + rng.random((n_mc, len(rest))) * (hi[rest] - lo[rest])
        vol = float(np.prod(hi[rest] - lo[rest]))
        pts = np.empty((len(plane) * n_mc, d))
        pts[:, [i, j]] = np.repeat(plane, n_mc, axis=0)
        pts[:, rest] = np.tile(u, (len(plane), 1))
        inside = constraint.contains(pts)
        dens = np.zeros(len(pts))
        if inside.any():
            dens[inside] = _mean_density(store, pts[inside], constraint, model, m_norm, seed)
        vals = vol * dens.reshape(len(plane), n_mc).mean(axis=1)
        mask = inside.reshape(len(plane), n_mc).any(axis=1)
        shape = (resolution, resolution)
        grids[(i, j)] = DensityGrid(axes, vals.reshape(shape), mask.reshape(shape),
                                    plane=(i, j))
    return grids


def boundary_scale_statistic(x, constraint, scale_factor):
    """Fraction of points outside ``S`` after scaling about their centroid."""
    x = np.atleast_2d(x)
    centroid = x.mean(axis=0)
    scaled = centroid + scale_factor * (x - centroid)
    return float(np.mean(~constraint.contains(scaled)))


def ppc_boundary_scale(rng, store, constraint, observed, n_rep=None, scale_factor=1.2,
                       model=None):
    """Posterior predictive check on the out-of-boundary fraction after scaling.

    Replicate ``r`` uses stored sample ``r mod S`` to simulate a dataset of
    the observed size from the constrained model.

    Returns
    -------
    replicate_fractions : ndarray of shape (n_rep,)
    observed_fraction : float
    p_value : float
        Fraction of replicates whose statistic is >= the observed one.
    """
    if not scale_factor > 1:
        raise ValueError("scale_factor must exceed 1")
    model = model or store.model
    x = observed.points if hasattr(observed, "points") else np.atleast_2d(observed)
    n = len(x)
    n_rep = len(store) if n_rep is None else int(n_rep)
    sim = simulate_tmog if model == "tmog" else simulate_motg
    reps = np.empty(n_rep)
    for r in range(n_rep):
        pts, _ = sim(rng, store.state(r % len(store)), constraint, n)
        reps[r] = boundary_scale_statistic(pts, constraint, scale_factor)
    obs = boundary_scale_statistic(x, constraint, scale_factor)
    return reps, obs, float(np.mean(reps >= obs))


def autocorrelation(x, max_lag=50):
    """Sample autocorrelation at lags ``1..max_lag``; ``None`` for a constant
    trace."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    var = np.dot(xc, xc)
    if n < 2 or var == 0 or not np.isfinite(var):
        return None
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    lags = min(max_lag, n - 1)
    return acov[1:lags + 1] / acov[0]


def effective_sample_size(x):
    """Geyer initial-positive-sequence effective sample size."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    rho = autocorrelation(x, max_lag=n - 1)
    if rho is None:
        return None
    rho = np.concatenate([[1.0], rho])
    pairs = rho[:-1:2] + rho[1::2]
    neg = np.flatnonzero(pairs <= 0)
    m = neg[0] if len(neg) else len(pairs)
    pairs = np.minimum.accumulate(pairs[:m]) if m else pairs[:0]
    tau = -1.0 + 2.0 * pairs.sum()
    return float(n / max(tau, 1e-12))


def quantile_summary(values, qs=(0.25, 0.5, 0.75)):
    """Median and quartiles of a set of repeat results."""
    values = np.asarray(values, dtype=float)
    out = {"q%02d" % int(round(100 * q)): float(np.quantile(values, q)) for q in qs}
    out["median"] = float(np.median(values))
    return out


def trace_summary(store, max_lag=50):
    """Autocorrelations, ESS, rejection quantiles and timing of the traces."""
    tr = store.traces
    out = {}
    for name in ("rejections", "log_joint"):
        if name not in tr or not len(tr[name]):
            continue
        series = np.asarray(tr[name], dtype=float)
        acf = autocorrelation(series, max_lag)
        out[name] = {
            "degenerate": acf is None,
            "autocorrelation": None if acf is None else acf.tolist(),
        }
    if "log_joint" in tr and len(tr["log_joint"]):
        out["log_joint"]["ess"] = effective_sample_size(tr["log_joint"])
    if "rejections" in tr and len(tr["rejections"]):
        out["rejections"].update(quantile_summary(tr["rejections"], (0.05, 0.25, 0.5, 0.75, 0.95)))
        out["rejections"]["total"] = int(np.sum(tr["rejections"]))
    if "seconds" in tr and len(tr["seconds"]):
        sec = np.asarray(tr["seconds"], dtype=float)
        out["seconds"] = {"total": float(sec.sum()),
                          "per_100_iterations": float(100 * sec.mean())}
        out["seconds"].update(quantile_summary(sec))
    return out

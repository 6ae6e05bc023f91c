"""Joint-distribution (Geweke) test of the exact samplers.

Two simulators of the joint law of ``(theta, c, X)`` are compared on a tiny
problem:

marginal-conditional
    ``theta`` from the prior, then ``(X, c)`` from the constrained model;
successive-conditional
    alternate Gibbs sweeps ``theta, c | X`` with re-simulation of
    ``(X, c) | theta``.

If the Gibbs sweep leaves the posterior invariant, both produce the same
marginals.  Each test statistic is compared with a z-score whose
successive-chain variance uses batch means.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import Interval
from .kernels import NiwParams
from .mixture import Dataset, Hyperparams, initial_state, simulate_motg, simulate_tmog


@dataclass
class GewekeProblem:
    """A tiny 1-D problem; the default prior keeps acceptance rates sane."""

    n: int = 10
    k_trunc: int = 2
    constraint: object = field(default_factory=lambda: Interval(0.0, math.inf))
    niw: NiwParams = field(default_factory=lambda: NiwParams(np.array([0.0]), 2.0,
                                                             np.array([[1.0]]), 4.0))
    alpha0: float = 1.0

    def __post_init__(self):
        if self.constraint.dim != 1:
            raise ValueError("the Geweke problem is one-dimensional")
        if self.n > 10 or self.k_trunc > 3:
            raise ValueError("the Geweke problem needs n <= 10 and K <= 3")

    def hyperparams(self):
        return Hyperparams(self.niw, alpha0=self.alpha0, k_trunc=self.k_trunc,
                           threshold=math.inf, iters=2, burn_in=0)


STATISTICS = ("pi_1", "mu_1", "mu_2", "log_var_1", "log_var_2", "pi_1_mu_1",
              "x_mean", "x_sq_mean", "x_max", "frac_c1")


def joint_statistics(state, x):
    """Test functions of the joint draw ``(theta, c, X)``."""
    x = x[:, 0]
    v = state.covs[:, 0, 0]
    return np.array([
        state.weights[0],
        state.means[0, 0],
        state.means[1, 0],
        math.log(v[0]),
        math.log(v[1]),
        state.weights[0] * state.means[0, 0],
        x.mean(),
        (x ** 2).mean(),
        x.max(),
        np.mean(state.assignments == 0),
    ])


def _simulator(sampler):
    return simulate_tmog if sampler == "tmog" else simulate_motg


def _sweep(sampler):
    if callable(sampler):
        return sampler
    if sampler == "tmog":
        from .tmog import tmog_sweep
        return tmog_sweep
    if sampler == "motg":
        from .motg import motg_sweep
        return motg_sweep
    raise ValueError("sampler must be 'tmog', 'motg' or a sweep function")


def _prior_draw(rng, problem, hp, simulate):
    placeholder = np.zeros((1, 1))
    state = initial_state(rng, placeholder, hp)
    x, c = simulate(rng, state, problem.constraint, problem.n)
    state.assignments = c
    return state, x


def marginal_conditional(rng, problem, n_draws, model="tmog"):
    """(n_draws, n_stat) statistics of independent prior-predictive draws."""
    hp = problem.hyperparams()
    simulate = _simulator(model)
    out = np.empty((n_draws, len(STATISTICS)))
    for j in range(n_draws):
        state, x = _prior_draw(rng, problem, hp, simulate)
        out[j] = joint_statistics(state, x)
    return out


def successive_conditional(rng, problem, n_draws, sampler="tmog", model=None,
                           gibbs_steps=1):
    """(n_draws, n_stat) statistics of the Gibbs/re-simulation chain.

    ``gibbs_steps = 0`` restarts from the prior at every draw, which is the
    marginal-conditional simulator.
    """
    hp = problem.hyperparams()
    model = model or (sampler if isinstance(sampler, str) else "tmog")
    simulate = _simulator(model)
    sweep = _sweep(sampler)
    out = np.empty((n_draws, len(STATISTICS)))
    state, x = _prior_draw(rng, problem, hp, simulate)
    for j in range(n_draws):
        if gibbs_steps == 0:
            state, x = _prior_draw(rng, problem, hp, simulate)
        else:
            data = Dataset(x, problem.constraint)
            for _ in range(gibbs_steps):
                state, _ = sweep(rng, state, data, hp, iteration=j)
            x, c = simulate(rng, state, problem.constraint, problem.n)
            state.assignments = c
        out[j] = joint_statistics(state, x)
    return out


def batch_means_variance(values, n_batches=50):
    """Variance of the mean of a correlated series by batch means."""
    values = np.asarray(values, dtype=float)
    size = len(values) // n_batches
    if size < 1:
        raise ValueError("series too short for %d batches" % n_batches)
    means = values[:size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
    return means.var(axis=0, ddof=1) / n_batches


def geweke_joint_test(rng, problem=None, sampler="tmog", n_draws=10000, gibbs_steps=1,
                      model=None, n_batches=50):
    """z-scores comparing the two simulators, keyed by statistic name."""
    problem = problem or GewekeProblem()
    model = model or (sampler if isinstance(sampler, str) else "tmog")
    mc = marginal_conditional(rng, problem, n_draws, model)
    sc = successive_conditional(rng, problem, n_draws, sampler, model, gibbs_steps)
    var = mc.var(axis=0, ddof=1) / len(mc) + batch_means_variance(sc, n_batches)
    z = (mc.mean(axis=0) - sc.mean(axis=0)) / np.sqrt(var)
    return dict(zip(STATISTICS, z.tolist()))

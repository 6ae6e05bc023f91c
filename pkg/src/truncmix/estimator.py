"""Scikit-learn style density estimator on a constrained domain."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from . import evaluation
from .chain import run_chain
from .constraints import ConstraintSet, FullSpace, constraint_from_dict
from .kernels import NiwParams
from .mixture import Dataset, Hyperparams, simulate_motg, simulate_tmog


def default_niw(constraint, X, mu0=None, lam=0.1, phi_scale=0.001, nu=None):
    """NIW prior centred on the constraint's bounding box (or the data mean
    for an unbounded set) with ``Phi = phi_scale * I`` and ``nu = d + 2``.
    """
    d = constraint.dim
    if mu0 is None:
        try:
            lo, hi = constraint.bounding_box()
            mu0 = 0.5 * (lo + hi) if np.all(np.isfinite(lo) & np.isfinite(hi)) else None
        except NotImplementedError:
            mu0 = None
        if mu0 is None:
            mu0 = np.asarray(X, dtype=float).mean(axis=0)
    nu = d + 2.0 if nu is None else nu
    return NiwParams(np.broadcast_to(np.asarray(mu0, dtype=float), (d,)).copy(),
                     float(lam), float(phi_scale) * np.eye(d), float(nu))


class ConstrainedMixtureDensity(BaseEstimator):
    """Bayesian nonparametric Gaussian mixture density restricted to a set.

    The fitted density is the posterior mean of the constrained mixture
    densities, estimated by Gibbs sampling with imputed rejected proposals.

    Parameters
    ----------
    constraint : ConstraintSet or dict, optional
        The support.  ``None`` means all of R^d.
    model : {'tmog', 'motg'}
        Truncate the whole mixture, or each component separately.
    threshold : float
        Rejection budget per observation; ``inf`` imputes exactly and ``0``
        ignores the constraint while fitting.
    threshold_variant : str
        ``capped_run``, ``geometric_count`` or ``fixed_average``.
    n_components : int
        Truncation level of the stick-breaking prior.
    alpha0 : float
        Concentration parameter.
    prior_mean, prior_lambda, prior_phi_scale, prior_dof
        NIW hyperparameters; ``prior_mean=None`` centres the prior on the
        constraint's bounding box and ``prior_dof=None`` uses ``d + 2``.
    weight_prior : {'stick_breaking', 'dirichlet'}
    assignment_mode : {'conditional', 'crp'}
    n_iter, burn_in, thin : int
        Sweeps, discarded sweeps and thinning of the kept draws.
    m_norm : int
        Monte Carlo draws per normalizer when scoring.
    random_state : int or None
    """

    def __init__(self, constraint=None, model="tmog", threshold=1.0,
                 threshold_variant="capped_run", n_components=50, alpha0=1.0,
                 prior_mean=None, prior_lambda=0.1, prior_phi_scale=0.001,
                 prior_dof=None, weight_prior="stick_breaking",
                 assignment_mode="conditional", n_iter=5000, burn_in=2000, thin=1,
                 m_norm=evaluation.DEFAULT_M_NORM, random_state=0):
        self.constraint = constraint
        self.model = model
        self.threshold = threshold
        self.threshold_variant = threshold_variant
        self.n_components = n_components
        self.alpha0 = alpha0
        self.prior_mean = prior_mean
        self.prior_lambda = prior_lambda
        self.prior_phi_scale = prior_phi_scale
        self.prior_dof = prior_dof
        self.weight_prior = weight_prior
        self.assignment_mode = assignment_mode
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.m_norm = m_norm
        self.random_state = random_state

    def _constraint(self, d):
        c = self.constraint
        if c is None:
            return FullSpace(d)
        if isinstance(c, dict):
            c = constraint_from_dict(c, d)
        if not isinstance(c, ConstraintSet) or c.dim != d:
            raise ValueError("constraint must be a %d-dimensional ConstraintSet" % d)
        return c

    def _seed(self):
        if self.random_state is None or isinstance(self.random_state, (int, np.integer)):
            return self.random_state
        return int(check_random_state(self.random_state).randint(2 ** 31 - 1))

    def fit(self, X, y=None):
        """Run the sampler on ``X`` (n_samples, n_features); ``y`` is ignored."""
        X = check_array(X, ensure_min_samples=1)
        self.constraint_ = self._constraint(X.shape[1])
        data = Dataset(X, self.constraint_)
        seed = self._seed()
        self.hyperparams_ = Hyperparams(
            default_niw(self.constraint_, X, self.prior_mean, self.prior_lambda,
                        self.prior_phi_scale, self.prior_dof),
            alpha0=self.alpha0, k_trunc=self.n_components,
            threshold=float(self.threshold), threshold_variant=self.threshold_variant,
            iters=self.n_iter, burn_in=self.burn_in,
            seed=0 if seed is None else seed, weight_prior=self.weight_prior,
            assignment_mode=self.assignment_mode)
        rng = np.random.default_rng(seed)
        self.samples_ = run_chain(data, self.hyperparams_, self.model, rng, thin=self.thin)
        self.trace_ = self.samples_.traces
        self.n_features_in_ = X.shape[1]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "samples_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError("X has %d features, expected %d"
                             % (X.shape[1], self.n_features_in_))
        return X

    def score_samples(self, X):
        """Log posterior-mean density of each row; ``-inf`` outside the set."""
        X = self._check_X(X)
        return evaluation.predictive_logdensity(self.samples_, X, self.constraint_,
                                                self.model, self.m_norm,
                                                self.hyperparams_.seed)

    def score(self, X, y=None):
        """Total log-likelihood of ``X``."""
        return float(np.sum(self.score_samples(X)))

    def q_mass(self):
        """Per-draw Monte Carlo estimates of the proposal mass on the set."""
        check_is_fitted(self, "samples_")
        store, seed = self.samples_, self.hyperparams_.seed
        out = np.empty(len(store))
        for s in range(len(store)):
            z = evaluation.sample_normalizer(store, s, self.constraint_, self.m_norm,
                                             seed, self.model)
            out[s] = z if self.model == "tmog" else float(np.dot(store.weights[s], z))
        return out

    def sample(self, n_samples=1, random_state=None):
        """Draw from the posterior predictive: a stored draw, then the model."""
        check_is_fitted(self, "samples_")
        rng = np.random.default_rng(random_state)
        which = rng.integers(len(self.samples_), size=n_samples)
        sim = simulate_tmog if self.model == "tmog" else simulate_motg
        out = np.empty((n_samples, self.n_features_in_))
        for s in np.unique(which):
            idx = np.flatnonzero(which == s)
            out[idx], _ = sim(rng, self.samples_.state(s), self.constraint_, len(idx))
        return out


__all__ = ["ConstrainedMixtureDensity", "default_niw"]

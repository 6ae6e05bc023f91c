"""Probability kernels: Gaussians, Normal-Inverse-Wishart, Dirichlet, sticks.

All densities are computed in log space.  Covariances are handled through
their lower Cholesky factors; no covariance matrix is ever inverted
explicitly.  Batched variants operate on stacks of ``K`` components.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, multigammaln

_LOG_2PI = np.log(2.0 * np.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorisation failed."""


@dataclass(frozen=True)
class NiwParams:
    """Normal-Inverse-Wishart hyperparameters ``(mu0, lambda, Phi, nu)``.

    ``mu | Sigma ~ N(mu0, Sigma / lam)`` and ``Sigma ~ IW(phi, nu)``.
    """

    mu0: np.ndarray
    lam: float
    phi: np.ndarray
    nu: float

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        d = len(mu0)
        if mu0.ndim != 1 or phi.shape != (d, d):
            raise ValueError("mu0 must be a d-vector and phi a d x d matrix")
        if not self.lam > 0:
            raise ValueError("lam must be positive, got %r" % self.lam)
        if not self.nu > d - 1:
            raise ValueError("nu must exceed d - 1 = %d, got %r" % (d - 1, self.nu))
        if not np.allclose(phi, phi.T):
            raise ValueError("phi must be symmetric")
        cholesky(phi)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self):
        return len(self.mu0)

    @classmethod
    def from_normal_inverse_gamma(cls, mu0, var_scale, a, b):
        """The 1-D prior ``mu ~ N(mu0, sigma2 * var_scale)``,
        ``sigma2 ~ InvGamma(a, b)`` as an NIW with d = 1.

        ``InvGamma(a, b)`` is ``IW(2b, 2a)`` in one dimension, and a mean
        variance of ``sigma2 * var_scale`` is a precision scale of
        ``1 / var_scale``.
        """
        return cls(mu0=[mu0], lam=1.0 / var_scale, phi=[[2.0 * b]], nu=2.0 * a)


@dataclass(frozen=True)
class ComponentParams:
    """A Gaussian component with mean ``mu`` and covariance ``sigma``."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.atleast_1d(np.asarray(self.mu, dtype=float)))
        object.__setattr__(self, "sigma", np.atleast_2d(np.asarray(self.sigma, dtype=float)))

    @property
    def chol(self):
        return cholesky(self.sigma)


def cholesky(a, jitter_retry=False):
    """Lower Cholesky factor of ``a`` (or a stack of matrices).

    With ``jitter_retry`` a failed factorisation is retried once after adding
    ``1e-10 * trace(a) / d`` to the diagonal.
    """
    a = np.asarray(a, dtype=float)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        if not jitter_retry:
            raise NotPositiveDefiniteError("matrix is not positive definite")
    d = a.shape[-1]
    tr = np.trace(a, axis1=-2, axis2=-1)
    jitter = (1e-10 * np.abs(tr) / d)[..., None, None] * np.eye(d)
    try:
        return np.linalg.cholesky(a + jitter)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            "matrix is not positive definite even after jitter")


def tri_solve(L, b):
    """Solve ``L z = b`` by forward substitution.

    Parameters
    ----------
    L : ndarray of shape (K, d, d)
        Lower-triangular factors.
    b : ndarray of shape (K, n, d)
        Right-hand sides, one per row.

    Returns
    -------
    z : ndarray of shape (K, n, d)
    """
    d = L.shape[-1]
    z = np.empty(np.broadcast_shapes(b.shape, L.shape[:-2] + (1, d)))
    for j in range(d):
        acc = b[..., j]
        if j:
            acc = acc - np.einsum("...l,...nl->...n", L[..., j, :j], z[..., :j])
        z[..., j] = acc / L[..., j, j][..., None]
    return z


def mvn_logpdf_chol(x, mu, chol):
    """Log-density of ``x`` under every component of a stack.

    Parameters
    ----------
    x : ndarray of shape (n, d)
    mu : ndarray of shape (K, d)
    chol : ndarray of shape (K, d, d)

    Returns
    -------
    logpdf : ndarray of shape (n, K)
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    diff = x[None, :, :] - mu[:, None, :]
    z = tri_solve(chol, diff)
    half_logdet = np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)
    out = -0.5 * np.einsum("knd,knd->kn", z, z) - half_logdet[:, None] - 0.5 * d * _LOG_2PI
    return out.T


def mvn_logpdf(x, c):
    """Log-density of a multivariate normal ``c`` at ``x``.

    ``x`` may be a single d-vector (returns a float) or an (n, d) array.
    Raises :class:`NotPositiveDefiniteError` for a non-PD covariance.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    pts = x.reshape(1, -1) if single else x
    if pts.shape[1] != len(c.mu):
        raise ValueError("dimension mismatch between x and the component")
    out = mvn_logpdf_chol(pts, c.mu[None], cholesky(c.sigma)[None])[:, 0]
    return float(out[0]) if single else out


def sample_mvn(rng, c, size=None):
    """Draw ``mu + L z`` with ``L`` the lower Cholesky factor of ``sigma``."""
    L = cholesky(c.sigma)
    d = len(c.mu)
    if size is None:
        return c.mu + L @ rng.standard_normal(d)
    z = rng.standard_normal((size, d))
    return c.mu + z @ L.T


def _bartlett_inverse_factor(rng, nu, d):
    """Stack of ``A^{-T}`` for Bartlett factors ``A`` with degrees ``nu``."""
    K = len(nu)
    A = np.zeros((K, d, d))
    idx = np.arange(d)
    A[:, idx, idx] = np.sqrt(rng.chisquare(nu[:, None] - idx[None, :]))
    rows, cols = np.tril_indices(d, k=-1)
    if len(rows):
        A[:, rows, cols] = rng.standard_normal((K, len(rows)))
    eye = np.broadcast_to(np.eye(d), (K, d, d))
    # rows of tri_solve's rhs are right-hand sides, so this yields A^{-1} transposed
    return tri_solve(A, eye)


def sample_niw_batch(rng, mu0, lam, phi_chol, nu):
    """Draw one ``(mu, Sigma)`` per row of a stack of NIW parameters.

    ``Sigma^{-1} ~ Wishart(Phi^{-1}, nu)`` through the Bartlett
    decomposition, so ``Sigma = (L_Phi A^{-T})(L_Phi A^{-T})^T``.

    Returns
    -------
    mu : ndarray of shape (K, d)
    sigma : ndarray of shape (K, d, d)
    chol : ndarray of shape (K, d, d)
        Lower Cholesky factors of ``sigma``.
    """
    K, d = mu0.shape
    a_inv_t = _bartlett_inverse_factor(rng, np.asarray(nu, dtype=float), d)
    m = phi_chol @ a_inv_t
    sigma = m @ np.swapaxes(m, -1, -2)
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    chol = cholesky(sigma, jitter_retry=True)
    z = rng.standard_normal((K, d))
    mu = mu0 + np.einsum("kij,kj->ki", chol, z) / np.sqrt(lam)[:, None]
    return mu, sigma, chol


def sample_niw(rng, p, size=None):
    """Draw ``ComponentParams`` from ``NIW(p)``; a list when ``size`` is set."""
    K = 1 if size is None else int(size)
    mu, sigma, _ = sample_niw_batch(
        rng, np.tile(p.mu0, (K, 1)), np.full(K, p.lam),
        np.tile(cholesky(p.phi), (K, 1, 1)), np.full(K, p.nu))
    comps = [ComponentParams(mu[k], sigma[k]) for k in range(K)]
    return comps[0] if size is None else comps


def niw_posterior(p, data):
    """Conjugate NIW update of ``p`` with the rows of ``data``.

    Empty data returns ``p`` itself.
    """
    x = np.asarray(data, dtype=float)
    if x.size == 0:
        return p
    x = x.reshape(-1, p.dim)
    n = len(x)
    xbar = x.mean(axis=0)
    centred = x - xbar
    scatter = centred.T @ centred
    lam_n = p.lam + n
    dev = xbar - p.mu0
    return NiwParams(
        mu0=(p.lam * p.mu0 + n * xbar) / lam_n,
        lam=lam_n,
        phi=p.phi + scatter + (p.lam * n / lam_n) * np.outer(dev, dev),
        nu=p.nu + n)


def niw_posterior_stats(p, counts, means, scatters):
    """Batched conjugate update from per-group sufficient statistics.

    ``scatters`` are centred (around each group mean).  Groups with zero count
    get the prior back unchanged.
    """
    counts = np.asarray(counts, dtype=float)
    lam_n = p.lam + counts
    nu_n = p.nu + counts
    mu_n = (p.lam * p.mu0 + counts[:, None] * means) / lam_n[:, None]
    dev = means - p.mu0
    shrink = (p.lam * counts / lam_n)[:, None, None]
    phi_n = p.phi + scatters + shrink * dev[:, :, None] * dev[:, None, :]
    return mu_n, lam_n, phi_n, nu_n


def grouped_stats(x, labels, K):
    """Counts, means and centred scatter matrices of ``x`` grouped by label.

    Two-pass (mean first, then centred products) for accuracy.
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[1]
    counts = np.bincount(labels, minlength=K).astype(float)
    sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=K)
                     for j in range(d)], axis=1) if len(x) else np.zeros((K, d))
    safe = np.where(counts > 0, counts, 1.0)
    means = sums / safe[:, None]
    scat = np.zeros((K, d, d))
    if len(x):
        c = x - means[labels]
        for i in range(d):
            for j in range(i + 1):
                s = np.bincount(labels, weights=c[:, i] * c[:, j], minlength=K)
                scat[:, i, j] = s
                scat[:, j, i] = s
    return counts, means, scat


def niw_logpdf(mu, sigma, p):
    """Log-density of a stack of ``(mu, Sigma)`` pairs under ``NIW(p)``."""
    mu = np.atleast_2d(mu)
    sigma = np.asarray(sigma, dtype=float).reshape(-1, p.dim, p.dim)
    d = p.dim
    L = cholesky(sigma)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
    phi_chol = cholesky(p.phi)
    logdet_phi = 2.0 * np.log(np.diag(phi_chol)).sum()
    # tr(Phi Sigma^{-1}) = ||L^{-1} L_Phi||_F^2
    w = tri_solve(L, np.broadcast_to(phi_chol.T, L.shape))
    trace = (w ** 2).sum(axis=(-1, -2))
    log_iw = (0.5 * p.nu * logdet_phi - 0.5 * p.nu * d * np.log(2.0)
              - multigammaln(0.5 * p.nu, d)
              - 0.5 * (p.nu + d + 1) * logdet - 0.5 * trace)
    z = tri_solve(L, ((mu - p.mu0) * np.sqrt(p.lam))[:, None, :])[:, 0, :]
    log_mean = (-0.5 * (z ** 2).sum(-1) - 0.5 * logdet + 0.5 * d * np.log(p.lam)
                - 0.5 * d * _LOG_2PI)
    return log_iw + log_mean


def sample_dirichlet(rng, alphas):
    """Normalised gamma draws; raises for nonpositive concentrations."""
    alphas = np.asarray(alphas, dtype=float)
    if np.any(~(alphas > 0)):
        raise ValueError("Dirichlet concentrations must be positive")
    g = rng.standard_gamma(alphas)
    total = g.sum()
    if total == 0.0:
        # every gamma draw underflowed; fall back to the largest concentration
        g = (alphas == alphas.max()).astype(float)
        total = g.sum()
    return g / total


def dirichlet_logpdf(weights, alphas):
    alphas = np.asarray(alphas, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    terms = np.where(alphas == 1.0, 0.0, (alphas - 1.0) * logw)
    return gammaln(alphas.sum()) - gammaln(alphas).sum() + terms.sum()


def stick_breaking_posterior(rng, counts, alpha0):
    """Truncated stick-breaking weights given per-component counts.

    ``v_k ~ Beta(1 + counts[k], alpha0 + sum_{j>k} counts[j])`` for k < K and
    ``v_K = 1``.  Each Beta is drawn as a gamma ratio so that both ``v`` and
    ``1 - v`` keep full relative precision.
    """
    counts = np.asarray(counts, dtype=float)
    K = len(counts)
    if K == 1:
        return np.ones(1)
    tail = np.cumsum(counts[::-1])[::-1]
    a = 1.0 + counts[:-1]
    b = alpha0 + tail[1:]
    g1 = rng.standard_gamma(a)
    g2 = rng.standard_gamma(b)
    with np.errstate(divide="ignore"):
        log_tot = np.log(g1 + g2)
        log_v = np.log(g1) - log_tot
        log_1mv = np.log(g2) - log_tot
    log_rem = np.concatenate([[0.0], np.cumsum(log_1mv)])
    logw = np.concatenate([log_v, [0.0]]) + log_rem
    w = np.exp(logw)
    return w / w.sum()


def stick_breaking_logpdf(weights, alpha0):
    """Log-density of truncated stick-breaking weights under Beta(1, alpha0)."""
    w = np.asarray(weights, dtype=float)
    K = len(w)
    if K == 1:
        return 0.0
    rem = np.cumsum(w[::-1])[::-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_1mv = np.log(rem[1:]) - np.log(rem[:-1])
        log_rem = np.log(rem[:-1])
    val = K - 1
    out = val * np.log(alpha0) + (alpha0 - 1.0) * log_1mv.sum() - log_rem.sum()
    return float(out) if np.isfinite(out) else -np.inf


def sample_geometric_failures(rng, rho, size=None):
    """Failures before the first success, ``P(R = r) = (1 - rho)^r rho``."""
    if not (0.0 < rho <= 1.0):
        raise ValueError("rho must lie in (0, 1], got %r" % rho)
    return rng.geometric(rho, size=size) - 1


def sample_categorical(rng, logits):
    """One categorical draw per row of ``logits`` (n, K), via inverse CDF."""
    logits = np.asarray(logits, dtype=float)
    m = logits.max(axis=1, keepdims=True)
    p = np.exp(logits - m)
    cum = np.cumsum(p, axis=1)
    u = rng.random(len(logits)) * cum[:, -1]
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, logits.shape[1] - 1)


def categorical_from_weights(rng, weights, size):
    """``size`` i.i.d. labels from a weight vector."""
    cum = np.cumsum(weights)
    u = rng.random(size) * cum[-1]
    return np.minimum(np.searchsorted(cum, u, side="right"), len(weights) - 1)

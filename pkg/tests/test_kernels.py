import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from truncmix import kernels
from truncmix.kernels import ComponentParams, NiwParams


def random_spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T + d * np.eye(d)


# ---------------------------------------------------------------- Gaussians

def test_mvn_logpdf_closed_forms():
    c2 = ComponentParams(np.zeros(2), np.eye(2))
    assert kernels.mvn_logpdf(np.zeros(2), c2) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)
    c1 = ComponentParams([0.0], [[1.0]])
    assert kernels.mvn_logpdf([1.0], c1) == pytest.approx(-0.5 - 0.5 * np.log(2 * np.pi),
                                                          abs=1e-12)


def test_mvn_logpdf_dense_inverse_oracle():
    rng = np.random.default_rng(0)
    sigma = random_spd(rng, 3)
    mu = rng.normal(size=3)
    x = rng.normal(size=(20, 3))
    diff = x - mu
    quad = np.einsum("ni,ij,nj->n", diff, np.linalg.inv(sigma), diff)
    want = -0.5 * quad - 0.5 * np.linalg.slogdet(sigma)[1] - 1.5 * np.log(2 * np.pi)
    got = kernels.mvn_logpdf(x, ComponentParams(mu, sigma))
    assert np.allclose(got, want, atol=1e-12, rtol=0)


def test_mvn_logpdf_not_pd():
    with pytest.raises(np.linalg.LinAlgError):
        kernels.mvn_logpdf([0.0, 0.0], ComponentParams([0, 0], [[1, 2], [2, 1]]))


@pytest.mark.parametrize("d", [1, 2])
def test_mvn_density_integrates_to_one(d):
    sigma = np.array([[1.0, 0.6], [0.6, 2.0]])[:d, :d]
    mu = np.array([0.3, -1.0])[:d]
    sd = np.sqrt(np.diag(sigma))
    n = 2001 if d == 1 else 601
    axes = [np.linspace(mu[j] - 6 * sd[j], mu[j] + 6 * sd[j], n) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    dens = np.exp(kernels.mvn_logpdf(pts, ComponentParams(mu, sigma))).reshape(mesh[0].shape)
    total = dens
    for j in reversed(range(d)):
        total = np.trapezoid(total, axes[j], axis=j)
    assert abs(total - 1) < 1e-4


def test_sample_mvn_moments():
    rng = np.random.default_rng(1)
    x = kernels.sample_mvn(rng, ComponentParams(np.zeros(2), np.eye(2)), size=100000)
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)
    x = kernels.sample_mvn(rng, ComponentParams(np.zeros(2), np.diag([4.0, 1.0])), size=100000)
    assert np.allclose(x.var(axis=0), [4, 1], rtol=0.05)
    sigma = random_spd(rng, 3)
    x = kernels.sample_mvn(rng, ComponentParams(np.ones(3), sigma), size=100000)
    emp = np.cov(x.T)
    assert np.linalg.norm(emp - sigma) / np.linalg.norm(sigma) < 0.05


# ---------------------------------------------------------------- NIW

def test_sample_niw_moments():
    rng = np.random.default_rng(2)
    phi = np.array([[2.0, 0.5], [0.5, 1.0]])
    p = NiwParams([1.0, -2.0], 1.0, phi, 6.0)
    mu, sigma, chol = kernels.sample_niw_batch(
        rng, np.tile(p.mu0, (100000, 1)), np.full(100000, p.lam),
        np.tile(kernels.cholesky(phi), (100000, 1, 1)), np.full(100000, p.nu))
    want = phi / (p.nu - 2 - 1)
    assert np.linalg.norm(sigma.mean(axis=0) - want) / np.linalg.norm(want) < 0.05
    assert np.all(np.abs(mu.mean(axis=0) - p.mu0) < 0.02)
    assert np.allclose(chol @ np.swapaxes(chol, -1, -2), sigma)


def test_sample_niw_lambda_limit():
    rng = np.random.default_rng(3)
    wide = np.array([c.mu for c in kernels.sample_niw(rng, NiwParams([0.0], 1.0, [[1.0]], 5.0), 4000)])
    tight = np.array([c.mu for c in kernels.sample_niw(rng, NiwParams([0.0], 1e6, [[1.0]], 5.0), 4000)])
    assert tight.std() < 1e-2 * wide.std()


def test_niw_params_validation():
    with pytest.raises(ValueError):
        NiwParams([0.0], 0.0, [[1.0]], 3.0)
    with pytest.raises(ValueError):
        NiwParams([0.0, 0.0], 1.0, np.eye(2), 0.5)
    with pytest.raises(np.linalg.LinAlgError):
        NiwParams([0.0, 0.0], 1.0, [[1, 2], [2, 1]], 3.0)


def test_niw_posterior_empty_and_hand_example():
    p = NiwParams([0.0], 1.0, [[1.0]], 3.0)
    assert kernels.niw_posterior(p, np.zeros((0, 1))) is p
    q = kernels.niw_posterior(p, [[2.0]])
    assert q.mu0[0] == pytest.approx(1.0)
    assert q.lam == 2.0 and q.nu == 4.0
    assert q.phi[0, 0] == pytest.approx(3.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 30), st.integers(0, 30), st.integers(0, 2 ** 31 - 1))
def test_niw_posterior_batch_consistency(d, na, nb, seed):
    rng = np.random.default_rng(seed)
    p = NiwParams(rng.normal(size=d), 0.7, random_spd(rng, d), d + 1.5)
    a = rng.normal(size=(na, d))
    b = rng.normal(size=(nb, d)) * 3
    seq = kernels.niw_posterior(kernels.niw_posterior(p, a), b)
    joint = kernels.niw_posterior(p, np.vstack([a, b]))
    assert np.allclose(seq.mu0, joint.mu0, atol=1e-10)
    assert np.allclose(seq.phi, joint.phi, atol=1e-10 * max(1, np.abs(joint.phi).max()))
    assert seq.lam == pytest.approx(joint.lam) and seq.nu == pytest.approx(joint.nu)


def test_batched_stats_match_single_update():
    rng = np.random.default_rng(4)
    p = NiwParams([0.5, 0.5], 0.1, 0.001 * np.eye(2), 4.0)
    x = rng.normal(size=(60, 2))
    labels = rng.integers(0, 4, size=60)
    labels[labels == 3] = 0  # component 3 stays empty
    counts, means, scat = kernels.grouped_stats(x, labels, 4)
    mu_n, lam_n, phi_n, nu_n = kernels.niw_posterior_stats(p, counts, means, scat)
    for k in range(4):
        q = kernels.niw_posterior(p, x[labels == k])
        assert np.allclose(mu_n[k], q.mu0) and np.allclose(phi_n[k], q.phi)
        assert lam_n[k] == pytest.approx(q.lam) and nu_n[k] == pytest.approx(q.nu)


def _grid_posterior_1d(p, data, mu_axis, var_axis):
    """Unnormalised prior x likelihood on a (mu, sigma^2) grid."""
    M, V = np.meshgrid(mu_axis, var_axis, indexing="ij")
    log_prior = (stats.invgamma.logpdf(V, a=p.nu / 2, scale=p.phi[0, 0] / 2)
                 + stats.norm.logpdf(M, p.mu0[0], np.sqrt(V / p.lam)))
    loglik = sum(stats.norm.logpdf(x, M, np.sqrt(V)) for x in data)
    return log_prior + loglik


def test_niw_posterior_matches_grid_quadrature():
    p = NiwParams([0.0], 0.5, [[0.1]], 4.0)
    data = np.random.default_rng(5).normal(0.2, 0.3, size=15)
    q = kernels.niw_posterior(p, data.reshape(-1, 1))
    mu_axis = np.linspace(-0.4, 0.8, 200)
    var_axis = np.linspace(0.005, 0.6, 200)
    M, V = np.meshgrid(mu_axis, var_axis, indexing="ij")
    analytic = kernels.niw_logpdf(M.reshape(-1, 1), V.reshape(-1, 1, 1), q).reshape(M.shape)
    unnorm = _grid_posterior_1d(p, data, mu_axis, var_axis)
    # exact proportionality: prior x likelihood / posterior is constant
    ratio = unnorm - analytic
    assert np.ptp(ratio) < 1e-9
    # normalised by quadrature the grid posterior equals the analytic density
    dens = np.exp(unnorm)
    z = np.trapezoid(np.trapezoid(dens, var_axis, axis=1), mu_axis)
    rel = np.abs(dens / z - np.exp(analytic)) / np.exp(analytic).max()
    assert rel.max() < 1e-3


def test_niw_logpdf_matches_scipy():
    rng = np.random.default_rng(6)
    p = NiwParams([0.1, 0.2], 2.0, random_spd(rng, 2), 5.0)
    comps = kernels.sample_niw(rng, p, 5)
    for c in comps:
        want = (stats.invwishart.logpdf(c.sigma, df=p.nu, scale=p.phi)
                + stats.multivariate_normal.logpdf(c.mu, p.mu0, c.sigma / p.lam))
        assert kernels.niw_logpdf(c.mu, c.sigma, p)[0] == pytest.approx(want, abs=1e-9)


def test_normal_inverse_gamma_correspondence():
    # mu ~ N(0, 2 sigma^2), sigma^2 ~ InvGamma(2, 0.05)
    p = NiwParams.from_normal_inverse_gamma(0.0, 2.0, 2.0, 0.05)
    assert p.lam == 0.5 and p.phi[0, 0] == pytest.approx(0.1) and p.nu == 4.0
    data = np.random.default_rng(7).normal(0.1, 0.2, size=(40, 1))
    q = kernels.niw_posterior(p, data)
    # textbook NIG update in (mu0, kappa = 1 / var_scale, a, b) form
    n, xbar = len(data), data.mean()
    kappa = 0.5
    kn = kappa + n
    an = 2.0 + n / 2
    bn = 0.05 + 0.5 * ((data - xbar) ** 2).sum() + kappa * n * xbar ** 2 / (2 * kn)
    assert q.mu0[0] == pytest.approx(n * xbar / kn)
    assert q.nu == pytest.approx(2 * an) and q.phi[0, 0] == pytest.approx(2 * bn)
    # posterior draws reproduce the NIG posterior moments
    comps = kernels.sample_niw(np.random.default_rng(8), q, 50000)
    var = np.array([c.sigma[0, 0] for c in comps])
    assert var.mean() == pytest.approx(bn / (an - 1), rel=0.02)


# ---------------------------------------------------------------- weights

def test_dirichlet_means():
    rng = np.random.default_rng(9)
    w = np.array([kernels.sample_dirichlet(rng, [1, 1]) for _ in range(100000)])
    assert abs(w[:, 0].mean() - 0.5) < 0.01
    w = np.array([kernels.sample_dirichlet(rng, [2, 1, 1]) for _ in range(100000)])
    assert np.allclose(w.mean(axis=0), [0.5, 0.25, 0.25], atol=0.01)
    w = np.array([kernels.sample_dirichlet(rng, [1e6, 1]) for _ in range(1000)])
    assert np.mean(w[:, 0] > 0.999) > 0.99
    with pytest.raises(ValueError):
        kernels.sample_dirichlet(rng, [1, 0])


def test_stick_breaking_prior_and_concentration():
    rng = np.random.default_rng(10)
    w = np.array([kernels.stick_breaking_posterior(rng, [0, 0], 1.0) for _ in range(100000)])
    assert abs(w[:, 0].mean() - 0.5) < 0.01
    counts = np.zeros(10)
    counts[0] = 100
    w = np.array([kernels.stick_breaking_posterior(rng, counts, 1.0) for _ in range(2000)])
    assert np.mean(w[:, 0] > 0.9) > 0.95


def test_stick_breaking_analytic_mean():
    rng = np.random.default_rng(11)
    counts = np.array([3.0, 1.0, 2.0])
    alpha0 = 1.5
    w = np.array([kernels.stick_breaking_posterior(rng, counts, alpha0) for _ in range(100000)])
    a = 1 + counts[:-1]
    b = alpha0 + np.cumsum(counts[::-1])[::-1][1:]
    ev = a / (a + b)
    want = np.array([ev[0], (1 - ev[0]) * ev[1], (1 - ev[0]) * (1 - ev[1])])
    assert np.allclose(w.mean(axis=0), want, atol=0.01)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=60),
       st.floats(0.01, 100), st.integers(0, 2 ** 31 - 1))
def test_stick_breaking_on_simplex(counts, alpha0, seed):
    w = kernels.stick_breaking_posterior(np.random.default_rng(seed), counts, alpha0)
    assert len(w) == len(counts)
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12


def test_stick_breaking_logpdf_two_components():
    # with K = 2, pi_1 = v_1 ~ Beta(1, alpha0)
    for x in (0.1, 0.5, 0.9):
        got = kernels.stick_breaking_logpdf([x, 1 - x], 2.5)
        assert got == pytest.approx(stats.beta.logpdf(x, 1, 2.5), abs=1e-12)


# ---------------------------------------------------------------- counts

def test_geometric_failures():
    rng = np.random.default_rng(12)
    assert np.all(kernels.sample_geometric_failures(rng, 1.0, size=1000) == 0)
    assert kernels.sample_geometric_failures(rng, 0.5, size=100000).mean() == pytest.approx(1, rel=0.03)
    assert kernels.sample_geometric_failures(rng, 0.1, size=100000).mean() == pytest.approx(9, rel=0.03)
    with pytest.raises(ValueError):
        kernels.sample_geometric_failures(rng, 0.0)


def test_categorical_probabilities():
    rng = np.random.default_rng(13)
    logits = np.log(np.array([[0.2, 0.5, 0.3]]))
    draws = kernels.sample_categorical(rng, np.repeat(logits, 100000, axis=0))
    assert np.allclose(np.bincount(draws, minlength=3) / 1e5, [0.2, 0.5, 0.3], atol=0.01)
    draws = kernels.sample_categorical(rng, np.array([[-np.inf, 0.0, -np.inf]] * 50))
    assert np.all(draws == 1)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from fmfcap import baa, oracle
from fmfcap.channel import ComponentSpec, ConfigError, LinkConfig, channel_ensemble

ONE = ComponentSpec((-np.inf,), (0.0,), 0.0)
# sigma_w = 0.25 at P_tot = 1 mW on a single mode
SINGLE = LinkConfig(n_modes=1, p_tot_dbm=0.0, snr_db=10 * np.log10(2.0), mux=ONE, spl=ONE, demux=ONE)
H1 = np.ones((1, 1, 1))


def test_single_mode_link_sigma():
    assert SINGLE.sigma_w == pytest.approx(0.25)


def test_uniform_grid_examples():
    d = baa.init_uniform_grid(2, [1.0])
    np.testing.assert_allclose(np.sort(d.points[:, 0]), [0.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(d.weights, [0.5, 0.5])
    d = baa.init_uniform_grid(3, [1.0])
    np.testing.assert_allclose(d.points[:, 0], [1.0, 0.5, 0.0], atol=1e-15)
    d = baa.init_uniform_grid(8, [1.2, 0.8])
    assert d.size == 64 and d.n_modes == 2
    assert np.all(d.points >= 0) and np.all(d.points <= np.array([1.2, 0.8]) + 1e-12)
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(d.voltages()[:8, 1], np.arange(8) / 7, atol=1e-7)


def test_uniform_grid_limits():
    with pytest.raises(ConfigError):
        baa.init_uniform_grid(1, [1.0])
    with pytest.raises(ConfigError):
        baa.init_uniform_grid(300, [1.0, 1.0])


def test_distribution_validation():
    with pytest.raises(ValueError):
        baa.DiscreteDistribution(np.zeros((2, 1)), np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        baa.DiscreteDistribution(np.ones((2, 1)) * 2, np.array([0.5, 0.5]), powers=np.array([1.0]))


def test_divergence_trivial_cases():
    d = baa.DiscreteDistribution(np.array([[0.3]]), np.array([1.0]))
    assert baa.kl_divergence_term(0, d, np.eye(1), 0.1) == pytest.approx(0.0, abs=1e-12)
    d = baa.DiscreteDistribution(np.array([[0.0], [0.2]]), np.array([1.0, 0.0]))
    assert baa.kl_divergence_term(0, d, np.eye(1), 0.1) == pytest.approx(0.0, abs=1e-12)


def _divergence_by_integration(c, w, k, sigma):
    def f(y):
        comps = w * norm.pdf(y, c, sigma)
        return norm.pdf(y, c[k], sigma) * (norm.logpdf(y, c[k], sigma) - np.log(comps.sum()))

    val, _ = integrate.quad(f, c[k] - 12 * sigma, c[k] + 12 * sigma, epsabs=1e-13, limit=200)
    return val


def test_divergence_far_apart_is_ln2():
    sigma = 0.05
    c = np.array([0.0, 20 * sigma])
    d = baa.DiscreteDistribution(c[:, None], np.array([0.5, 0.5]))
    for k in range(2):
        ref = _divergence_by_integration(c, d.weights, k, sigma)
        assert abs(ref - np.log(2)) < 1e-6
        assert abs(baa.kl_divergence_term(k, d, np.eye(1), sigma) - np.log(2)) < 1e-6


@given(st.integers(0, 2**31))
def test_divergence_matches_integration(seed):
    rng = np.random.default_rng(seed)
    c = np.sort(rng.uniform(0, 1, 3))
    w = rng.dirichlet(np.ones(3))
    sigma = float(rng.uniform(0.05, 0.4))
    d = baa.DiscreteDistribution(c[:, None], w)
    fine = baa.QuadratureScheme.gauss_hermite(64)
    for k in range(3):
        ref = _divergence_by_integration(c, w, k, sigma)
        got = baa.kl_divergence_term(k, d, np.eye(1), sigma, quad=fine, cutoff=np.inf)
        np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-8)
        # default 16-node rule used by the capacity runs, worst seen about 1.1e-3 nats
        assert abs(baa.kl_divergence_term(k, d, np.eye(1), sigma, cutoff=np.inf) - ref) < 2.5e-3


def test_symmetric_fixed_point():
    d = baa.DiscreteDistribution(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))
    np.testing.assert_allclose(baa.baa_iterate(d, H1, 0.3).weights, [0.5, 0.5], atol=1e-12)


@given(st.integers(0, 2**31))
def test_update_stays_on_simplex(seed):
    rng = np.random.default_rng(seed)
    d = baa.DiscreteDistribution(rng.uniform(0, 1, (5, 1)), rng.dirichlet(np.ones(5)))
    w = baa.baa_iterate(d, H1, float(rng.uniform(0.02, 1))).weights
    assert abs(w.sum() - 1) <= 1e-12 and np.all(w >= 0)


def test_interior_point_loses_weight():
    pts = np.array([[0.0], [0.05], [1.0]])
    d = baa.DiscreteDistribution(pts, np.full(3, 1 / 3))
    mids = [d.weights[1]]
    for _ in range(30):
        d = baa.baa_iterate(d, H1, 0.2)
        mids.append(d.weights[1])
    assert np.all(np.diff(mids) < 0)
    for _ in range(3000):
        d = baa.baa_iterate(d, H1, 0.2)
    # brute force on the simplex
    grid = [(a, b) for a in np.linspace(0, 1, 41) for b in np.linspace(0, 1, 41) if a + b <= 1 - 1e-12]
    best = max(baa.ergodic_mi(d.with_weights(np.array([a, b, 1 - a - b])), H1, 0.2) for a, b in grid)
    assert baa.ergodic_mi(d, H1, 0.2) >= best - 1e-6


def test_mi_trivial_cases():
    d = baa.DiscreteDistribution(np.array([[0.4]]), np.array([1.0]))
    assert baa.ergodic_mi(d, H1, 0.1) == pytest.approx(0.0, abs=1e-12)
    d = baa.DiscreteDistribution(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))
    assert abs(baa.ergodic_mi(d, H1, 0.02) - 1.0) < 1e-4


def test_binary_capacity_against_monte_carlo():
    res = baa.baa_capacity(SINGLE, 2, n_iter_channels=1, n_eval_channels=1)
    mc = oracle.mi_monte_carlo(res.distribution, np.eye(1), SINGLE.sigma_w, 2_000_000, np.random.default_rng(1))
    assert abs(res.mi_bits - mc.value_bits) < 0.01
    assert mc.error_bar < 0.005


def test_binary_capacity_against_simplex_search():
    res = baa.baa_capacity(SINGLE, 2, tol=1e-12, n_iter_channels=1, n_eval_channels=1, engine="quadrature")
    d = res.distribution
    best = max(baa.ergodic_mi(d.with_weights(np.array([a, 1 - a])), H1, SINGLE.sigma_w)
               for a in np.linspace(0, 1, 1001))
    assert abs(res.mi_bits - best) < 1e-4


def test_noise_dominated_mi_is_small():
    res = baa.baa_capacity(LinkConfig(snr_db=-20.0), 4, n_iter_channels=4, n_eval_channels=8)
    assert res.mi_bits < 0.1


def test_mi_grows_with_snr():
    lo = baa.baa_capacity(LinkConfig(snr_db=8.0), 4, n_iter_channels=8, n_eval_channels=16)
    hi = baa.baa_capacity(LinkConfig(snr_db=12.0), 4, n_iter_channels=8, n_eval_channels=16)
    assert hi.mi_bits >= lo.mi_bits


def test_uniform_baseline_is_equidistant_pam():
    link = LinkConfig(snr_db=10.0)
    h = channel_ensemble(link, 16, 3)
    res = baa.baa_capacity(link, 4, h_samples=h, n_iter_channels=8, n_eval_channels=16)
    d0 = baa.init_uniform_grid(4, link.equal_split())
    assert res.uniform_mi_bits == pytest.approx(baa.ergodic_mi(d0, h, link.sigma_w), abs=1e-12)
    assert res.mi_bits >= res.uniform_mi_bits - 1e-9
    assert res.shaping_gain_bits == pytest.approx(res.mi_bits - res.uniform_mi_bits)


@pytest.mark.parametrize("seed", range(4))
def test_iterations_never_decrease_mi(seed):
    rng = np.random.default_rng(seed)
    link = LinkConfig(snr_db=float(rng.uniform(0, 25)))
    d = baa.init_uniform_grid(int(rng.choice([2, 4, 8])), link.equal_split())
    _, trace, _ = baa.run_baa(d, channel_ensemble(link, 8, seed), link.sigma_w, max_iter=200)
    assert np.all(np.diff(trace) >= -1e-12)


def test_mi_bounded_by_entropy_and_relabel_invariant():
    rng = np.random.default_rng(8)
    link = LinkConfig(snr_db=5.0)
    d = baa.init_uniform_grid(4, link.equal_split())
    d = d.with_weights(rng.dirichlet(np.ones(d.size)))
    h = channel_ensemble(link, 4, 0)
    mi = baa.ergodic_mi(d, h, link.sigma_w)
    assert 0 <= mi <= d.entropy_bits()
    perm = rng.permutation(d.size)
    shuffled = baa.DiscreteDistribution(d.points[perm], d.weights[perm])
    assert baa.ergodic_mi(shuffled, h, link.sigma_w) == pytest.approx(mi, abs=1e-10)


def test_symmetric_channel_power_search():
    sym = ComponentSpec((-15.0, -15.0), (1.0, 1.0), 0.0)
    link = LinkConfig(snr_db=12.0, mux=sym, demux=sym, spl=ComponentSpec((-30.0, -30.0), (0.0, 0.0), 0.0))
    res = baa.baa_power_search(link, 4, grid_step_db=0.5, p1_window_dbm=(-2.0, 2.0),
                               n_iter_channels=1, n_eval_channels=1)
    p1 = 10 * np.log10(res.alloc[0])
    assert abs(p1 - 10 * np.log10(link.p_tot / 2)) <= 0.5 + 1e-9
    assert len(res.search) == 9
    assert res.mi_bits == max(v for _, v in res.search)


def test_shaping_gain_of_shifted_curve():
    snr = np.arange(10.0, 25.0)
    shaped = np.log2(1 + 10 ** (snr / 10))
    uniform = np.log2(1 + 10 ** ((snr - 0.5) / 10))
    assert baa.shaping_gain_db(snr, shaped, uniform) == pytest.approx(0.5, abs=0.01)
    with pytest.raises(ValueError):
        baa.shaping_gain_db(snr, shaped + 10, uniform)


def test_engines_agree_roughly():
    link = LinkConfig(snr_db=12.0)
    h = channel_ensemble(link, 4, 0)
    d = baa.init_uniform_grid(4, link.equal_split())
    binned = baa.make_workspace(d.points, h, link.sigma_w, bins_per_sigma=8)
    quad = baa.make_workspace(d.points, h, link.sigma_w, engine="quadrature")
    a = d.weights @ binned.mean_divergence(d.weights) / np.log(2)
    b = d.weights @ quad.mean_divergence(d.weights) / np.log(2)
    # quantising the output can only lose information
    assert a <= b + 1e-9 and b - a < 0.01


@pytest.mark.parametrize("n", [4, 16, 32])
def test_quadrature_integrates_constants_and_moments(n):
    q = baa.QuadratureScheme.gauss_hermite(n)
    assert abs(q.w.sum() - 1) < 1e-12
    g = np.sqrt(2) * q.z  # standard normal nodes
    assert abs(q.w @ g**2 - 1) < 1e-12
    _, wt = q.tensor(2)
    assert abs(wt.sum() - 1) < 1e-12


@pytest.mark.parametrize("snr,m", [(0.0, 8), (15.0, 8), (25.0, 16)])
def test_doubling_nodes_barely_moves_mi(snr, m):
    link = LinkConfig(snr_db=snr)
    h = channel_ensemble(link, 4, 0)
    d = baa.init_uniform_grid(m, link.equal_split())
    d = d.with_weights(np.random.default_rng(1).dirichlet(np.ones(d.size)))
    a = baa.ergodic_mi(d, h, link.sigma_w)
    b = baa.ergodic_mi(d, h, link.sigma_w, quad=baa.QuadratureScheme.gauss_hermite(32))
    assert abs(a - b) < 1e-4

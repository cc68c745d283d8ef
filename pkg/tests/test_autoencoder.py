import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmfcap import autoencoder as ae
from fmfcap import baa, oracle
from fmfcap.channel import ComponentSpec, ConfigError, LinkConfig, channel_ensemble
from fmfcap.nn import MlpModel

IDEAL = ComponentSpec((-np.inf, -np.inf), (0.0, 0.0), 0.0)


def _ideal(snr_db, m=8):
    return LinkConfig(mod_order=m, snr_db=snr_db, mux=IDEAL, spl=IDEAL, demux=IDEAL)


def _constellation(link, powers):
    """Received-free intensity points for uniform symbols under Prec1."""
    m = link.mod_order
    grid = np.stack(np.meshgrid(*([np.arange(m)] * link.n_modes), indexing="ij"), axis=-1).reshape(-1, link.n_modes)
    pts = powers * np.cos(0.5 * np.pi * grid / (m - 1)) ** 2
    return baa.DiscreteDistribution(pts, np.full(len(pts), 1 / len(pts)))


def test_topologies():
    assert ae.topology("Det1", 8) == (1, 64, 64, 8)
    assert ae.topology("Det2", 8) == (2, 128, 128, 64)
    assert ae.topology("Det1", 16) == (1, 256, 256, 16)
    assert ae.topology("Det2", 16) == (2, 512, 512, 256)
    assert ae.topology("Prec3", 16) == (2, 16, 16, 2)
    with pytest.raises(ConfigError):
        ae.topology("Prec1", 8)


def test_config_validation():
    with pytest.raises(ConfigError):
        ae.TrainConfig(precoder_kind="Prec4")
    with pytest.raises(ConfigError):
        ae.TrainConfig(detector_kind="ML")
    with pytest.raises(ConfigError):
        ae.TrainConfig(batch_size=0)
    assert ae.TrainConfig().n_steps == 5000


def test_precode_examples():
    np.testing.assert_allclose(ae.precode("Prec1", None, np.array([[0, 7]]), 8, 2.0), [[0.0, 2.0]])
    x = np.array([[1, 3], [6, 0]])
    np.testing.assert_allclose(ae.precode("Prec2", 2.0 * np.eye(2), x, 8, 2.0), ae.precode("Prec1", None, x, 8, 2.0))
    np.testing.assert_allclose(ae.precode("Prec3", MlpModel.zeros((2, 16, 16, 2)), x, 8), 0.0)
    with pytest.raises(ConfigError):
        ae.precode("Prec1", np.eye(2), x, 8)
    with pytest.raises(ConfigError):
        ae.precode("Prec2", np.eye(3), x, 8)
    with pytest.raises(ConfigError):
        ae.precode("Prec3", np.eye(2), x, 8)
    with pytest.raises(ConfigError):
        ae.precode("Prec9", None, x, 8)


def test_power_allocation_examples():
    np.testing.assert_allclose(ae.power_allocation_forward(np.zeros(2), 2.0), [1.0, 1.0])
    p = ae.power_allocation_forward(np.array([10.0, -10.0]), 2.0)
    assert p[0] == pytest.approx(2.0, rel=1e-8) and p[1] < 1e-8
    assert p.sum() == pytest.approx(2.0)


@given(st.integers(0, 2**31))
def test_power_allocation_gradient(seed):
    rng = np.random.default_rng(seed)
    theta, g = rng.normal(size=2), rng.normal(size=2)
    got = ae.power_allocation_backward(theta, 1.7, g)
    num = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1e-6
        num[i] = (g @ ae.power_allocation_forward(theta + e, 1.7) - g @ ae.power_allocation_forward(theta - e, 1.7)) / 2e-6
    np.testing.assert_allclose(got, num, rtol=1e-6, atol=1e-9)


@given(st.integers(0, 2**31))
def test_unclipped_precoder_still_within_power(seed):
    rng = np.random.default_rng(seed)
    link = LinkConfig()
    models = ae.init_models(link, ae.TrainConfig("Prec3", "Det1", warm_start_steps=0), rng)
    for w in models.net.weights:
        w *= 5
    models.power_logits = rng.normal(size=2)
    s, cache = ae._transmit(models, rng.integers(0, 8, (50, 2)))
    assert np.any(np.abs(cache["v"]) > link.v_pi)
    assert np.all(s >= 0) and np.all(s <= models.powers + 1e-15)


def test_loss_det1_examples():
    v, r = ae.loss_det1(np.array([0.5, 0.7]))
    assert v == 0.7 and list(r) == [0.0, 1.0]
    v, r = ae.loss_det1(np.array([0.4, 0.4]))
    assert list(r) == [1.0, 0.0]
    v, r = ae.loss_det1(np.array([0.3]))
    assert v == 0.3 and list(r) == [1.0]


def test_loss_det2_examples():
    probs = np.eye(64)[[3, 9]]
    assert ae.loss_det2(probs, [3, 9]) == pytest.approx(0.0, abs=1e-15)
    assert ae.loss_det2(np.zeros((2, 64)), [0, 63], from_logits=True) == pytest.approx(np.log(64))
    with pytest.raises(ValueError):
        ae.loss_det2(probs, [64, 0])


def test_joint_label():
    np.testing.assert_array_equal(ae.joint_label(np.array([[0, 0], [1, 2], [7, 7]]), 8), [0, 10, 63])


def test_gaussian_fit_on_diagonal_channel():
    link = _ideal(20.0)
    models = ae.init_models(link, ae.TrainConfig("Prec1", "GaussianAux"), np.random.default_rng(0))
    n = 100_000
    g = ae.fit_gaussian_receiver(models, link, n, np.random.default_rng(1))
    p = link.p_tot / 2
    mu = p * np.cos(0.5 * np.pi * np.arange(8) / 7) ** 2
    tol = 5 * link.sigma_w / np.sqrt(n / 8)
    np.testing.assert_allclose(g.mu, np.stack([mu, mu]), atol=tol)
    np.testing.assert_allclose(g.sigma_hat, link.sigma_w**2, rtol=0.03)
    np.testing.assert_allclose(g.mu[0], g.mu[1], atol=2 * tol)
    np.testing.assert_allclose(g.prior.sum(1), 1.0)


def test_gaussian_fit_errors(monkeypatch):
    link = _ideal(20.0)
    models = ae.init_models(link, ae.TrainConfig("Prec1", "GaussianAux"), np.random.default_rng(0))
    with pytest.raises(ae.FitError):
        ae.fit_gaussian_receiver(models, link, 799, np.random.default_rng(1))
    real = ae._sample

    def one_class(link_, rng, n, m):
        x, h, w = real(link_, rng, n, m)
        return np.zeros_like(x), h, w

    monkeypatch.setattr(ae, "_sample", one_class)
    with pytest.raises(ae.FitError):
        ae.fit_gaussian_receiver(models, link, 1000, np.random.default_rng(1))


def test_gaussian_rate_matches_oracle_on_diagonal_channel():
    link = _ideal(10.0)
    models = ae.init_models(link, ae.TrainConfig("Prec1", "GaussianAux"), np.random.default_rng(0))
    models.gaussian = ae.fit_gaussian_receiver(models, link, 100_000, np.random.default_rng(1))
    rep = ae.evaluate_rate(models, link, 100_000, np.random.default_rng(2))
    p = link.p_tot / 2
    pts = p * np.cos(0.5 * np.pi * np.arange(8) / 7) ** 2
    d = baa.DiscreteDistribution(pts[:, None], np.full(8, 1 / 8))
    ref = oracle.mi_quadrature(d, np.eye(1), link.sigma_w).value_bits
    np.testing.assert_allclose(rep.per_mode_rate, ref, atol=0.02)
    assert rep.reported_rate == pytest.approx(2 * rep.per_mode_rate.min())


def test_uniform_detector_rate_is_zero():
    link = LinkConfig(snr_db=15.0)
    for kind in ("Det1", "Det2"):
        models = ae.init_models(link, ae.TrainConfig("Prec1", kind), np.random.default_rng(0))
        models.detectors = [MlpModel.zeros(d.layer_dims, head="softmax") for d in models.detectors]
        models.y_mean, models.y_scale = np.zeros(2), np.ones(2)
        rep = ae.evaluate_rate(models, link, 5000, np.random.default_rng(1))
        assert rep.reported_rate == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(rep.per_mode_rate, 0.0, atol=1e-9)


def test_noiseless_separable_channel_gives_full_rate():
    link = _ideal(60.0)
    models = ae.init_models(link, ae.TrainConfig("Prec1", "GaussianAux"), np.random.default_rng(0))
    models.gaussian = ae.fit_gaussian_receiver(models, link, 10_000, np.random.default_rng(1))
    rep = ae.evaluate_rate(models, link, 10_000, np.random.default_rng(2))
    assert rep.reported_rate == pytest.approx(6.0, abs=1e-6)


def test_unfitted_gaussian_receiver():
    link = LinkConfig()
    models = ae.init_models(link, ae.TrainConfig("Prec1", "GaussianAux"), np.random.default_rng(0))
    with pytest.raises(ae.FitError):
        ae.evaluate_rate(models, link, 100, np.random.default_rng(1))


def test_clean_pam8_is_learned():
    link = _ideal(30.0)
    # needs the default training length; a fifth of it stops near 2.64 bits
    _, rep, hist = ae.train(link, ae.TrainConfig("Prec1", "Det1", n_test_symbols=20_000))
    np.testing.assert_allclose(rep.per_mode_rate, 3.0, atol=0.05)
    assert hist[-50:].mean() < hist[:50].mean()


def test_rates_do_not_exceed_exact_mi():
    link = LinkConfig(mod_order=4, snr_db=12.0)
    cfg = ae.TrainConfig("Prec1", "Det1", n_train_symbols=40_000, n_test_symbols=50_000, n_fit_symbols=50_000)
    models, rep, _ = ae.train(link, cfg)
    h = channel_ensemble(link, 200, 7)
    exact = oracle.ergodic_mi_quadrature(_constellation(link, models.powers), h, link.sigma_w, nodes=16)
    assert rep.reported_rate <= exact + 0.02
    models.detector_kind = "GaussianAux"
    models.gaussian = ae.fit_gaussian_receiver(models, link, 50_000, np.random.default_rng(3))
    assert ae.evaluate_rate(models, link, 50_000, np.random.default_rng(4)).reported_rate <= exact + 0.02


def test_divergence_aborts_with_snapshot(monkeypatch):
    real = ae.forward_loss
    calls = {"n": 0}

    def flaky(*a, **kw):
        loss, grads, aux = real(*a, **kw)
        calls["n"] += 1
        return (np.nan if calls["n"] == 4 else loss), grads, aux

    monkeypatch.setattr(ae, "forward_loss", flaky)
    with pytest.raises(ae.TrainingDivergedError) as err:
        ae.train(LinkConfig(), ae.TrainConfig("Prec2", "Det1", n_train_symbols=2000))
    assert err.value.snapshot["step"] == 3
    assert all(np.all(np.isfinite(p)) for p in err.value.snapshot["params"])


@pytest.mark.parametrize("prec,det", [("Prec2", "Det1"), ("Prec3", "Det2")])
def test_training_is_deterministic(prec, det):
    cfg = ae.TrainConfig(prec, det, n_train_symbols=4000, n_test_symbols=4000, warm_start_steps=50, seed=5)
    a, ra, ha = ae.train(LinkConfig(), cfg)
    b, rb, hb = ae.train(LinkConfig(), cfg)
    np.testing.assert_array_equal(ha, hb)
    for p, q in zip(a.trainable(), b.trainable()):
        np.testing.assert_array_equal(p, q)
    assert ra.reported_rate == rb.reported_rate


def test_frozen_power_stays_equal():
    models, _, _ = ae.train(LinkConfig(), ae.TrainConfig("Prec2", "Det1", n_train_symbols=4000,
                                                         n_test_symbols=2000, learn_power=False))
    np.testing.assert_array_equal(models.power_logits, [0.0, 0.0])


def test_knowledge_ordering():
    link = LinkConfig(snr_db=20.0)
    means = {}
    for prec in ("Prec1", "Prec2", "Prec3"):
        rates = [ae.train(link, ae.TrainConfig(prec, "GaussianAux", n_train_symbols=200_000, seed=s))[1].reported_rate
                 for s in range(3)]
        means[prec] = np.mean(rates)
    assert means["Prec1"] <= means["Prec2"] + 0.05
    assert means["Prec2"] <= means["Prec3"] + 0.05

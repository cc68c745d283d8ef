import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fmfcap.channel import (
    MEASURED_COMPONENTS,
    ComponentSpec,
    ConfigError,
    LinkConfig,
    apply_channel,
    channel_ensemble,
    compose_channel,
    draw_channels,
    draw_component_matrices,
    expected_channel,
    expected_component_matrix,
    mzm_invert,
    mzm_modulate,
    sigma_to_snr,
    snr_to_sigma,
)

IDEAL = ComponentSpec((-np.inf, -np.inf), (0.0, 0.0), 0.0)


def test_mzm_examples():
    np.testing.assert_allclose(mzm_modulate([0, 0], [1, 1], 1.0), [1, 1])
    np.testing.assert_allclose(mzm_modulate([1, 1], [1, 1], 1.0), [0, 0], atol=1e-15)
    np.testing.assert_allclose(mzm_modulate([0.5], [2], 1.0), [1.0])


def test_mzm_invert_examples():
    np.testing.assert_allclose(mzm_invert([1.0], [1.0]), [0.0])
    np.testing.assert_allclose(mzm_invert([0.0], [1.0]), [1.0])
    np.testing.assert_allclose(mzm_invert([0.5], [1.0]), [0.5])
    with pytest.raises(ValueError):
        mzm_invert([1.5], [1.0])


@given(st.floats(0, 1), st.floats(0.01, 5), st.floats(0.1, 4))
def test_mzm_roundtrip(u, p, v_pi):
    v = u * v_pi
    s = mzm_modulate([v], [p], v_pi)
    assert 0 <= s[0] <= p
    np.testing.assert_allclose(mzm_invert(s, [p], v_pi), [v], atol=1e-6 * v_pi)


def test_ideal_component_is_identity():
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(draw_component_matrices(IDEAL, rng, 3), np.broadcast_to(np.eye(2), (3, 2, 2)))


def test_mux_expected_entries():
    m = expected_component_matrix(MEASURED_COMPONENTS["mux"])
    np.testing.assert_allclose(m[0, 0], (1 - 10**-1.8) / 10**0.07, rtol=1e-12)
    np.testing.assert_allclose(m[1, 0], 10**-1.8 / 10**0.07, rtol=1e-12)
    # hand-calculator values
    assert abs(m[0, 0] - 0.8376) < 1e-4
    assert abs(m[1, 0] - 0.01349) < 1e-5


@given(st.integers(0, 2**31))
def test_column_sums_are_inverse_loss(seed):
    rng = np.random.default_rng(seed)
    for spec in MEASURED_COMPONENTS.values():
        m = draw_component_matrices(spec, rng, 5)
        np.testing.assert_allclose(m.sum(axis=1), np.broadcast_to(10 ** (-np.array(spec.loss_db) / 10), (5, 2)))


def test_drift_stays_in_window():
    rng = np.random.default_rng(1)
    spec = MEASURED_COMPONENTS["demux"]
    m = draw_component_matrices(spec, rng, 20000)
    alpha = 10 ** (np.array(spec.loss_db) / 10)
    xt_db = 10 * np.log10(m[:, 1, 0] * alpha[0])
    assert xt_db.min() >= -14 - 1e-9 and xt_db.max() <= -8 + 1e-9
    # uniform in dB: mean at the centre
    assert abs(xt_db.mean() + 11) < 0.05


def test_compose_examples():
    i = np.eye(2)
    np.testing.assert_array_equal(compose_channel(i, i, i, i), i)
    np.testing.assert_array_equal(compose_channel(2 * i, i, i, i), 2 * i)
    with pytest.raises(ConfigError):
        compose_channel(np.eye(3), i, i, i)


def test_expected_channel_matches_loop_product():
    link = LinkConfig()
    mats = [expected_component_matrix(link.demux), expected_component_matrix(link.spl),
            expected_component_matrix(link.spl), expected_component_matrix(link.mux)]
    ref = np.eye(2)
    for mat in mats:
        out = np.zeros((2, 2))
        for r in range(2):
            for c in range(2):
                out[r, c] = sum(ref[r, k] * mat[k, c] for k in range(2))
        ref = out
    np.testing.assert_allclose(expected_channel(link), ref, rtol=1e-14)


def test_zero_drift_gives_identical_draws():
    link = LinkConfig().without_drift()
    h = draw_channels(link, np.random.default_rng(3), 10)
    np.testing.assert_array_equal(h, np.broadcast_to(h[0], h.shape))
    np.testing.assert_allclose(h[0], expected_channel(link), rtol=1e-14)


def test_draw_order_and_tied_splices():
    link = LinkConfig()
    rng = np.random.default_rng(4)
    mux = draw_component_matrices(link.mux, rng, 6)
    a = draw_component_matrices(link.spl, rng, 6)
    b = draw_component_matrices(link.spl, rng, 6)
    dmx = draw_component_matrices(link.demux, rng, 6)
    np.testing.assert_allclose(draw_channels(link, np.random.default_rng(4), 6), dmx @ b @ a @ mux, rtol=1e-14)
    tied = link.replace(tied_splices=True)
    rng = np.random.default_rng(4)
    mux = draw_component_matrices(link.mux, rng, 6)
    a = draw_component_matrices(link.spl, rng, 6)
    dmx = draw_component_matrices(link.demux, rng, 6)
    np.testing.assert_allclose(draw_channels(tied, np.random.default_rng(4), 6), dmx @ a @ a @ mux, rtol=1e-14)


def test_channel_ensemble_is_seeded():
    link = LinkConfig()
    np.testing.assert_array_equal(channel_ensemble(link, 8, 5), channel_ensemble(link, 8, 5))
    assert not np.array_equal(channel_ensemble(link, 8, 5), channel_ensemble(link, 8, 6))


def test_snr_examples():
    assert snr_to_sigma(0.0, 10 * np.log10(4.0), 2) == pytest.approx(1.0)
    assert snr_to_sigma(20.0, 3.0, 2) == pytest.approx(4.988e-3, rel=1e-3)
    assert snr_to_sigma(300.0, 3.0, 2) < 1e-30
    assert sigma_to_snr(snr_to_sigma(17.5, 3.0, 2), 3.0, 2) == pytest.approx(17.5)


def test_apply_channel_examples():
    np.testing.assert_array_equal(apply_channel([1.0, 0.0], np.eye(2), 0.0), [1.0, 0.0])
    h = np.array([[0.9, 0.1], [0.1, 0.9]])
    np.testing.assert_allclose(apply_channel([1.0, 1.0], h, 0.0), [1.0, 1.0])


def test_noise_statistics():
    rng = np.random.default_rng(12345)
    y = apply_channel(np.zeros((1_000_000, 2)), np.eye(2), 1.0, rng)
    assert abs(y[:, 0].mean()) < 4e-3
    assert abs(y[:, 0].var() - 1.0) < 0.01


def test_component_validation():
    with pytest.raises(ConfigError):
        ComponentSpec((-3.0, 1.0), (0.0, 0.0))
    with pytest.raises(ConfigError):
        ComponentSpec((-3.0, -3.0), (-1.0, 0.0))
    with pytest.raises(ConfigError):
        ComponentSpec((-2.0, -2.0), (0.0, 0.0), xt_range_db=6.0)
    with pytest.raises(ConfigError):
        LinkConfig(n_modes=3)
    with pytest.raises(ConfigError):
        LinkConfig(mod_order=1)

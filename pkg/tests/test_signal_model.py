import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isac_rsma.signal_model import (
    SPEED_OF_LIGHT, ArrayConfig, Target, TargetSet, doppler_frequency, generate_rayleigh_channels,
    rx_steering, steering_derivative, steering_derivative_matrix, steering_matrix, tx_steering,
)
from oracles import steering_scalar

angles = st.floats(-1.5, 1.5, allow_nan=False)


def test_broadside_is_all_ones():
    np.testing.assert_allclose(tx_steering(0.0, 4), np.ones(4))


def test_thirty_degrees_two_elements():
    np.testing.assert_allclose(tx_steering(np.pi / 6, 2), [1, 1j], atol=1e-15)


def test_matches_scalar_evaluation():
    np.testing.assert_allclose(tx_steering(np.pi / 4, 4), steering_scalar(np.pi / 4, 4), atol=1e-15)


@given(angles, st.integers(1, 16))
def test_unit_modulus(theta, n):
    a = tx_steering(theta, n)
    assert a[0] == 1
    assert np.linalg.norm(a) ** 2 == pytest.approx(n, rel=1e-12)


def test_receive_steering_same_geometry():
    np.testing.assert_array_equal(rx_steering(0.3, 9), tx_steering(0.3, 9))


def test_derivative_known_values():
    np.testing.assert_allclose(steering_derivative(0.0, 2), [0, 1j * np.pi], atol=1e-15)
    np.testing.assert_allclose(steering_derivative(np.pi / 2, 4), np.zeros(4), atol=1e-14)


def test_derivative_finite_difference():
    rng = np.random.default_rng(0)
    h = 1e-6
    for theta in rng.uniform(-1.4, 1.4, 100):
        fd = (tx_steering(theta + h, 8) - tx_steering(theta - h, 8)) / (2 * h)
        an = steering_derivative(theta, 8)
        assert np.linalg.norm(fd - an) <= 1e-5 * np.linalg.norm(an)


def test_matrix_forms_stack_columns():
    th = np.array([0.1, -0.4, 0.9])
    A = steering_matrix(th, 5)
    Ad = steering_derivative_matrix(th, 5)
    for m, t in enumerate(th):
        np.testing.assert_allclose(A[:, m], tx_steering(t, 5))
        np.testing.assert_allclose(Ad[:, m], steering_derivative(t, 5))


def test_doppler_values():
    assert doppler_frequency(0.0, 3e9) == 0.0
    assert doppler_frequency(10.0, 3e9) == pytest.approx(2 * 10 * 3e9 / 299792458.0, rel=1e-15)
    assert doppler_frequency(10.0, 3e9) == pytest.approx(200.138, abs=1e-3)
    assert doppler_frequency(-7.0, 3e9) == -doppler_frequency(7.0, 3e9)
    assert SPEED_OF_LIGHT == 299792458.0
    with pytest.raises(ValueError):
        doppler_frequency(1.0, 0.0)


def test_target_doppler_consistent():
    t = Target.moving(0.2, 14.0, 3e9)
    assert t.doppler_hz == doppler_frequency(14.0, 3e9)
    ts = TargetSet.from_degrees([45, 30], [10, 14], 3e9)
    np.testing.assert_allclose(ts.angles, np.deg2rad([45, 30]))
    np.testing.assert_allclose(ts.dopplers, [doppler_frequency(10, 3e9), doppler_frequency(14, 3e9)])
    with pytest.raises(ValueError):
        TargetSet(())


def test_channels_deterministic_and_shaped():
    a = generate_rayleigh_channels(4, 4, 11)
    b = generate_rayleigh_channels(4, 4, 11)
    np.testing.assert_array_equal(a.channels, b.channels)
    assert a.channels.shape == (4, 4) and a.k_users == 4 and a.n_tx == 4
    c = generate_rayleigh_channels(4, 4, 12)
    assert not np.allclose(a.channels, c.channels)
    np.testing.assert_allclose(a.gram(1), np.outer(a.channels[1], a.channels[1].conj()))


def test_channel_second_moment():
    h = generate_rayleigh_channels(1000, 100, 3).channels
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.02)
    # circular: real and imaginary parts carry half the power each
    assert np.mean(h.real ** 2) == pytest.approx(0.5, abs=0.01)


def test_array_config_validation():
    with pytest.raises(ValueError):
        ArrayConfig(n_tx=0)
    with pytest.raises(ValueError):
        ArrayConfig(total_power=-1.0)
    cfg = ArrayConfig()
    assert (cfg.n_tx, cfg.n_rx, cfg.n_pulses) == (4, 9, 1024)
    assert math.isclose(cfg.carrier_hz, 3e9) and math.isclose(cfg.symbol_period_s, 1e-4)

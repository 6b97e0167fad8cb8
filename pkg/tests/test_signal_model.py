import math

import numpy as np
import pytest

import oracles
from pulseperiod.signal_model import (PulseTrainParams, add_noise, make_gaussian_pulse, resample,
                                      sigma2_for_snr, synthesize, tabulated_pulse)


@pytest.fixture(scope="module")
def pulse():
    return make_gaussian_pulse(20, 1)


def test_gaussian_shape(pulse):
    assert pulse.Np == 20
    assert pulse.Tp / 6 == pytest.approx(10 / 3)
    assert pulse.samples[10] == 1.0
    assert pulse.deriv_samples[10] == 0.0
    np.testing.assert_allclose(pulse.samples, oracles.gaussian_samples(), rtol=0, atol=1e-15)


def test_gaussian_energy(pulse):
    assert float(pulse.samples @ pulse.samples) == pytest.approx(oracles.gaussian_energy(), rel=1e-12)
    assert float(pulse.samples @ pulse.samples) == pytest.approx(5.908, abs=5e-4)


def test_np_rounding():
    assert make_gaussian_pulse(20, 0.1).Np == 200
    assert make_gaussian_pulse(20, 3).Np == 7


@pytest.mark.parametrize("Tp,Ts", [(0, 1), (20, 0), (1, 1)])
def test_gaussian_rejects_bad_sizes(Tp, Ts):
    with pytest.raises(ValueError):
        make_gaussian_pulse(Tp, Ts)


def test_analytic_derivative_matches_difference(pulse):
    t = np.linspace(1, 18, 50)
    h = 1e-6
    num = (pulse.value(t + h) - pulse.value(t - h)) / (2 * h)
    np.testing.assert_allclose(pulse.derivative(t), num, atol=1e-8)


def test_zero_amplitude(pulse):
    assert not np.any(synthesize(PulseTrainParams(50, 3, 0.0), pulse, 100, 1))


def test_onsets_on_grid(pulse):
    x = synthesize(PulseTrainParams(500, 0, 1), pulse, 4096, 1)
    peaks = np.flatnonzero(x == 1.0) - 10
    np.testing.assert_array_equal(peaks, np.arange(0, 4096, 500))
    assert len(peaks) == 9
    mask = np.zeros(4096, bool)
    for p in peaks:
        mask[p:p + 20] = True
    assert not np.any(x[~mask])


def test_synthesis_matches_direct_sum():
    s = make_gaussian_pulse(4, 1)
    x = synthesize(PulseTrainParams(16, 3, 2.0), s, 64, 1)
    np.testing.assert_allclose(x, oracles.synth_direct(16, 3, 2.0, s.samples, 64), atol=1e-15)
    np.testing.assert_allclose(x[3:3 + s.Np], 2 * s.samples)


def test_partial_edge_pulse(pulse):
    x = synthesize(PulseTrainParams(500, 490, 1), pulse, 1000, 1)
    np.testing.assert_allclose(x[990:], pulse.samples[:10])
    np.testing.assert_allclose(x[:10], pulse.samples[10:])  # pulse k=-1 started at -10
    assert np.all(x[10:490] == 0)


def test_params_validation(pulse):
    with pytest.raises(ValueError):
        PulseTrainParams(0, 0)
    with pytest.raises(ValueError):
        PulseTrainParams(10, 10)
    with pytest.raises(ValueError):
        synthesize(PulseTrainParams(10, 0), pulse, 100, 1)
    with pytest.raises(ValueError):
        synthesize(PulseTrainParams(100, 0), pulse, 100, 0.5)


def test_noise_zero_variance(pulse):
    clean = synthesize(PulseTrainParams(100, 5), pulse, 300, 1)
    assert np.array_equal(add_noise(clean, 0.0, 9).x, clean)


def test_noise_variance_and_determinism():
    z = np.zeros(100_000)
    a = add_noise(z, 4.0, 1).x
    assert abs(a.var() - 4.0) <= 0.05 * 4.0
    assert np.array_equal(a, add_noise(z, 4.0, 1).x)
    assert not np.array_equal(a, add_noise(z, 4.0, 2).x)


def test_snr_peak(pulse):
    assert sigma2_for_snr(pulse, 1, 0) == pytest.approx(1.0)
    assert sigma2_for_snr(pulse, 1, -18) == pytest.approx(10**1.8)
    assert sigma2_for_snr(pulse, 1, -18) == pytest.approx(63.10, abs=5e-3)
    assert sigma2_for_snr(pulse, 2, 3) / sigma2_for_snr(pulse, 1, 3) == pytest.approx(4)


def test_snr_average(pulse):
    E = oracles.gaussian_energy()
    assert sigma2_for_snr(pulse, 1, 0, "average", 500) == pytest.approx(E / 500)
    with pytest.raises(ValueError):
        sigma2_for_snr(pulse, 1, 0, "average")
    with pytest.raises(ValueError):
        sigma2_for_snr(pulse, 1, 0, "rms")


def test_resample_identity_and_zeros():
    x = np.random.default_rng(0).normal(size=33)
    assert np.array_equal(resample(x, 1), x)
    assert np.array_equal(resample(np.zeros(20), 10), np.zeros(200))
    with pytest.raises(ValueError):
        resample(x, 0)


def test_resample_bandlimited_cosine():
    n = np.arange(64)
    y = resample(np.cos(2 * np.pi * 5 * n / 64), 4)
    m = np.arange(256)
    np.testing.assert_allclose(y, np.cos(2 * np.pi * 5 * m / 256), atol=1e-9)


def test_tabulated_pulse_resampled_keeps_samples():
    p = tabulated_pulse([0.0, 1.0, 3.0, 1.0, 0.0], 1.0)
    r = p.resampled(4)
    assert r.Np == 20 and math.isclose(r.Ts, 0.25)
    np.testing.assert_allclose(r.samples[::4], p.samples)


@pytest.mark.parametrize("N,P_R", [(64, 4), (65, 3), (4096, 10)])
def test_resample_decimation_returns_input(N, P_R):
    x = np.random.default_rng(N).normal(size=N)
    assert np.max(np.abs(resample(x, P_R)[::P_R] - x)) <= 1e-9

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pulseperiod import estimators as est
from pulseperiod.signal_model import (Measurement, PulseTrainParams, add_noise, make_gaussian_pulse,
                                      synthesize, tabulated_pulse)

GRID = est.GridSpec(475, 525)


@pytest.fixture(scope="module")
def pulse():
    return make_gaussian_pulse(20, 1)


@pytest.fixture(scope="module")
def clean(pulse):
    return synthesize(PulseTrainParams(500, 123, 1.0), pulse, 4096, 1)


def dense_surfaces(x, P_range, s):
    N, Np = len(x), len(s)
    ks, us = {}, {}
    for P in P_range:
        for n0 in range(P):
            ks[P, n0] = oracles.projection_energy(oracles.template_train(N, P, n0, s), x)
            us[P, n0] = oracles.projection_energy(oracles.indicator_train(N, P, n0, Np), x)
    return ks, us


def check_against_dense(x, s, P_min, P_max):
    grid = est.GridSpec(P_min, P_max)
    pulse = tabulated_pulse(s, 1.0)
    ks, us = dense_surfaces(x, range(P_min, P_max + 1), s)
    periods, surf_k = est.cost_surface(x, "PPKS", grid, pulse=pulse)
    _, surf_u = est.cost_surface(x, "PPUS", grid, Np=len(s))
    scale = max(max(us.values()), 1e-300)
    for i, P in enumerate(periods):
        for n0 in range(P):
            assert surf_k[i, n0] == pytest.approx(ks[P, n0], rel=1e-9, abs=1e-12 * scale)
            assert surf_u[i, n0] == pytest.approx(us[P, n0], rel=1e-9, abs=1e-12 * scale)
            assert us[P, n0] >= ks[P, n0] - 1e-9 * scale
    rk, ru = est.ppks(x, pulse, grid), est.ppus(x, len(s), grid)
    assert ks[rk.P_hat, rk.n0_hat] == pytest.approx(max(ks.values()), rel=1e-9)
    assert us[ru.P_hat, ru.n0_hat] == pytest.approx(max(us.values()), rel=1e-9)


def test_tiny_instance_brute_force():
    rng = np.random.default_rng(5)
    s = np.array([0.3, 1.0, 0.7, 0.2])
    x = synthesize(PulseTrainParams(16, 5, 1.0), tabulated_pulse(s, 1.0), 64, 1) + rng.normal(0, 0.3, 64)
    check_against_dense(x, s, 14, 18)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), N=st.integers(24, 64), Np=st.integers(1, 5),
       P_min=st.integers(5, 12), span=st.integers(0, 6))
def test_fast_paths_match_dense(seed, N, Np, P_min, span):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=Np)
    s[0] = s[0] if abs(s[0]) > 0.1 else 1.0
    check_against_dense(rng.normal(size=N), s, max(P_min, Np), max(P_min, Np) + span)


def test_ppks_noiseless(pulse, clean):
    r = est.ppks(clean, pulse, GRID)
    assert (r.P_hat, r.n0_hat) == (500, 123)
    assert r.nuisance == pytest.approx(1.0, abs=1e-9)


def test_ppks_scale_invariance(pulse, clean):
    x = add_noise(clean, 0.05, 3).x
    a, b = est.ppks(x, pulse, GRID), est.ppks(7.5 * x, pulse, GRID)
    assert (a.P_hat, a.n0_hat) == (b.P_hat, b.n0_hat)
    assert b.cost == pytest.approx(7.5**2 * a.cost)


def test_ppus_noiseless(pulse, clean):
    r = est.ppus(clean, 20, GRID)
    assert (r.P_hat, r.n0_hat) == (500, 123)
    np.testing.assert_allclose(r.nuisance, pulse.samples, atol=1e-9)


def test_pulse_longer_than_period_rejected(pulse):
    with pytest.raises(est.PreconditionError):
        est.ppus(np.zeros(200), 30, est.GridSpec(20, 40))
    with pytest.raises(est.PreconditionError):
        est.ppks(np.zeros(200), make_gaussian_pulse(30, 1), est.GridSpec(20, 40))


def test_recover_pulse_dense_ls():
    rng = np.random.default_rng(2)
    x = rng.normal(size=64)
    H = oracles.indicator_train(64, 16, 3, 4)
    ref, *_ = np.linalg.lstsq(H, x, rcond=None)
    np.testing.assert_allclose(est.recover_pulse(x, 16, 3, 4), ref, atol=1e-12)
    # last segment cut off by the window still contributes
    H = oracles.indicator_train(64, 15, 10, 6)
    ref, *_ = np.linalg.lstsq(H, x, rcond=None)
    np.testing.assert_allclose(est.recover_pulse(x, 15, 10, 6), ref, atol=1e-12)


def test_recover_pulse_noiseless(pulse, clean):
    np.testing.assert_allclose(est.recover_pulse(clean, 500, 123, 20), pulse.samples, atol=1e-12)


def test_recover_pulse_variance():
    s = np.array([0.3, 1.0, 0.7, 0.2])
    clean = synthesize(PulseTrainParams(16, 3, 1.0), tabulated_pulse(s, 1.0), 64, 1)
    sigma2, K = 0.5, 4
    draws = np.array([est.recover_pulse(add_noise(clean, sigma2, i).x, 16, 3, 4) for i in range(500)])
    # pooled over the four samples: K*Identity information block gives sigma2/K each
    assert draws.var(axis=0, ddof=1).mean() == pytest.approx(sigma2 / K, rel=0.10)


def test_recover_pulse_bad_indices():
    with pytest.raises(ValueError):
        est.recover_pulse(np.zeros(64), 16, 16, 4)
    with pytest.raises(ValueError):
        est.recover_pulse(np.zeros(64), 16, 3, 17)


def test_subgrid_identity(pulse, clean):
    m = Measurement(add_noise(clean, 0.1, 4).x)
    a = est.estimate_with_subgrid(m, "PPKS", 1, GRID, pulse=pulse)
    b = est.ppks(m, pulse, GRID)
    assert (a.P_hat, a.n0_hat, a.cost) == (b.P_hat, b.n0_hat, b.cost)


@pytest.mark.parametrize("method", ["PPKS", "PPUS"])
def test_subgrid_off_grid_period(pulse, method):
    x = synthesize(PulseTrainParams(500.3, 37.0, 1.0), pulse, 4096, 1)
    r = est.estimate_with_subgrid(Measurement(x), method, 10, GRID, pulse=pulse, Np=20)
    assert abs(r.T_hat - 500.3) <= 0.05


def tone(psi, N=4096):
    return np.cos(2 * np.pi * psi * np.arange(N) + 0.4)


def test_anls_single_tone():
    r = est.anls(tone(0.01), 1, est.GridSpec(80, 120, fft_size=2**16))
    j = round(0.01 * 2**16)
    assert r.psi_hat == j / 2**16


def test_mhus_ml_single_tone_on_grid():
    g = est.GridSpec(80, 120, psi_grid=tuple(np.arange(0.008, 0.0125, 0.0005)))
    assert est.mhus_ml(tone(0.01), 1, g).psi_hat == pytest.approx(0.01, abs=1e-15)


def test_mhus_ml_matches_dense_lstsq():
    rng = np.random.default_rng(8)
    N, Kh = 64, 3
    x = rng.normal(size=N)
    psi = (0.031, 0.05, 0.0713, 0.09)
    g = est.GridSpec(10, 40, psi_grid=psi)
    r = est.mhus_ml(x, Kh, g)
    dense = [oracles.projection_energy(oracles.harmonic_basis(N, p, Kh), x) for p in psi]
    assert r.psi_hat == psi[int(np.argmax(dense))]
    assert r.cost == pytest.approx(max(dense), rel=1e-9)


def test_mhus_ml_equals_anls_for_one_harmonic():
    N = 4096
    x = add_noise(tone(11 / N), 1.0, 3).x
    psi = tuple(j / N for j in range(6, 17))
    ml = est.mhus_ml(x, 1, est.GridSpec(200, 800, psi_grid=psi))
    an = est.anls(x, 1, est.GridSpec(200, 800, psi_grid=psi, fft_size=4 * N))
    assert ml.psi_hat == pytest.approx(an.psi_hat, abs=1e-15)
    assert ml.cost == pytest.approx(2 / N * an.cost, rel=1e-6)


def test_harmonic_gram_matches_dense():
    for psi in (0.013, 0.1, 0.2):
        H = oracles.harmonic_basis(50, psi, 4)
        np.testing.assert_allclose(est.harmonic_gram(psi, 4, 50)[0], H.T @ H, atol=1e-10)


def test_anls_pulse_train_dtft(pulse):
    x = synthesize(PulseTrainParams(512, 40, 1.0), pulse, 4096, 1)
    M = 2**20
    r = est.anls(x, 8, est.GridSpec(480, 540, fft_size=M))
    assert abs(r.psi_hat - 1 / 512) <= 1 / M
    cand = [r.psi_hat + d / M for d in (-2, -1, 1, 2)]
    best = oracles.dtft_power(x, r.psi_hat, 8)
    assert all(oracles.dtft_power(x, c, 8) <= best * (1 + 1e-9) for c in cand)


def test_anls_fft_refinement_monotone(pulse):
    x = add_noise(synthesize(PulseTrainParams(505, 40, 1.0), pulse, 4096, 1), 0.5, 6).x
    a = est.anls(x, 6, est.GridSpec(475, 525, fft_size=2**17))
    b = est.anls(x, 6, est.GridSpec(475, 525, fft_size=2**18))
    assert b.cost >= a.cost


def test_anls_scale_invariance():
    x = add_noise(tone(0.002), 1.0, 1).x
    g = est.GridSpec(475, 525, fft_size=2**16)
    assert est.anls(x, 3, g).psi_hat == est.anls(3 * x, 3, g).psi_hat


def test_anls_precondition():
    with pytest.raises(est.PreconditionError):
        est.anls(np.ones(4096), 300, GRID)
    with pytest.raises(est.PreconditionError):
        est.mhus_ml(np.ones(64), 20, est.GridSpec(10, 40, psi_grid=(0.05,)))


def test_mhus_ml_near_singular_warns():
    g = est.GridSpec(10, 4000, psi_grid=(1e-9, 0.05))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        r = est.mhus_ml(tone(0.05, 64), 1, g)
    assert r.psi_hat == 0.05
    assert any(issubclass(i.category, RuntimeWarning) for i in w)


def test_model_order_single_tone():
    N = 4096
    x = tone(10 / N)
    g = est.GridSpec(300, 500, fft_size=N * 16)
    for Kh_max in (1, 4, 10):
        assert est.select_model_order(x, Kh_max, g) == 1


def test_model_order_noise_only():
    g = est.GridSpec(475, 525, fft_size=2**18)
    picks = [est.select_model_order(add_noise(np.zeros(4096), 1.0, i).x, 20, g) for i in range(100)]
    assert sum(p == 1 for p in picks) >= 90


def test_model_order_pulse_train(pulse):
    from pulseperiod.signal_model import sigma2_for_snr
    x = add_noise(synthesize(PulseTrainParams(500, 17, 1.0), pulse, 4096, 1),
                  sigma2_for_snr(pulse, 1.0, 0.0, "average", 500), 1).x
    Kh = est.select_model_order(x, 60, est.GridSpec(475, 525, fft_size=2**18))
    print(f"selected Kh at 0 dB: {Kh}")
    assert 5 <= Kh <= 60

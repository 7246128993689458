import numpy as np
import pytest

import hotrkit as hk
from hotrkit.hbm import AftConfig, solve_mhb
from hotrkit.model import SystemModel
from hotrkit.timedomain import (
    IntegratorConfig,
    SteadyStateError,
    add_noise,
    extract_harmonics,
    integrate,
)


def test_spectral_radius_parameters():
    cfg = IntegratorConfig(rho_inf=0.7)
    assert cfg.alpha_m == pytest.approx(0.23529, abs=1e-5)
    assert cfg.alpha_f == pytest.approx(0.41176, abs=1e-5)
    assert cfg.beta == pytest.approx(0.34602, abs=1e-5)
    assert cfg.gamma == pytest.approx(0.67647, abs=1e-5)
    # closed forms
    rho = 0.7
    assert cfg.alpha_m == pytest.approx((2 * rho - 1) / (rho + 1))
    assert cfg.alpha_f == pytest.approx(rho / (rho + 1))
    assert cfg.beta == pytest.approx(0.25 * (1 - cfg.alpha_m + cfg.alpha_f) ** 2)
    assert cfg.gamma == pytest.approx(0.5 - cfg.alpha_m + cfg.alpha_f)


def test_rho_inf_bounds():
    with pytest.raises(ValueError):
        IntegratorConfig(rho_inf=1.2)


def test_trapezoidal_limit_conserves_energy():
    # undamped free vibration with rho_inf = 1: amplitude must not drift
    model = SystemModel(
        M=np.array([[1.0]]), C=np.array([[0.0]]), K=np.array([[1.0]]),
        contact_pairs=[], force_pattern=np.array([1.0]), force_peak=0.0,
        sensor_rows=np.array([[1.0]]),
    )
    cfg = IntegratorConfig(rho_inf=1.0, steps_per_period=256)
    hist = integrate(model, 1.0, cfg, x0=np.array([1.0]), fixed_periods=100)
    sig = hist.strains[:, 0]
    per = 256
    first = np.max(np.abs(sig[:per]))
    last = np.max(np.abs(sig[-per:]))
    assert last == pytest.approx(first, rel=1e-6)


class TestExtraction:
    def test_pure_tone(self):
        w = 7.0
        dt = 2 * np.pi / w / 512
        t = dt * np.arange(5 * 512)
        out = extract_harmonics(3.0 * np.cos(w * t), w, dt, 3)
        assert out[1] == pytest.approx(1.5, abs=1e-12)
        assert abs(out[2]) < 1e-12

    def test_round_trip(self):
        w = 3.0
        dt = 2 * np.pi / w / 1024
        t = 0.37 + dt * np.arange(2 * 1024)
        coeffs = [0.1, 0.3 - 0.2j, 0.05 + 0.07j, -0.01 + 0.02j]
        sig = np.full(t.size, coeffs[0])
        for p, c in enumerate(coeffs[1:], start=1):
            sig = sig + 2 * np.real(c * np.exp(1j * p * w * t))
        out = extract_harmonics(sig, w, dt, 3, t0=0.37)
        for p, c in enumerate(coeffs):
            assert abs(out[p] - c) < 1e-10

    def test_rectified_cosine(self):
        w = 2.0
        dt = 2 * np.pi / w / 2048
        t = dt * np.arange(2048)
        out = extract_harmonics(np.maximum(np.cos(w * t), 0.0), w, dt, 3)
        assert abs(out[0] - 1 / np.pi) < 1e-5
        assert abs(out[1] - 0.25) < 1e-8
        assert abs(out[2] - 1 / (3 * np.pi)) < 1e-5

    def test_descending_orders_not_expressible(self):
        # the recursion is strictly ascending: lower orders are removed
        # before each correlation, so a strong fundamental cannot leak up
        w = 2.0
        dt = 2 * np.pi / w / 512
        t = dt * np.arange(512 * 3)
        sig = 100.0 * np.cos(w * t) + 1e-4 * np.cos(2 * w * t)
        out = extract_harmonics(sig, w, dt, 2)
        assert out[2] == pytest.approx(5e-5, rel=1e-6)

    def test_window_shorter_than_period_rejected(self):
        w = 2.0
        dt = 2 * np.pi / w / 512
        with pytest.raises(ValueError, match="shorter"):
            extract_harmonics(np.zeros(256), w, dt, 2)

    def test_non_integer_window_rejected(self):
        w = 2.0
        dt = 2 * np.pi / w / 512
        with pytest.raises(ValueError, match="integer"):
            extract_harmonics(np.zeros(700), w, dt, 2)


class TestNoise:
    def test_zero_level_is_identity(self):
        sig = np.sin(np.linspace(0, 20, 500))
        ns = add_noise(sig, 0.0, seed=1)
        assert np.array_equal(ns.noisy, sig)

    def test_realized_ratio(self):
        rng = np.random.default_rng(0)
        sig = np.sin(np.linspace(0, 700, 60000)) + 0.1
        ns = add_noise(sig, 10.0, seed=42)
        assert ns.realized_level() == pytest.approx(10.0, abs=0.2)

    def test_deterministic_and_seed_sensitive(self):
        sig = np.sin(np.linspace(0, 20, 500))
        a = add_noise(sig, 5.0, seed=7)
        b = add_noise(sig, 5.0, seed=7)
        c = add_noise(sig, 5.0, seed=8)
        assert np.array_equal(a.noise, b.noise)
        assert not np.array_equal(a.noise, c.noise)
        assert c.realized_level() == pytest.approx(5.0, abs=0.5)

    def test_channels_are_independent(self):
        sig = np.outer(np.sin(np.linspace(0, 40, 4000)), np.ones(3))
        ns = add_noise(sig, 5.0, seed=3)
        corr = np.corrcoef(ns.noise.T)
        off = corr[~np.eye(3, dtype=bool)]
        assert np.max(np.abs(off)) < 0.1

    def test_zero_power_rejected(self):
        with pytest.raises(ValueError, match="zero-power"):
            add_noise(np.zeros(100), 1.0, seed=0)

    def test_negative_level_rejected(self):
        with pytest.raises(ValueError):
            add_noise(np.ones(10), -1.0, seed=0)


class TestIntegrate:
    def test_healthy_model_is_single_tone(self, damped_small_models):
        healthy, _ = damped_small_models
        f1 = hk.eigenmodes(healthy, 1)[0][0]
        w = 2 * np.pi * 0.4 * f1
        cfg = IntegratorConfig(steps_per_period=512, steady_tol=1e-6,
                               record_periods=4, max_periods=2000)
        hist = integrate(healthy, w, cfg)
        eps = extract_harmonics(hist.strains, w, hist.dt, 3, t0=hist.t[0])
        ratio = np.abs(eps[2]) / np.abs(eps[1])
        assert np.max(ratio) < 1e-6

    def test_cracked_model_agrees_with_harmonic_balance(self, damped_small_models):
        _, cracked = damped_small_models
        f1 = hk.eigenmodes(cracked, 1)[0][0]
        w = 2 * np.pi * 0.4 * f1
        sol = solve_mhb(cracked, w, AftConfig(h=5, n_samples=1024))
        ref = sol.sensor_coefficients(cracked.sensor_rows)
        cfg = IntegratorConfig(steps_per_period=512, steady_tol=1e-6,
                               record_periods=8, max_periods=2000)
        hist = integrate(cracked, w, cfg)
        eps = extract_harmonics(hist.strains, w, hist.dt, 5, t0=hist.t[0])
        for p in (1, 2):
            rel = np.abs(eps[p] - ref[p]) / np.abs(ref[p])
            assert np.max(rel) < 0.03

    def test_dt_refinement(self, damped_small_models):
        _, cracked = damped_small_models
        f1 = hk.eigenmodes(cracked, 1)[0][0]
        w = 2 * np.pi * 0.4 * f1
        mags = []
        for spp in (512, 1024):
            cfg = IntegratorConfig(steps_per_period=spp, steady_tol=1e-6,
                                   record_periods=8, max_periods=2000)
            hist = integrate(cracked, w, cfg)
            eps = extract_harmonics(hist.strains, w, hist.dt, 3, t0=hist.t[0])
            mags.append(np.abs(eps[2]))
        change = np.abs(mags[1] - mags[0]) / mags[0]
        assert np.max(change) < 0.005

    def test_steady_state_budget_error(self, damped_small_models):
        healthy, _ = damped_small_models
        f1 = hk.eigenmodes(healthy, 1)[0][0]
        cfg = IntegratorConfig(steps_per_period=256, max_periods=3,
                               steady_tol=1e-12, record_periods=2)
        with pytest.raises(SteadyStateError):
            integrate(healthy, 2 * np.pi * 0.4 * f1, cfg)

import numpy as np
import pytest

import hotrkit as hk
from hotrkit.hbm import (
    AftConfig,
    ConvergenceError,
    SweepFailure,
    aft_coefficients,
    dynamic_stiffness,
    relative_force_coefficients,
    residual,
    residual_and_jacobian,
    solve_mhb,
    sweep,
)
from hotrkit.model import ContactPair, SystemModel


def scalar_model(m=1.0, c=0.02, k=1.0, pairs=()):
    return SystemModel(
        M=np.array([[m]]), C=np.array([[c]]), K=np.array([[k]]),
        contact_pairs=list(pairs), force_pattern=np.array([1.0]),
        force_peak=2.0, sensor_rows=np.array([[1.0]]),
    )


def cosine_pair_coeffs(h, amplitude=0.5):
    a = np.zeros((h + 1, 1), dtype=complex)
    a[1, 0] = amplitude
    return a


class TestAftConfig:
    def test_power_of_two_required(self):
        with pytest.raises(ValueError, match="power of two"):
            AftConfig(h=5, n_samples=1000)

    def test_anti_aliasing_margin(self):
        with pytest.raises(ValueError, match="margin"):
            AftConfig(h=10, n_samples=32)
        AftConfig(h=7, n_samples=32)   # 4*7+4 = 32 is allowed


class TestDynamicStiffness:
    def test_order_zero_is_stiffness(self, small_healthy):
        D0 = dynamic_stiffness(small_healthy, 123.0, 0)
        assert D0 is small_healthy.K

    def test_scalar_value(self):
        model = scalar_model()
        D1 = dynamic_stiffness(model, 0.6, 1)
        assert D1[0, 0] == pytest.approx(0.64 + 0.012j, abs=1e-15)

    def test_resonance_singularity(self):
        model = scalar_model(c=0.0)
        D1 = dynamic_stiffness(model, 1.0, 1)
        assert abs(D1[0, 0]) < 1e-15

    def test_negative_order_rejected(self):
        with pytest.raises(ValueError):
            dynamic_stiffness(scalar_model(), 1.0, -1)


class TestAftCoefficients:
    def test_rectified_cosine_exact_components(self):
        # odd orders above 1 carry no aliases: exact at any sample count
        cfg = AftConfig(h=5, n_samples=1024)
        pairs = [ContactPair(0, None, k_p=1.0)]
        F, _ = relative_force_coefficients(cosine_pair_coeffs(5), pairs, cfg)
        assert F[1, 0] == pytest.approx(0.25, abs=1e-12)
        assert abs(F[3, 0]) < 1e-12

    def test_rectified_cosine_aliasing_floor(self):
        # even orders alias the 1/p^2 tail of the kinked force: ~1e-6 at
        # 1024 samples, dropping quadratically with the sample count
        pairs = [ContactPair(0, None, k_p=1.0)]
        exact0, exact2 = 1 / np.pi, 1 / (3 * np.pi)
        cfg = AftConfig(h=5, n_samples=1024)
        F, _ = relative_force_coefficients(cosine_pair_coeffs(5), pairs, cfg)
        assert abs(F[0, 0] - exact0) < 2e-6
        assert abs(F[2, 0] - exact2) < 2e-6
        cfg = AftConfig(h=5, n_samples=16384)
        F, _ = relative_force_coefficients(cosine_pair_coeffs(5), pairs, cfg)
        assert abs(F[0, 0] - exact0) < 1e-8
        assert abs(F[2, 0] - exact2) < 1e-8

    def test_fully_open_gives_zero(self):
        cfg = AftConfig(h=4, n_samples=256)
        pairs = [ContactPair(0, None, k_p=7.0)]
        a = cosine_pair_coeffs(4)
        a[0, 0] = -2.0        # offset keeps the pair separated all period
        F, _ = relative_force_coefficients(a, pairs, cfg)
        assert np.max(np.abs(F)) == 0.0

    def test_fully_closed_is_linear(self):
        cfg = AftConfig(h=4, n_samples=256)
        kp = 7.0
        pairs = [ContactPair(0, None, k_p=kp)]
        a = cosine_pair_coeffs(4)
        a[0, 0] = 2.0
        F, _ = relative_force_coefficients(a, pairs, cfg)
        assert np.allclose(F, kp * a, atol=1e-12)

    def test_scatter_signs(self):
        cfg = AftConfig(h=2, n_samples=64)
        pairs = [ContactPair(3, 1, k_p=2.0)]
        a = np.zeros((3, 1), dtype=complex)
        a[0, 0] = 1.0
        out = aft_coefficients(a, pairs, cfg, omega=1.0, n_dofs=5)
        assert out[0, 3] == pytest.approx(2.0)
        assert out[0, 1] == pytest.approx(-2.0)
        assert np.all(out[:, [0, 2, 4]] == 0)


class TestSolve:
    def test_healthy_is_linear_single_iteration(self, small_healthy):
        w = 2 * np.pi * 200.0
        sol = solve_mhb(small_healthy, w)
        assert sol.iterations == 1
        D1 = dynamic_stiffness(small_healthy, w, 1)
        import scipy.sparse.linalg as spla
        x_lin = spla.spsolve(D1.tocsc(), small_healthy.qhat.astype(complex))
        assert np.allclose(sol.coeffs[1], x_lin)
        assert np.max(np.abs(sol.coeffs[2])) == 0.0

    def test_cracked_solution_and_certificate(self, small_cracked):
        w = 2 * np.pi * 500.0
        cfg = AftConfig()
        sol = solve_mhb(small_cracked, w, cfg)
        assert sol.converged
        assert sol.residual_norm < 1e-9
        # re-evaluated independently through matrix-vector products
        assert residual(small_cracked, sol, cfg) < 1e-9
        eps = sol.sensor_coefficients(small_cracked.sensor_rows)
        assert np.max(np.abs(eps[2])) > 0

    def test_zero_coefficient_row_is_real(self, small_cracked):
        sol = solve_mhb(small_cracked, 2 * np.pi * 400.0)
        assert np.max(np.abs(sol.coeffs[0].imag)) == 0.0

    def test_homogeneity(self, small_cracked):
        w = 2 * np.pi * 500.0
        s1 = solve_mhb(small_cracked, w)
        s10 = solve_mhb(small_cracked.scaled(10.0), w)
        for p in (1, 2):
            err = np.linalg.norm(s10.coeffs[p] - 10.0 * s1.coeffs[p])
            assert err <= 1e-10 * np.linalg.norm(s10.coeffs[p])

    def test_harmonic_truncation_convergence(self, small_cracked):
        w = 2 * np.pi * 500.0
        e5 = solve_mhb(small_cracked, w, AftConfig(h=5)) \
            .sensor_coefficients(small_cracked.sensor_rows)
        e7 = solve_mhb(small_cracked, w, AftConfig(h=7)) \
            .sensor_coefficients(small_cracked.sensor_rows)
        change = np.abs(np.abs(e7[2]) - np.abs(e5[2])) / np.abs(e5[2])
        assert np.max(change) < 0.01

    def test_nonconvergence_reports_residual(self, small_cracked):
        with pytest.raises(ConvergenceError) as err:
            solve_mhb(small_cracked, 2 * np.pi * 500.0, max_iter=1)
        assert err.value.residual is not None
        assert err.value.omega == pytest.approx(2 * np.pi * 500.0)

    def test_omega_must_be_positive(self, small_healthy):
        with pytest.raises(ValueError):
            solve_mhb(small_healthy, 0.0)


class TestJacobian:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(42)
        n = 20
        Q = rng.standard_normal((n, n))
        M = Q @ Q.T + n * np.eye(n)
        R = rng.standard_normal((n, n))
        K = R @ R.T + n * np.eye(n)
        model = SystemModel(
            M=M, C=0.01 * M + 0.001 * K, K=K,
            contact_pairs=[ContactPair(2, 7, k_p=5.0),
                           ContactPair(11, 15, k_p=3.0)],
            force_pattern=rng.standard_normal(n), force_peak=2.0,
            sensor_rows=np.eye(n)[:2],
        )
        cfg = AftConfig(h=5, n_samples=1024)
        z = 0.5 * rng.standard_normal(n * (2 * cfg.h + 1))
        _, J = residual_and_jacobian(model, 1.3, cfg, z)
        step = 1e-6
        J_fd = np.zeros_like(J)
        for i in range(z.size):
            zp = z.copy(); zp[i] += step
            zm = z.copy(); zm[i] -= step
            rp, _ = residual_and_jacobian(model, 1.3, cfg, zp)
            rm, _ = residual_and_jacobian(model, 1.3, cfg, zm)
            J_fd[:, i] = (rp - rm) / (2 * step)
        err = np.linalg.norm(J - J_fd) / np.linalg.norm(J)
        assert err < 1e-5


class TestSweep:
    def test_empty(self, small_cracked):
        assert sweep(small_cracked, []) == []

    def test_single_matches_solve(self, small_cracked):
        w = 2 * np.pi * 450.0
        one = sweep(small_cracked, [w])[0]
        ref = solve_mhb(small_cracked, w)
        assert np.allclose(one.coeffs, ref.coeffs)

    def test_requires_ascending(self, small_cracked):
        with pytest.raises(ValueError, match="ascending"):
            sweep(small_cracked, [100.0, 90.0])

    def test_failures_are_tagged(self, small_cracked):
        # an impossible iteration budget turns every point into a failure
        out = sweep(small_cracked, [2 * np.pi * 450.0], tol=1e-30)
        assert isinstance(out[0], SweepFailure)
        assert out[0].omega == pytest.approx(2 * np.pi * 450.0)

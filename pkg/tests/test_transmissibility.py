import numpy as np
import pytest
import scipy.sparse.linalg as spla

import hotrkit as hk
from hotrkit.hbm import AftConfig, dynamic_stiffness, solve_mhb
from hotrkit.model import static_solve
from hotrkit.transmissibility import (
    UndefinedTransmissibilityError,
    ordered_pairs,
    ratio_values,
    records_to_dict,
    rmse_per_pair,
    solve_closed_crack,
    surrogate_sensor_coefficients,
    tr_nonlinear,
    tr_surrogate,
)
from tests.conftest import map_to_split


@pytest.fixture(scope="module")
def cracked_solution(small_cracked):
    f1 = hk.eigenmodes(small_cracked, 1)[0][0]
    w = 2 * np.pi * 0.4 * f1
    return solve_mhb(small_cracked, w, AftConfig())


def test_ordered_pairs():
    pairs = ordered_pairs(4)
    assert len(pairs) == 12
    assert (0, 0) not in pairs


def test_self_pair_is_exactly_one(cracked_solution, small_cracked):
    recs = tr_nonlinear(cracked_solution, small_cracked.sensor_rows, 2,
                        pairs=[(1, 1)])
    assert recs[0].value == 1.0 + 0.0j


def test_records_carry_provenance(cracked_solution, small_cracked):
    rn = tr_nonlinear(cracked_solution, small_cracked.sensor_rows, 2)
    rs = tr_surrogate(small_cracked, cracked_solution.omega, 2)
    assert {r.method for r in rn} == {"nonlinear"}
    assert {r.method for r in rs} == {"surrogate"}


def test_healthy_second_order_is_undefined(small_healthy):
    f1 = hk.eigenmodes(small_healthy, 1)[0][0]
    sol = solve_mhb(small_healthy, 2 * np.pi * 0.4 * f1)
    with pytest.raises(UndefinedTransmissibilityError) as err:
        tr_nonlinear(sol, small_healthy.sensor_rows, 2)
    assert len(err.value.pairs) == 12


def test_reciprocal_consistency(cracked_solution, small_cracked):
    d = records_to_dict(tr_nonlinear(cracked_solution,
                                     small_cracked.sensor_rows, 2))
    for (m, n) in ordered_pairs(4):
        prod = d[(m, n)] * d[(n, m)]
        assert abs(prod - 1.0) < 1e-12


def test_order_above_truncation_rejected(cracked_solution, small_cracked):
    with pytest.raises(ValueError):
        tr_nonlinear(cracked_solution, small_cracked.sensor_rows,
                     cracked_solution.h + 1)


class TestClosedCrack:
    def test_static_limit_matches_section_force_oracle(self, small_mesh,
                                                       small_healthy,
                                                       small_cracked):
        # oracle: internal forces the healthy beam carries across the line
        q = small_cracked.force_peak * small_cracked.force_pattern
        cc = solve_closed_crack(small_cracked, 0.0, qhat=q)
        x_h = static_solve(small_healthy,
                           small_healthy.force_peak * small_healthy.force_pattern)
        x_map = map_to_split(x_h, small_healthy, small_cracked, small_mesh)
        resid = q - small_cracked.K @ x_map
        lam_oracle = resid[small_cracked.partition[0]]
        assert np.allclose(cc.lambda_hat.real, lam_oracle, rtol=1e-6)
        assert np.max(np.abs(cc.lambda_hat.imag)) == 0.0

    def test_linearity_in_the_load(self, small_cracked):
        w = 2 * np.pi * 300.0
        c1 = solve_closed_crack(small_cracked, w)
        alpha = 2.0 + 1.0j
        c2 = solve_closed_crack(small_cracked, w, qhat=alpha * small_cracked.qhat)
        assert np.allclose(c2.lambda_hat, alpha * c1.lambda_hat, rtol=1e-12)

    def test_compatibility_certificate(self, small_cracked):
        cc = solve_closed_crack(small_cracked, 2 * np.pi * 300.0)
        assert cc.compatibility_residual < 1e-10

    def test_quasistatic_response_equals_pristine(self, small_mesh,
                                                  small_healthy, small_cracked):
        # at negligible inertia the compatible response is the pristine one
        w = 1.0
        cc = solve_closed_crack(small_cracked, w)
        D_h = dynamic_stiffness(small_healthy, w, 1)
        x_h = spla.spsolve(D_h.tocsc(), small_healthy.qhat.astype(complex))
        x_map = map_to_split(x_h, small_healthy, small_cracked, small_mesh)
        err = np.linalg.norm(cc.x_hat - x_map) / np.linalg.norm(x_map)
        assert err < 1e-10

    def test_dynamic_response_near_pristine(self, small_mesh, small_healthy,
                                            small_cracked):
        # inertia induces a little shear transfer across the crack plane
        # that the normal-only compatibility cannot carry; the remaining
        # gap is small but no longer at solver precision
        f1 = hk.eigenmodes(small_healthy, 1)[0][0]
        w = 2 * np.pi * 0.4 * f1
        cc = solve_closed_crack(small_cracked, w)
        D_h = dynamic_stiffness(small_healthy, w, 1)
        x_h = spla.spsolve(D_h.tocsc(), small_healthy.qhat.astype(complex))
        x_map = map_to_split(x_h, small_healthy, small_cracked, small_mesh)
        err = np.linalg.norm(cc.x_hat - x_map) / np.linalg.norm(x_map)
        assert err < 1e-4

    def test_healthy_model_rejected(self, small_healthy):
        with pytest.raises(ValueError):
            solve_closed_crack(small_healthy, 10.0)


class TestSurrogate:
    def test_amplitude_scaling_is_bit_identical(self, small_cracked):
        w = 2 * np.pi * 300.0
        base = surrogate_sensor_coefficients(small_cracked, w, [2])[2]
        scaled = surrogate_sensor_coefficients(small_cracked.scaled(10.0),
                                               w, [2])[2]
        assert np.array_equal(base, scaled)

    def test_never_calls_the_newton_solver(self, small_cracked, monkeypatch):
        import hotrkit.transmissibility as tr_mod

        def boom(*args, **kwargs):
            raise AssertionError("surrogate must not run the nonlinear solver")

        monkeypatch.setattr("hotrkit.hbm.solve_mhb", boom)
        assert not hasattr(tr_mod, "solve_mhb")
        recs = tr_surrogate(small_cracked, 2 * np.pi * 300.0, 2)
        assert len(recs) == 12

    def test_first_order_matches_nonlinear(self, small_cracked,
                                           cracked_solution):
        # the fundamental is dominated by the linear response
        dn = records_to_dict(tr_nonlinear(cracked_solution,
                                          small_cracked.sensor_rows, 1))
        ds = records_to_dict(tr_surrogate(small_cracked,
                                          cracked_solution.omega, 1))
        for pair, v in dn.items():
            assert abs(ds[pair] - v) / abs(v) < 0.01

    def test_second_order_tracks_nonlinear(self, small_cracked,
                                           cracked_solution):
        dn = records_to_dict(tr_nonlinear(cracked_solution,
                                          small_cracked.sensor_rows, 2))
        ds = records_to_dict(tr_surrogate(small_cracked,
                                          cracked_solution.omega, 2))
        for pair, v in dn.items():
            assert abs(ds[pair] - v) < 0.02 * max(1.0, abs(v))


def test_ratio_floor_guard():
    eps = np.array([1.0, 1e-20, 0.5])
    with pytest.raises(UndefinedTransmissibilityError) as err:
        ratio_values(eps, [(0, 1), (0, 2)])
    assert (0, 1) in err.value.pairs


def test_rmse_helper_handles_gaps():
    a = {(0, 1): np.array([1.0, np.nan, 2.0])}
    b = {(0, 1): np.array([1.0, 5.0, 2.5])}
    out = rmse_per_pair(a, b)
    assert out[(0, 1)] == pytest.approx(np.sqrt(0.25 / 2))

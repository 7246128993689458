"""Higher-order transmissibility between sensors, exact and surrogate routes.

The nonlinear route takes a converged harmonic-balance solution and forms
the ratio of order-p sensor readings. The surrogate route skips the Newton
solve entirely: it computes the constraint forces that would keep the crack
faces compatible (a linear bordered solve at the driving frequency), uses
their spatial shape as a stand-in for the unknown contact-force harmonics,
and pushes that shape through the order-p dynamic stiffness. Only the shape
matters because the force magnitude cancels in the ratio, which also makes
the surrogate exactly independent of the load amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .hbm import HarmonicSolution, dynamic_stiffness
from .model import SystemModel

DENOMINATOR_FLOOR = 1e-14


class UndefinedTransmissibilityError(ValueError):
    """Denominator harmonic below the detection floor (healthy for p >= 2)."""

    def __init__(self, message, order=None, pairs=None):
        super().__init__(message)
        self.order = order
        self.pairs = pairs or []


@dataclass(frozen=True)
class TransmissibilityRecord:
    """One complex response ratio between a sensor pair at one frequency."""

    order: int
    pair: tuple[int, int]
    omega: float
    value: complex
    method: str                  # "nonlinear" or "surrogate"


@dataclass
class ClosedCrackSolve:
    """Constraint forces holding the crack compatible under the given load.

    lambda_hat solves the bordered system [[D, B], [B^T, 0]] [x; lam] =
    [q; 0]; B is the signed face incidence. The block of the inverse that
    maps loads to constraint forces is applied, never materialized.
    """

    omega: float
    lambda_hat: np.ndarray
    x_hat: np.ndarray
    compatibility_residual: float
    incidence: np.ndarray


def ordered_pairs(n_sensors: int) -> list[tuple[int, int]]:
    """All ordered sensor pairs (m, n), m != n."""
    return [(m, n) for m in range(n_sensors) for n in range(n_sensors) if m != n]


def ratio_values(eps: np.ndarray, pairs, floor: float = DENOMINATOR_FLOOR):
    """Pairwise ratios eps[m]/eps[n] with an undefined-denominator guard.

    The floor is relative to the largest sensor magnitude of this order; a
    zero maximum (no response at all) is undefined for every pair.
    """
    eps = np.asarray(eps)
    mx = float(np.max(np.abs(eps))) if eps.size else 0.0
    bad = []
    vals = {}
    for m, n in pairs:
        den = eps[n]
        if mx == 0.0 or abs(den) < floor * mx:
            bad.append((m, n))
            continue
        vals[(m, n)] = complex(eps[m] / den)
    if bad:
        raise UndefinedTransmissibilityError(
            f"transmissibility undefined for pairs {bad} "
            f"(denominator below {floor:g} of peak sensor magnitude)",
            pairs=bad,
        )
    return vals


def tr_nonlinear(sol: HarmonicSolution, sensor_rows: np.ndarray, order: int,
                 pairs=None) -> list[TransmissibilityRecord]:
    """Order-p transmissibility from a converged harmonic solution."""
    if not sol.converged:
        raise ValueError("solution did not converge")
    if not 1 <= order <= sol.h:
        raise ValueError(f"order {order} outside the solved range 1..{sol.h}")
    if pairs is None:
        pairs = ordered_pairs(sensor_rows.shape[0])
    eps = sensor_rows @ sol.coeffs[order]
    try:
        vals = ratio_values(eps, pairs)
    except UndefinedTransmissibilityError as exc:
        exc.order = order
        raise
    return [
        TransmissibilityRecord(order, pq, sol.omega, vals[pq], "nonlinear")
        for pq in pairs
    ]


def solve_closed_crack(model: SystemModel, omega: float,
                       qhat: np.ndarray | None = None) -> ClosedCrackSolve:
    """Constraint forces of the compatibility-enforced (pristine) response.

    Solves the saddle system on the fundamental-harmonic dynamic stiffness;
    at omega = 0 this is the static limit. qhat defaults to the model's
    load coefficient; the result is exactly linear in it.
    """
    if not model.contact_pairs:
        raise ValueError("closed-crack solve needs a cracked model")
    if omega < 0:
        raise ValueError("omega must be non-negative")
    q = model.qhat if qhat is None else np.asarray(qhat)
    B = model.incidence()
    nc = B.shape[1]
    n = model.n
    if omega == 0:
        D = model.K
        dtype = float if not np.iscomplexobj(q) else complex
    else:
        D = dynamic_stiffness(model, omega, 1)
        dtype = complex
    rhs = np.concatenate([q.astype(dtype), np.zeros(nc, dtype=dtype)])
    if sp.issparse(D):
        Z = sp.bmat([[D, sp.csc_matrix(B)], [sp.csc_matrix(B.T), None]],
                    format="csc", dtype=dtype)
        sol = spla.spsolve(Z, rhs)
    else:
        Z = np.zeros((n + nc, n + nc), dtype=dtype)
        Z[:n, :n] = np.asarray(D, dtype=dtype)
        Z[:n, n:] = B
        Z[n:, :n] = B.T
        sol = np.linalg.solve(Z, rhs)
    x = sol[:n]
    lam = sol[n:]
    compat = float(np.linalg.norm(B.T @ x) / max(np.linalg.norm(x), 1e-300))
    return ClosedCrackSolve(
        omega=omega, lambda_hat=lam, x_hat=x,
        compatibility_residual=compat, incidence=B,
    )


def surrogate_sensor_coefficients(model: SystemModel, omega: float,
                                  orders) -> dict[int, np.ndarray]:
    """Sensor readings of the surrogate response shape for each order.

    Uses the unit spatial load pattern, so scaling the physical amplitude
    cannot change anything downstream, bit for bit. One bordered solve per
    frequency, then one linear solve per order; no iteration anywhere.
    """
    closed = solve_closed_crack(model, omega,
                                qhat=np.asarray(model.force_pattern,
                                                dtype=complex))
    f_shape = closed.incidence @ closed.lambda_hat
    out = {}
    for p in orders:
        Dp = dynamic_stiffness(model, omega, p)
        if sp.issparse(Dp):
            y = spla.spsolve(Dp.tocsc(), f_shape)
        else:
            y = np.linalg.solve(np.asarray(Dp, dtype=complex), f_shape)
        out[int(p)] = model.sensor_rows @ y
    return out


def tr_surrogate(model: SystemModel, omega: float, order: int = 2,
                 pairs=None) -> list[TransmissibilityRecord]:
    """Closed-crack surrogate of the order-p transmissibility records."""
    if pairs is None:
        pairs = ordered_pairs(model.sensor_rows.shape[0])
    eps = surrogate_sensor_coefficients(model, omega, [order])[order]
    try:
        vals = ratio_values(eps, pairs)
    except UndefinedTransmissibilityError as exc:
        exc.order = order
        raise
    return [
        TransmissibilityRecord(order, pq, omega, vals[pq], "surrogate")
        for pq in pairs
    ]


def records_to_dict(records) -> dict[tuple[int, int], complex]:
    return {r.pair: r.value for r in records}


def rmse_per_pair(curves_a: dict, curves_b: dict) -> dict:
    """Root-mean-square complex mismatch for each shared pair curve.

    Inputs map pair -> array over the frequency grid; entries may contain
    NaN where one route failed, which drops those grid points.
    """
    out = {}
    for pair in curves_a:
        a = np.asarray(curves_a[pair])
        b = np.asarray(curves_b[pair])
        mask = np.isfinite(a) & np.isfinite(b)
        if not np.any(mask):
            out[pair] = float("nan")
            continue
        out[pair] = float(np.sqrt(np.mean(np.abs(a[mask] - b[mask]) ** 2)))
    return out

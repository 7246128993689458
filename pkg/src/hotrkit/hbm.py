"""Multi-harmonic balance solver with alternating frequency-time contact forces.

The steady state x(t) = x0 + sum_p (xp e^{ip w t} + conj) is found by
balancing each harmonic of M x'' + C x' + K x + f(x) = q(t). The contact
force coefficients come from sampling the unilateral pair law over one
period and transforming back (AFT). Newton runs on the condensed unknowns
a_p = B^T xp (relative pair coordinates), which is exactly equivalent to
the full block system because the dynamic-stiffness blocks are decoupled
and the nonlinearity only sees the pair-relative motion. Full solutions
are recovered through the cached per-block factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import ContactPair, SystemModel


class ConvergenceError(RuntimeError):
    """Newton failed; carries the frequency and the last relative residual."""

    def __init__(self, message, omega=None, residual=None):
        super().__init__(message)
        self.omega = omega
        self.residual = residual


@dataclass(frozen=True)
class AftConfig:
    """Sampling setup for the alternating frequency-time evaluation."""

    h: int = 5                 # retained harmonics
    n_samples: int = 1024      # time samples per period, power of two

    def __post_init__(self):
        if self.h < 1:
            raise ValueError("at least one harmonic is required")
        n = self.n_samples
        if n < 4 or (n & (n - 1)) != 0:
            raise ValueError("n_samples must be a power of two")
        if n < 4 * self.h + 4:
            raise ValueError(
                f"n_samples={n} is below the anti-aliasing margin "
                f"{4 * self.h + 4} for h={self.h}"
            )


@dataclass
class HarmonicSolution:
    """Fourier coefficients of one steady state at excitation frequency omega."""

    omega: float
    h: int
    coeffs: np.ndarray          # (h+1, n) complex; row 0 is real-valued
    converged: bool
    residual_norm: float        # |R| / |qhat| on the full system
    iterations: int

    def sensor_coefficients(self, sensor_rows: np.ndarray) -> np.ndarray:
        """(h+1, n_sensors) harmonic coefficients of the gauge readings."""
        return self.coeffs @ sensor_rows.T

    def reconstruct(self, rows: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Time signal row_values(t) for evaluation rows (m, n)."""
        c = self.coeffs @ rows.T                      # (h+1, m)
        out = np.full((t.size, c.shape[1]), c[0].real)
        for p in range(1, self.h + 1):
            out += 2.0 * np.real(
                np.exp(1j * p * self.omega * t)[:, None] * c[p][None, :]
            )
        return out


@dataclass
class SweepFailure:
    """Marker for a frequency the sweep could not converge."""

    omega: float
    message: str
    residual: float | None = None


def dynamic_stiffness(model: SystemModel, omega: float, p: int):
    """Complex block D_p = -(p w)^2 M + i p w C + K."""
    if p < 0:
        raise ValueError("harmonic order must be non-negative")
    if p == 0:
        return model.K
    pw = p * omega
    return (-(pw**2)) * model.M + (1j * pw) * model.C + model.K


def _factorize(D):
    if sp.issparse(D):
        lu = spla.splu(D.tocsc())
        return lu.solve
    lu, piv = sla.lu_factor(np.asarray(D))
    return lambda rhs: sla.lu_solve((lu, piv), rhs)


def _pair_arrays(pairs: list[ContactPair]):
    kps = np.array([p.k_p for p in pairs])
    gaps = np.array([p.gap for p in pairs])
    return kps, gaps


def relative_force_coefficients(a_coeffs: np.ndarray, pairs: list[ContactPair],
                                cfg: AftConfig, want_gradient: bool = False):
    """AFT on pair-relative coordinates.

    a_coeffs has shape (h+1, n_pairs); row 0 must be real. Returns the force
    coefficients F of the same shape and, if requested, the spectrum of the
    pointwise contact-state stiffness up to order 2h (used for Jacobians).
    The tie at x_rel == gap counts as closed.
    """
    h, n = cfg.h, cfg.n_samples
    if a_coeffs.shape[0] != h + 1:
        raise ValueError("coefficient rows must match cfg.h + 1")
    kps, gaps = _pair_arrays(pairs)
    spec = np.zeros((n // 2 + 1, a_coeffs.shape[1]), dtype=complex)
    spec[0] = a_coeffs[0].real * n
    spec[1:h + 1] = a_coeffs[1:] * n
    x = np.fft.irfft(spec, n=n, axis=0)
    closed = x >= gaps
    f = np.where(closed, kps * x, 0.0)
    F = np.fft.rfft(f, axis=0)[:h + 1] / n
    F[0] = F[0].real
    if not want_gradient:
        return F, None
    g = np.where(closed, kps, 0.0)
    Ghat = np.fft.rfft(g, axis=0)[:2 * h + 1] / n
    return F, Ghat


def aft_coefficients(x_rel_coeffs: np.ndarray, pairs: list[ContactPair],
                     cfg: AftConfig, omega: float, n_dofs: int) -> np.ndarray:
    """Contact-force harmonics scattered to the full DoF vector.

    x_rel_coeffs are the per-pair relative-displacement harmonics,
    shape (h+1, n_pairs). The result has shape (h+1, n_dofs) with +F on
    each pair's plus DoF and -F on its minus DoF. The coefficients do not
    depend on omega (the law is memoryless); it is accepted for signature
    symmetry with the rest of the solver.
    """
    del omega
    F, _ = relative_force_coefficients(x_rel_coeffs, pairs, cfg)
    out = np.zeros((cfg.h + 1, n_dofs), dtype=complex)
    for k, p in enumerate(pairs):
        out[:, p.dof_plus] += F[:, k]
        if p.dof_minus is not None:
            out[:, p.dof_minus] -= F[:, k]
    return out


def _real_form(Z: np.ndarray) -> np.ndarray:
    """Complex matrix action as a real block matrix [[Re, -Im], [Im, Re]]."""
    return np.block([[Z.real, -Z.imag], [Z.imag, Z.real]])


def _df_blocks(Ghat: np.ndarray, h: int):
    """Per-pair derivative blocks of the AFT force in real packing.

    Returns a function block(p, q) giving the (rows of F_p) x (cols of A_q)
    real derivative, diagonal over pairs.
    """
    def gh(r):
        return Ghat[r] if r >= 0 else np.conj(Ghat[-r])

    def block(p, q):
        if p == 0 and q == 0:
            return np.diag(Ghat[0].real)
        if p == 0:
            g = Ghat[q]
            return np.hstack([np.diag(2 * g.real), np.diag(2 * g.imag)])
        if q == 0:
            g = Ghat[p]
            return np.vstack([np.diag(g.real), np.diag(g.imag)])
        P = gh(p - q)
        Q = gh(p + q)
        return np.block([
            [np.diag((P + Q).real), np.diag((Q - P).imag)],
            [np.diag((P + Q).imag), np.diag((P - Q).real)],
        ])

    return block


def _pack(A: np.ndarray, h: int) -> np.ndarray:
    parts = [A[0].real]
    for p in range(1, h + 1):
        parts.append(A[p].real)
        parts.append(A[p].imag)
    return np.concatenate(parts)


def _unpack(z: np.ndarray, h: int, m: int) -> np.ndarray:
    A = np.zeros((h + 1, m), dtype=complex)
    A[0] = z[:m]
    for p in range(1, h + 1):
        off = m * (2 * p - 1)
        A[p] = z[off:off + m] + 1j * z[off + m:off + 2 * m]
    return A


def _stacked_norm(C: np.ndarray) -> float:
    """Norm over harmonic blocks: DC once, oscillatory blocks twice."""
    s = np.sum(np.abs(C[0]) ** 2)
    if C.shape[0] > 1:
        s += 2.0 * np.sum(np.abs(C[1:]) ** 2)
    return float(np.sqrt(s))


def residual(model: SystemModel, sol: HarmonicSolution, cfg: AftConfig) -> float:
    """Independent re-evaluation of |R| / |qhat| for a harmonic solution."""
    h = cfg.h
    A = np.array([
        [sol.coeffs[p, pr.dof_plus]
         - (sol.coeffs[p, pr.dof_minus] if pr.dof_minus is not None else 0.0)
         for pr in model.contact_pairs]
        for p in range(h + 1)
    ]) if model.contact_pairs else np.zeros((h + 1, 0), dtype=complex)
    fhat = aft_coefficients(A, model.contact_pairs, cfg, sol.omega, model.n)
    qhat = model.qhat.astype(complex)
    R = np.zeros_like(sol.coeffs)
    for p in range(h + 1):
        Dp = dynamic_stiffness(model, sol.omega, p)
        R[p] = Dp @ sol.coeffs[p] + fhat[p]
        if p == 1:
            R[p] -= qhat
    return _stacked_norm(R) / _stacked_norm(qhat[None, :])


def solve_mhb(model: SystemModel, omega: float, cfg: AftConfig = AftConfig(),
              initial: HarmonicSolution | None = None, tol: float = 1e-9,
              max_iter: int = 50, max_halvings: int = 10) -> HarmonicSolution:
    """Newton solution of the harmonic-balance equations at one frequency.

    The initial guess is the linear response (contact force zero) unless
    `initial` is given. Convergence is measured on the full residual
    |D x + f(x) - q| / |q|. Raises ConvergenceError on failure.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    h = cfg.h
    n = model.n
    qhat = model.qhat.astype(complex)
    q_norm = _stacked_norm(qhat[None, :])

    solves = [_factorize(dynamic_stiffness(model, omega, p)) for p in range(h + 1)]
    xlin1 = solves[1](qhat)

    pairs = model.contact_pairs
    coeffs = np.zeros((h + 1, n), dtype=complex)
    if not pairs:
        coeffs[1] = xlin1
        sol = HarmonicSolution(omega, h, coeffs, True, 0.0, 1)
        sol.residual_norm = residual(model, sol, cfg)
        return sol

    m = len(pairs)
    B = model.incidence()
    W = [np.asarray(solves[p](B.astype(complex) if p > 0 else B)) for p in range(h + 1)]
    G = [B.T @ W[p] for p in range(h + 1)]
    G_real = [G[0].real] + [_real_form(G[p]) for p in range(1, h + 1)]

    b = np.zeros((h + 1, m), dtype=complex)
    b[1] = B.T @ xlin1

    if initial is not None:
        if initial.h != h:
            raise ValueError("initial guess must carry the same harmonic count")
        A = np.array([[initial.coeffs[p, pr.dof_plus]
                       - (initial.coeffs[p, pr.dof_minus]
                          if pr.dof_minus is not None else 0.0)
                       for pr in pairs] for p in range(h + 1)])
    else:
        A = b.copy()

    pair_weight = np.array([2.0 if p.dof_minus is not None else 1.0 for p in pairs])

    def eval_state(A_):
        F_, Ghat_ = relative_force_coefficients(A_, pairs, cfg, want_gradient=True)
        r_ = A_.copy()
        for p in range(h + 1):
            r_[p] += G[p] @ F_[p] - b[p]
        r_[0] = r_[0].real
        return F_, Ghat_, r_

    def true_residual(A_, F_):
        """|R|/|q| with R = B (F(recovered) - F), evaluated via one extra AFT."""
        A_rec = b - np.stack([G[p] @ F_[p] for p in range(h + 1)])
        A_rec[0] = A_rec[0].real
        F_rec, _ = relative_force_coefficients(A_rec, pairs, cfg)
        dF = F_rec - F_
        s = np.sum(pair_weight * np.abs(dF[0]) ** 2)
        s += 2.0 * np.sum(pair_weight * np.abs(dF[1:]) ** 2)
        return float(np.sqrt(s)) / q_norm

    F, Ghat, r = eval_state(A)
    res = true_residual(A, F)
    it = 0
    while res > tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"no convergence after {max_iter} iterations at "
                f"omega={omega:.6g} (residual {res:.3e})",
                omega=omega, residual=res,
            )
        blk = _df_blocks(Ghat, h)
        dim = m * (2 * h + 1)
        J = np.eye(dim)

        def sl(p):
            return slice(0, m) if p == 0 else slice(m * (2 * p - 1), m * (2 * p + 1))

        for p in range(h + 1):
            for q in range(h + 1):
                J[sl(p), sl(q)] += G_real[p] @ blk(p, q)

        r_packed = _pack(r, h)
        try:
            dz = np.linalg.solve(J, -r_packed)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(
                f"singular Jacobian at omega={omega:.6g}",
                omega=omega, residual=res,
            ) from exc

        # Full steps by default: the residual is legitimately non-monotone
        # while the contact-state pattern reshuffles, and truncated steps
        # keep the active set from settling. Halve only on a blow-up.
        step = 1.0
        r_norm = np.linalg.norm(r_packed)
        z0 = _pack(A, h)
        for _ in range(max_halvings + 1):
            A_try = _unpack(z0 + step * dz, h, m)
            F_try, Ghat_try, r_try = eval_state(A_try)
            if np.linalg.norm(_pack(r_try, h)) <= 1e2 * max(r_norm, 1e-30) \
                    or step <= 2.0**-max_halvings:
                break
            step *= 0.5
        A, F, Ghat, r = A_try, F_try, Ghat_try, r_try
        res = true_residual(A, F)
        it += 1

    for p in range(h + 1):
        coeffs[p] = -(W[p] @ F[p])
    coeffs[1] += xlin1
    coeffs[0] = coeffs[0].real
    sol = HarmonicSolution(omega, h, coeffs, True, res, max(it, 1))
    return sol


def sweep(model: SystemModel, omega_list, cfg: AftConfig = AftConfig(),
          tol: float = 1e-9, max_bisect: int = 4):
    """Sequential continuation over ascending frequencies.

    Each frequency starts from the previous converged solution. A failure
    triggers bisection continuation from the last good frequency; if the
    target still fails it is recorded as a SweepFailure and the sweep
    continues from the last good state.
    """
    omegas = list(omega_list)
    if any(b <= a for a, b in zip(omegas, omegas[1:])):
        raise ValueError("frequencies must be strictly ascending")
    results = []
    last = None
    last_omega = None
    for w in omegas:
        try:
            sol = solve_mhb(model, w, cfg, initial=last, tol=tol)
        except ConvergenceError as exc:
            sol = None
            if last is not None and max_bisect > 0:
                sol = _bisect_continue(model, last, last_omega, w, cfg, tol,
                                       max_bisect)
            if sol is None:
                results.append(SweepFailure(w, str(exc), exc.residual))
                continue
        results.append(sol)
        last = sol
        last_omega = w
    return results


def _bisect_continue(model, start, w_from, w_to, cfg, tol, depth):
    """Walk the solution from w_from to w_to by recursive interval halving."""
    current, w_cur = start, w_from
    stack = [w_to]
    levels = 0
    while stack:
        w_mid = stack[-1]
        try:
            current = solve_mhb(model, w_mid, cfg, initial=current, tol=tol)
            w_cur = w_mid
            stack.pop()
        except ConvergenceError:
            levels += 1
            if levels > depth:
                return None
            stack.append(0.5 * (w_cur + w_mid))
    return current


def residual_and_jacobian(model: SystemModel, omega: float, cfg: AftConfig,
                          z: np.ndarray):
    """Full-space residual and analytic Jacobian in real packing.

    z stacks [x0, Re x1, Im x1, ...] over all n DoFs, length n*(2h+1).
    Intended for small models (dense) and derivative verification.
    """
    h, n = cfg.h, model.n
    X = _unpack(z, h, n)
    pairs = model.contact_pairs
    m = len(pairs)
    qhat = model.qhat.astype(complex)

    if m:
        A = np.array([[X[p, pr.dof_plus]
                       - (X[p, pr.dof_minus] if pr.dof_minus is not None else 0.0)
                       for pr in pairs] for p in range(h + 1)])
        A[0] = A[0].real
        F, Ghat = relative_force_coefficients(A, pairs, cfg, want_gradient=True)
    else:
        F = np.zeros((h + 1, 0), dtype=complex)
        Ghat = np.zeros((2 * h + 1, 0), dtype=complex)

    R = np.zeros((h + 1, n), dtype=complex)
    D_mats = []
    for p in range(h + 1):
        Dp = dynamic_stiffness(model, omega, p)
        Dp = Dp.toarray() if sp.issparse(Dp) else np.asarray(Dp, dtype=complex)
        D_mats.append(Dp)
        R[p] = Dp @ X[p]
        if p == 1:
            R[p] -= qhat
    for k, pr in enumerate(pairs):
        R[:, pr.dof_plus] += F[:, k]
        if pr.dof_minus is not None:
            R[:, pr.dof_minus] -= F[:, k]
    R[0] = R[0].real

    dim = n * (2 * h + 1)
    J = np.zeros((dim, dim))

    def sl(p):
        return slice(0, n) if p == 0 else slice(n * (2 * p - 1), n * (2 * p + 1))

    for p in range(h + 1):
        J[sl(p), sl(p)] = D_mats[p].real if p == 0 else _real_form(D_mats[p])

    if m:
        B = model.incidence()
        B2 = np.block([[B, np.zeros_like(B)], [np.zeros_like(B), B]])
        blk = _df_blocks(Ghat, h)
        for p in range(h + 1):
            Bl = B if p == 0 else B2
            for q in range(h + 1):
                Br = B.T if q == 0 else B2.T
                J[sl(p), sl(q)] += Bl @ blk(p, q) @ Br

    return _pack(R, h), J

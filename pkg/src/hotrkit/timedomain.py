"""Implicit time integration, harmonic extraction, and measurement noise.

The integrator is the generalized-alpha scheme with spectral radius control;
the contact force is evaluated implicitly at the alpha_f-interpolated state,
with an active-set (semi-smooth) Newton per step. Contact-state changes
enter the step matrix through a low-rank Woodbury update of the cached
no-contact factorization, so only one factorization per run is needed.

Harmonics are pulled out of steady windows by recursive correlation:
order p correlates the signal minus the already-extracted orders with
exp(-i p w t) over an integer number of periods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import SystemModel


class IntegrationError(RuntimeError):
    pass


class SteadyStateError(IntegrationError):
    """Raised when the steady criterion is not met within the time budget."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Generalized-alpha setup.

    rho_inf controls high-frequency dissipation (1 = trapezoidal limit).
    The step is tied to the excitation period: steps_per_period samples per
    cycle, so extraction windows align exactly. Steady state is declared
    when the per-period harmonic coefficients of the tracked channels
    change by less than steady_tol (relative) for steady_periods periods
    in a row; record_periods further periods are then returned.
    """

    rho_inf: float = 0.7
    steps_per_period: int = 512
    max_periods: int = 2000
    steady_tol: float = 1e-5
    steady_periods: int = 3
    record_periods: int = 8
    steady_harmonics: int = 3

    def __post_init__(self):
        if not 0.0 <= self.rho_inf <= 1.0:
            raise ValueError("rho_inf must lie in [0, 1]")
        if self.steps_per_period < 64:
            raise ValueError("need at least 64 steps per period")

    @property
    def alpha_m(self) -> float:
        return (2.0 * self.rho_inf - 1.0) / (self.rho_inf + 1.0)

    @property
    def alpha_f(self) -> float:
        return self.rho_inf / (self.rho_inf + 1.0)

    @property
    def beta(self) -> float:
        return 0.25 * (1.0 - self.alpha_m + self.alpha_f) ** 2

    @property
    def gamma(self) -> float:
        return 0.5 - self.alpha_m + self.alpha_f


@dataclass
class TimeHistory:
    """Recorded steady window (or full run) of one integration."""

    t: np.ndarray                 # sample times [s]
    strains: np.ndarray           # (nt, n_sensors) gauge readings
    dofs: np.ndarray | None       # (nt, n_recorded) optional DoF histories
    omega: float
    dt: float
    periods_to_steady: int | None


@dataclass
class NoisySignal:
    """Clean signal, additive white noise realization, and their sum."""

    clean: np.ndarray
    noise: np.ndarray
    level_percent: float
    seed: int

    @property
    def noisy(self) -> np.ndarray:
        return self.clean + self.noise

    def realized_level(self) -> float:
        """Measured RMS noise-to-signal ratio in percent."""
        return 100.0 * np.sqrt(np.sum(self.noise**2) / np.sum(self.clean**2))


def _solve_factory(S0):
    if sp.issparse(S0):
        lu = spla.splu(S0.tocsc())
        return lu.solve
    lu, piv = sla.lu_factor(np.asarray(S0))
    return lambda rhs: sla.lu_solve((lu, piv), rhs)


def integrate(model: SystemModel, omega: float, cfg: IntegratorConfig,
              amplitude: float | None = None, record_dofs=None,
              x0: np.ndarray | None = None, v0: np.ndarray | None = None,
              fixed_periods: int | None = None) -> TimeHistory:
    """Time-march the model under its single-tone load at frequency omega.

    Starts from rest (or the supplied initial state), runs until the steady
    criterion triggers, then records cfg.record_periods further periods.
    With fixed_periods set, exactly that many periods are run and the whole
    history is returned (no steady detection). `amplitude` overrides the
    model's calibrated peak force scale.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    n = model.n
    if n == 1:
        return _integrate_scalar(model, omega, cfg, amplitude, x0, v0,
                                 fixed_periods)
    return _integrate_vector(model, omega, cfg, amplitude, record_dofs,
                             x0, v0, fixed_periods)


def _force_parts(model, amplitude):
    peak = model.force_peak if amplitude is None else amplitude
    qh = 0.5 * peak * np.asarray(model.force_pattern, dtype=complex)
    return 2.0 * qh.real, -2.0 * qh.imag   # q(t) = qc cos(wt) + qs sin(wt)


def _integrate_vector(model, omega, cfg, amplitude, record_dofs, x0, v0,
                      fixed_periods):
    n = model.n
    M, C, K = model.M, model.C, model.K
    qc, qs = _force_parts(model, amplitude)
    q_scale = max(np.linalg.norm(qc) + np.linalg.norm(qs), 1e-30)

    T = 2.0 * np.pi / omega
    npp = cfg.steps_per_period
    dt = T / npp
    am, af, beta, gamma = cfg.alpha_m, cfg.alpha_f, cfg.beta, cfg.gamma
    c_a = (1.0 - am) / (beta * dt * dt)
    c_v = (1.0 - af) * gamma / (beta * dt)
    c_k = 1.0 - af
    k1 = 1.0 / (beta * dt * dt)
    k2 = 1.0 / (beta * dt)
    k3 = (0.5 - beta) / beta

    S0 = c_a * M + c_v * C + c_k * K
    solve0 = _solve_factory(S0)

    pairs = model.contact_pairs
    m = len(pairs)
    if m:
        B = model.incidence()
        W = np.asarray(solve0(B))
        BtW = B.T @ W
        kps = np.array([p.k_p for p in pairs])
        gaps = np.array([p.gap for p in pairs])
        plus = np.array([p.dof_plus for p in pairs])
        minus = np.array([p.dof_minus if p.dof_minus is not None else -1
                          for p in pairs])
        has_minus = minus >= 0

        def x_rel(x):
            xr = x[plus].copy()
            xr[has_minus] -= x[minus[has_minus]]
            return xr

        def contact(x):
            xr = x_rel(x)
            closed = xr >= gaps
            phi = np.where(closed, kps * xr, 0.0)
            f = np.zeros(n)
            np.add.at(f, plus, phi)
            np.subtract.at(f, minus[has_minus], phi[has_minus])
            return f, closed

        def solve_tangent(r, closed):
            y = solve0(r)
            idx = np.nonzero(closed)[0]
            if idx.size == 0:
                return y
            cap = np.diag(1.0 / (c_k * kps[idx])) + BtW[np.ix_(idx, idx)]
            t = np.linalg.solve(cap, W[:, idx].T @ r)
            return y - W[:, idx] @ t
    else:
        def contact(x):
            return 0.0, None

        def solve_tangent(r, closed):
            return solve0(r)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    v = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
    f0, _ = contact(x)
    rhs0 = qc - (C @ v) - (K @ x) - f0
    if sp.issparse(M):
        a = spla.spsolve(M.tocsc(), rhs0)
    else:
        a = np.linalg.solve(np.asarray(M), rhs0)

    S = model.sensor_rows
    ns = S.shape[0]
    rec = np.array(record_dofs, dtype=int) if record_dofs is not None else None
    max_p = fixed_periods if fixed_periods is not None else cfg.max_periods
    total_steps = max_p * npp
    strains = np.empty((total_steps + 1, ns))
    dof_hist = np.empty((total_steps + 1, rec.size)) if rec is not None else None
    strains[0] = S @ x
    if rec is not None:
        dof_hist[0] = x[rec]

    kern = np.exp(
        -1j * np.outer(np.arange(1, cfg.steady_harmonics + 1),
                       omega * dt * np.arange(npp))
    )
    prev_coeffs = None
    steady_count = 0
    steady_at = None
    steps_after = None

    step = 0
    for period in range(max_p):
        for _ in range(npp):
            t_n = step * dt
            t_mid = t_n + (1.0 - af) * dt
            q_mid = qc * np.cos(omega * t_mid) + qs * np.sin(omega * t_mid)
            x_new = x.copy()
            converged = False
            for _ in range(30):
                a_new = k1 * (x_new - x) - k2 * v - k3 * a
                v_new = v + dt * ((1.0 - gamma) * a + gamma * a_new)
                a_mid = (1.0 - am) * a_new + am * a
                v_mid = (1.0 - af) * v_new + af * v
                x_mid = (1.0 - af) * x_new + af * x
                f_mid, closed = contact(x_mid)
                res = (M @ a_mid) + (C @ v_mid) + (K @ x_mid) + f_mid - q_mid
                scale = max(q_scale, np.linalg.norm(M @ a_mid)
                            + np.linalg.norm(K @ x_mid)
                            + np.linalg.norm(M @ v_mid) / dt, 1e-30)
                if np.linalg.norm(res) <= 1e-10 * scale:
                    converged = True
                    break
                x_new = x_new + solve_tangent(-res, closed)
            if not converged:
                raise IntegrationError(
                    f"inner Newton stalled at t={t_n:.6g}s"
                )
            x, v, a = x_new, v_new, a_new
            step += 1
            strains[step] = S @ x
            if rec is not None:
                dof_hist[step] = x[rec]

        if fixed_periods is not None:
            continue
        seg = strains[step - npp + 1:step + 1]
        coeffs = (kern @ seg) / npp
        if prev_coeffs is not None:
            num = np.linalg.norm(coeffs - prev_coeffs)
            den = max(np.linalg.norm(coeffs), 1e-30)
            if num / den < cfg.steady_tol:
                steady_count += 1
            else:
                steady_count = 0
        prev_coeffs = coeffs
        if steady_at is None and steady_count >= cfg.steady_periods:
            steady_at = period + 1
            steps_after = 0
        if steady_at is not None:
            if steps_after >= cfg.record_periods:
                break
            steps_after += 1

    if fixed_periods is not None:
        nt = step + 1
        return TimeHistory(
            t=dt * np.arange(nt), strains=strains[:nt],
            dofs=dof_hist[:nt] if dof_hist is not None else None,
            omega=omega, dt=dt, periods_to_steady=None,
        )
    if steady_at is None:
        raise SteadyStateError(
            f"steady state not reached within {max_p} periods at "
            f"omega={omega:.6g}"
        )
    nt = cfg.record_periods * npp
    lo = step - nt
    return TimeHistory(
        t=dt * np.arange(lo, step), strains=strains[lo:step],
        dofs=dof_hist[lo:step] if dof_hist is not None else None,
        omega=omega, dt=dt, periods_to_steady=steady_at,
    )


def _integrate_scalar(model, omega, cfg, amplitude, x0, v0, fixed_periods):
    """Tight scalar loop for single-DoF models (plain Python floats)."""
    mass = float(np.asarray(model.M).ravel()[0])
    damp = float(np.asarray(model.C).ravel()[0])
    stif = float(np.asarray(model.K).ravel()[0])
    qc, qs = _force_parts(model, amplitude)
    qc, qs = float(qc[0]), float(qs[0])
    q_scale = max(abs(qc) + abs(qs), 1e-30)

    if model.contact_pairs:
        if len(model.contact_pairs) != 1 or model.contact_pairs[0].dof_minus is not None:
            raise ValueError("scalar path supports one grounded pair only")
        kp = model.contact_pairs[0].k_p
        gap = model.contact_pairs[0].gap
    else:
        kp, gap = 0.0, float("inf")

    T = 2.0 * np.pi / omega
    npp = cfg.steps_per_period
    dt = T / npp
    am, af, beta, gamma = cfg.alpha_m, cfg.alpha_f, cfg.beta, cfg.gamma
    c_a = (1.0 - am) / (beta * dt * dt)
    c_v = (1.0 - af) * gamma / (beta * dt)
    c_k = 1.0 - af
    k1 = 1.0 / (beta * dt * dt)
    k2 = 1.0 / (beta * dt)
    k3 = (0.5 - beta) / beta
    s_open = c_a * mass + c_v * damp + c_k * stif
    s_closed = s_open + c_k * kp

    x = 0.0 if x0 is None else float(np.asarray(x0).ravel()[0])
    v = 0.0 if v0 is None else float(np.asarray(v0).ravel()[0])
    fc0 = kp * x if x >= gap else 0.0
    a = (qc - damp * v - stif * x - fc0) / mass

    from math import cos, sin
    max_p = fixed_periods if fixed_periods is not None else cfg.max_periods
    total = max_p * npp
    hist = np.empty(total + 1)
    hist[0] = x

    kern = np.exp(
        -1j * np.outer(np.arange(1, cfg.steady_harmonics + 1),
                       omega * dt * np.arange(npp))
    )
    prev_coeffs = None
    steady_count = 0
    steady_at = None
    steps_after = None

    step = 0
    for period in range(max_p):
        for _ in range(npp):
            t_mid = (step + (1.0 - af)) * dt
            q_mid = qc * cos(omega * t_mid) + qs * sin(omega * t_mid)
            x_new = x
            ok = False
            for _ in range(30):
                a_new = k1 * (x_new - x) - k2 * v - k3 * a
                v_new = v + dt * ((1.0 - gamma) * a + gamma * a_new)
                a_mid = (1.0 - am) * a_new + am * a
                v_mid = (1.0 - af) * v_new + af * v
                x_mid = (1.0 - af) * x_new + af * x
                closed = x_mid >= gap
                f_mid = kp * x_mid if closed else 0.0
                res = mass * a_mid + damp * v_mid + stif * x_mid + f_mid - q_mid
                scale = max(q_scale, abs(mass * a_mid) + abs(stif * x_mid)
                            + abs(mass * v_mid) / dt, 1e-30)
                if abs(res) <= 1e-12 * scale:
                    ok = True
                    break
                x_new -= res / (s_closed if closed else s_open)
            if not ok:
                raise IntegrationError(f"inner Newton stalled at step {step}")
            x, v, a = x_new, v_new, a_new
            step += 1
            hist[step] = x

        if fixed_periods is not None:
            continue
        seg = hist[step - npp + 1:step + 1]
        coeffs = (kern @ seg) / npp
        if prev_coeffs is not None:
            num = np.linalg.norm(coeffs - prev_coeffs)
            den = max(np.linalg.norm(coeffs), 1e-30)
            steady_count = steady_count + 1 if num / den < cfg.steady_tol else 0
        prev_coeffs = coeffs
        if steady_at is None and steady_count >= cfg.steady_periods:
            steady_at = period + 1
            steps_after = 0
        if steady_at is not None:
            if steps_after >= cfg.record_periods:
                break
            steps_after += 1

    srow = float(np.asarray(model.sensor_rows).ravel()[0])
    if fixed_periods is not None:
        nt = step + 1
        return TimeHistory(dt * np.arange(nt), srow * hist[:nt, None], None,
                           omega, dt, None)
    if steady_at is None:
        raise SteadyStateError(
            f"steady state not reached within {max_p} periods"
        )
    nt = cfg.record_periods * npp
    lo = step - nt
    return TimeHistory(dt * np.arange(lo, step), srow * hist[lo:step, None],
                       None, omega, dt, steady_at)


def extract_harmonics(signal: np.ndarray, omega: float, dt: float, h: int,
                      t0: float = 0.0) -> np.ndarray:
    """Recursive-correlation harmonic extraction over an integer window.

    signal is (nt,) or (nt, channels) sampled at spacing dt starting at t0;
    the window nt*dt must span a whole number of periods of omega. Orders
    are extracted in ascending sequence, each correlated at p*omega after
    subtracting the lower-order reconstructions. Entry 0 of the result is
    the window mean.
    """
    sig = np.atleast_2d(np.asarray(signal, dtype=float).T).T  # (nt, ch)
    nt = sig.shape[0]
    T = 2.0 * np.pi / omega
    span = nt * dt
    m_per = span / T
    if span < T * (1.0 - 1e-9):
        raise ValueError("window is shorter than one period")
    if abs(m_per - round(m_per)) > 1e-6 * max(1.0, m_per):
        raise ValueError(
            f"window of {m_per:.6f} periods is not an integer period count"
        )
    t = t0 + dt * np.arange(nt)
    out = np.zeros((h + 1, sig.shape[1]), dtype=complex)
    out[0] = sig.mean(axis=0)
    resid = sig.astype(float).copy()
    for p in range(1, h + 1):
        kern = np.exp(-1j * p * omega * t)
        cp = (resid * kern[:, None]).mean(axis=0)
        out[p] = cp
        resid -= 2.0 * np.real(cp[None, :] * np.exp(1j * p * omega * t)[:, None])
    if np.asarray(signal).ndim == 1:
        return out[:, 0]
    return out


def add_noise(signal: np.ndarray, level_percent: float, seed: int) -> NoisySignal:
    """Additive zero-mean white Gaussian noise at a prescribed RMS ratio.

    The noise standard deviation is level/100 times the clean RMS, drawn
    independently for every channel; the realized ratio therefore
    fluctuates by O(1/sqrt(2 N)) around the request. Deterministic per seed.
    """
    if level_percent < 0:
        raise ValueError("noise level must be non-negative")
    sig = np.asarray(signal, dtype=float)
    if level_percent == 0:
        return NoisySignal(sig, np.zeros_like(sig), 0.0, seed)
    if sig.ndim == 1:
        rms = np.sqrt(np.mean(sig**2))
        if rms == 0:
            raise ValueError("cannot scale noise against a zero-power signal")
        sigma = level_percent / 100.0 * rms
    else:
        rms = np.sqrt(np.mean(sig**2, axis=0))
        if np.any(rms == 0):
            raise ValueError("cannot scale noise against a zero-power channel")
        sigma = level_percent / 100.0 * rms[None, :]
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(sig.shape) * sigma
    return NoisySignal(sig, noise, level_percent, seed)

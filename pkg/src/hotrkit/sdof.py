"""Bilinear single-DoF oscillator: the minimal model of a breathing crack.

A mass-spring-damper with an extra unilateral spring that engages whenever
the displacement reaches the gap delta. Driven by a unit sine, the healthy
configuration (k0 = 0) responds at the forcing frequency only; with the
unilateral spring active the response spectrum grows integer harmonics.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, pi

import numpy as np

from .model import ContactPair, SystemModel
from .timedomain import IntegratorConfig, TimeHistory, integrate


@dataclass(frozen=True)
class SdofParams:
    """Oscillator parameters; k0 is the unilateral spring, delta its gap."""

    m: float = 1.0
    c: float = 0.02
    k: float = 1.0
    k0: float = 0.0
    delta: float = 0.0
    omega_f: float = 0.6

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if self.k < 0 or self.k0 < 0 or self.c < 0:
            raise ValueError("stiffness and damping must be non-negative")


HEALTHY = SdofParams()
CRACKED = SdofParams(k=0.9, k0=0.1, delta=0.0)


def build_model(params: SdofParams, amplitude: float = 1.0) -> SystemModel:
    """Wrap the oscillator as a 1-DoF system driven by amplitude*sin(w t)."""
    pairs = []
    if params.k0 > 0:
        pairs = [ContactPair(0, None, k_p=params.k0, gap=params.delta)]
    return SystemModel(
        M=np.array([[params.m]]),
        C=np.array([[params.c]]),
        K=np.array([[params.k]]),
        contact_pairs=pairs,
        force_pattern=np.array([-1j]),   # sine drive
        force_peak=amplitude,
        sensor_rows=np.array([[1.0]]),
    )


def simulate_sdof(params: SdofParams, t_end: float | None = None,
                  dt: float | None = None, amplitude: float = 1.0,
                  rho_inf: float = 0.7, steady_tol: float = 1e-6,
                  record_periods: int = 4) -> TimeHistory:
    """Steady displacement window of the oscillator from zero initial state.

    dt must resolve the forcing with at least 64 steps per period (default
    T/512). Integration runs until two consecutive periods agree in their
    harmonic content to steady_tol, then `record_periods` periods are
    returned. Raises if no steady state is reached by t_end.
    """
    T = 2.0 * pi / params.omega_f
    if dt is None:
        spp = 512
    else:
        spp = int(round(T / dt))
        if spp < 64:
            raise ValueError("dt must give at least 64 steps per period")
    max_periods = 4000 if t_end is None else max(ceil(t_end / T), record_periods + 4)
    cfg = IntegratorConfig(
        rho_inf=rho_inf,
        steps_per_period=spp,
        max_periods=max_periods,
        steady_tol=steady_tol,
        record_periods=record_periods,
        steady_harmonics=4,
    )
    model = build_model(params, amplitude)
    return integrate(model, params.omega_f, cfg)


def spectrum(signal: np.ndarray, omega_f: float, dt: float, h: int = 8,
             t0: float = 0.0) -> np.ndarray:
    """Harmonic magnitudes |x_p|, p = 0..h, of a steady periodic signal.

    Plain Fourier coefficients over the window, which must cover a whole
    number of forcing periods (otherwise the correlation leaks and the
    call is rejected).
    """
    sig = np.asarray(signal, dtype=float).ravel()
    T = 2.0 * pi / omega_f
    span = sig.size * dt
    m_per = span / T
    if abs(m_per - round(m_per)) > 1e-6 * max(1.0, m_per) or round(m_per) < 1:
        raise ValueError(
            f"window of {m_per:.6f} periods is not an integer period count"
        )
    t = t0 + dt * np.arange(sig.size)
    mags = np.empty(h + 1)
    mags[0] = abs(sig.mean())
    for p in range(1, h + 1):
        mags[p] = abs(np.mean(sig * np.exp(-1j * p * omega_f * t)))
    return mags

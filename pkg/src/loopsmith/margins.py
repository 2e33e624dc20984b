"""Loop margins and Nyquist data for SISO open loops ``L = G K``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, UnstableSystem
from .lti import _trusted_system, freqresp, hinf_norm, interconnect, poles

__all__ = ["MarginReport", "margins", "nyquist_data", "sensitivity"]


@dataclass(frozen=True)
class MarginReport:
    gain_margin: float
    gm_frequency: float
    phase_margin: float
    pm_frequency: float
    delay_margin: float
    dm_frequency: float
    modulus_margin: float
    stable: bool

    def console(self):
        """Fields under the usual console names."""
        return {
            "GainMargin": self.gain_margin,
            "GMFrequency": self.gm_frequency,
            "PhaseMargin": self.phase_margin,
            "PMFrequency": self.pm_frequency,
            "DelayMargin": self.delay_margin,
            "DMFrequency": self.dm_frequency,
            "Stable": self.stable,
            "ModMargin": self.modulus_margin,
        }


def sensitivity(L):
    """``S = (1 + L)^-1`` as a state-space system."""
    E, A, B, C, D = L.E, L.A, L.B, L.C, L.feedthrough()
    IpD = np.eye(L.n_y) + D
    M = np.linalg.inv(IpD)
    return _trusted_system(E, A - B @ M @ C, B @ M, -M @ C, M)


def _margin_grid(L, ppd=1000):
    pv = poles(L).values
    mags = np.abs(pv[np.isfinite(pv)])
    mags = mags[mags > 1e-300]
    lo = min(mags.min(initial=1.0), 1.0) * 1e-3
    hi = max(mags.max(initial=1.0), 1.0) * 1e3
    n = int(np.ceil(np.log10(hi / lo) * ppd)) + 1
    return np.logspace(np.log10(lo), np.log10(hi), n)


def _crossings(g, x):
    """Bracketing intervals where ``g`` changes sign on the samples ``x``."""
    v = g(x)
    ok = np.isfinite(v)
    idx = np.flatnonzero(ok[:-1] & ok[1:] & (np.sign(v[:-1]) * np.sign(v[1:]) < 0))
    exact = np.flatnonzero(ok & (v == 0))
    return [(x[i], x[i + 1]) for i in idx], x[exact]


def _refine(g, brackets, exact):
    roots = [brentq(lambda t: float(g(np.array([t]))[0]), a, b, xtol=1e-12, rtol=1e-14) for a, b in brackets]
    return np.sort(np.r_[roots, exact])


def margins(L, omega=None):
    """Gain, phase, delay and modulus margins of a SISO open loop.

    Crossovers are located on a log grid and refined by bracketing root
    search in ``log10(omega)`` to 1e-10. Absent crossovers give ``inf``.

    Returns
    -------
    MarginReport
        ``gain_margin`` is the phase-crossover margin closest to 1 (in log
        terms); ``phase_margin`` is the smallest over gain crossovers, in
        degrees; ``delay_margin`` is the smallest ``PM / omega`` over gain
        crossovers with positive margin; ``modulus_margin`` is
        ``1 / ||1 / (1 + L)||_inf`` (0 for an unstable loop).
    """
    if L.shape != (1, 1):
        raise DomainError("margins need a SISO open loop")
    omega = _margin_grid(L) if omega is None else np.asarray(omega, dtype=float)
    x = np.log10(omega)

    def Lx(t):
        with np.errstate(all="ignore"):
            return freqresp(L, 1j * 10.0 ** np.asarray(t))[:, 0, 0]

    def im_part(t):
        v = Lx(t)
        return np.where(v.real < 0, v.imag, np.nan)

    def log_mag(t):
        return np.log(np.abs(Lx(t)))

    br, ex = _crossings(im_part, x)
    # the Im sign change must happen on the negative real axis
    br = [(a, b) for a, b in br if np.all(Lx(np.array([a, b])).real < 0)]
    pc = _refine(lambda t: Lx(t).imag, br, ex)
    gm, gm_w = math.inf, math.nan
    for t in pc:
        cand = 1.0 / abs(Lx(np.array([t]))[0])
        if not np.isfinite(gm) or abs(math.log(cand)) < abs(math.log(gm)):
            gm, gm_w = float(cand), float(10.0**t)

    br, ex = _crossings(log_mag, x)
    gc = _refine(log_mag, br, ex)
    pm, pm_w = math.inf, math.nan
    dm, dm_w = math.inf, math.nan
    for t in gc:
        w = float(10.0**t)
        ph = math.degrees(np.angle(Lx(np.array([t]))[0]))
        # 180 + phase, wrapped to (-180, 180]
        m = 180.0 - ((-ph) % 360.0)
        if m < pm:
            pm, pm_w = m, w
        d = math.radians(m) / w if m > 0 else 0.0
        if d < dm:
            dm, dm_w = d, w

    cl = interconnect("feedback_unity", L)
    stable = bool(poles(cl).stable)
    if stable:
        try:
            mm = 1.0 / hinf_norm(sensitivity(L))[0]
        except UnstableSystem:
            mm = 0.0
    else:
        mm = 0.0
    return MarginReport(gm, gm_w, pm, pm_w, dm, dm_w, mm, stable)


def nyquist_data(L, omega, modulus_margin=None, circle_points=361):
    """Nyquist curve samples, the mirrored branch and the modulus-margin circle.

    Grid points that hit a pole of ``L`` are returned as ``nan`` (a gap).
    """
    if L.shape != (1, 1):
        raise DomainError("Nyquist data need a SISO open loop")
    omega = np.asarray(omega, dtype=float)
    with np.errstate(all="ignore"):
        v = freqresp(L, 1j * omega)[:, 0, 0]
    v = np.where(np.isfinite(v), v, np.nan + 1j * np.nan)
    if modulus_margin is None:
        modulus_margin = margins(L).modulus_margin
    th = np.linspace(0.0, 2 * np.pi, circle_points)
    return {
        "omega": omega,
        "re": v.real,
        "im": v.imag,
        "mirror_re": v.real[::-1],
        "mirror_im": -v.imag[::-1],
        "circle_re": -1.0 + modulus_margin * np.cos(th),
        "circle_im": modulus_margin * np.sin(th),
        "modulus_margin": float(modulus_margin),
    }

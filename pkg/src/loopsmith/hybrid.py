"""Sampled-data closed loops: continuous plant, discrete controller, optional PWM actuator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NotStrictlyProper, SingularE, StepTooLarge
from .io import atomic_write_text, csv_text
from .lti import interconnect
from .signals import SignalTrace, _rk4_maps, simulate_lti

__all__ = [
    "PwmConfig",
    "HybridResult",
    "pwm_duty",
    "pwm_modulate",
    "simulate_hybrid",
    "continuous_closed_loop",
    "baseline_deviation",
]


@dataclass(frozen=True)
class PwmConfig:
    """Sawtooth-intersection PWM: one carrier ramp per controller period, ``N`` slots."""

    N: int = 10
    u_min: float = 0.0
    u_max: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise DomainError(f"PWM needs an integer N >= 2, got {self.N}")
        if not self.u_min < self.u_max:
            raise DomainError(f"PWM needs u_min < u_max, got {self.u_min}, {self.u_max}")
        object.__setattr__(self, "N", int(self.N))

    def to_dict(self):
        return {"N": self.N, "u_min": self.u_min, "u_max": self.u_max}


def pwm_duty(u_star, cfg):
    """Duty cycle ``D`` with ``D u_max + (1 - D) u_min = clamp(u_star)``."""
    u = min(max(float(u_star), cfg.u_min), cfg.u_max)
    return (u - cfg.u_min) / (cfg.u_max - cfg.u_min)


def pwm_modulate(u_star, cfg, period_index=0):
    """Actuator levels on the ``N`` slots of one controller period.

    The carrier rises linearly from ``u_min`` to ``u_max`` over the period and
    is compared with ``u_star`` at the slot midpoints; the output is ``u_max``
    while the carrier is below ``u_star``. The pulse is left-aligned and holds
    ``round(D N)`` slots (halves round down). Every period uses the same
    carrier, so ``period_index`` does not change the result.
    """
    mid = cfg.u_min + (np.arange(cfg.N) + 0.5) / cfg.N * (cfg.u_max - cfg.u_min)
    return np.where(mid < u_star, cfg.u_max, cfg.u_min)


@dataclass(frozen=True, eq=False)
class HybridResult:
    """Traces of a sampled-data run.

    ``t``, ``u_applied``, ``y`` and ``r`` share the fine time base (the input
    at ``t[i]`` is held until ``t[i+1]``). ``t_k``, ``e`` and ``u_star`` live on
    the controller grid.
    """

    t: np.ndarray
    r: np.ndarray
    u_applied: np.ndarray
    y: np.ndarray
    t_k: np.ndarray
    e: np.ndarray
    u_star: np.ndarray
    Ts: float
    diverged: bool
    pwm: PwmConfig | None

    @property
    def dt(self):
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    @property
    def tracking_rms(self):
        if self.diverged:
            return float("inf")
        return float(np.sqrt(np.mean((self.r - self.y) ** 2)))

    @property
    def control_energy(self):
        """``integral of u_applied^2 dt`` over the run."""
        return float(np.sum(self.u_applied[:-1] ** 2) * self.dt)

    @property
    def held_energy(self):
        """Energy of the plain zero-order hold of the same ``u_star`` sequence."""
        return float(np.sum(self.u_star**2) * self.Ts)

    def metrics(self):
        return {
            "Ts": self.Ts,
            "pwm": self.pwm.to_dict() if self.pwm else None,
            "diverged": self.diverged,
            "tracking_rms": self.tracking_rms,
            "control_energy": self.control_energy,
            "samples": len(self.t),
        }

    def fine_csv(self):
        return csv_text(("t", "u_applied", "y"), (self.t, self.u_applied, self.y))

    def controller_csv(self):
        return csv_text(("t_k", "e", "u_star"), (self.t_k, self.e, self.u_star))

    def to_csv(self, fine_path, controller_path):
        atomic_write_text(fine_path, self.fine_csv())
        atomic_write_text(controller_path, self.controller_csv())


def _reference_samples(ref, t_k, Ts):
    if np.isscalar(ref):
        return np.full(len(t_k), float(ref))
    if not isinstance(ref, SignalTrace):
        raise DomainError("reference must be a step amplitude or a SignalTrace")
    ratio = Ts / ref.dt
    if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        raise DomainError(f"controller period {Ts} is not a multiple of the reference step {ref.dt}")
    idx = np.rint((t_k - ref.t0) / ref.dt).astype(int)
    if idx.min() < 0 or idx.max() >= len(ref):
        raise DomainError("reference trace does not cover the simulated interval")
    return np.asarray(ref.samples, dtype=float).reshape(len(ref), -1)[idx, 0]


def _hold_maps(F, G, h, m):
    """Stacked ``x_j = Phi^j x + Gam_j u`` for ``j = 1..m`` under constant input."""
    Phi, P, Q = _rk4_maps(F, G, h)
    Gs = (P + Q)[:, 0]
    n = F.shape[0]
    pows = np.empty((m, n, n))
    gams = np.empty((m, n))
    cur, g = np.eye(n), np.zeros(n)
    for j in range(m):
        cur = Phi @ cur
        g = Phi @ g + Gs
        pows[j], gams[j] = cur, g
    return pows, gams


def simulate_hybrid(G, Kz, ref, Tend, pwm=None, M=20):
    """Simulate the loop ``e = r - y``, ``u* = Kz e``, ``u = hold or PWM of u*``, ``y = G u``.

    Parameters
    ----------
    G : DescriptorSystem
        Strictly proper SISO plant with invertible ``E``.
    Kz : DiscreteSystem
        Controller; its sample time ``Ts`` sets the controller grid.
    ref : float or SignalTrace
        Step amplitude, or a trace sampled at the controller instants.
    Tend : float
        Duration; rounded to a whole number of controller periods.
    pwm : PwmConfig, optional
        Without it the actuation is a zero-order hold of ``u*``.
    M : int
        RK4 steps per actuation slot.

    Returns
    -------
    HybridResult
        ``diverged`` is set, and the run stopped, once ``|y|`` exceeds
        ``1e6 max|r|`` (``1e6`` for an identically zero reference).
    """
    Ts = Kz.Ts
    if not Tend > 0:
        raise DomainError(f"Tend must be positive, got {Tend}")
    if G.shape != (1, 1) or Kz.shape != (1, 1):
        raise DomainError("hybrid simulation handles SISO loops only")
    if not G.strictly_proper:
        raise NotStrictlyProper("the plant must be strictly proper to avoid an algebraic loop")
    if np.linalg.cond(G.E) > 1e12:
        raise SingularE("explicit integration needs an invertible E")
    M = int(M)
    if M < 1:
        raise DomainError(f"M must be a positive integer, got {M}")
    slots = pwm.N if pwm is not None else 1
    h = Ts / (slots * M)
    F = np.linalg.solve(G.E, G.A)
    Gb = np.linalg.solve(G.E, G.B)
    rho = float(np.abs(np.linalg.eigvals(F)).max())
    if h * rho >= 2.5:
        raise StepTooLarge(f"dt * max|eig| = {h * rho:.3g} >= 2.5", suggested_dt=2.0 / rho)
    pows, gams = _hold_maps(F, Gb, h, M)
    c = G.C[0]

    K = max(int(round(Tend / Ts)), 1)
    t_k = Ts * np.arange(K)
    r_k = _reference_samples(ref, t_k, Ts)
    r_peak = np.abs(r_k).max()
    limit = 1e6 * (r_peak if r_peak > 0 else 1.0)
    per = slots * M
    y = np.empty(K * per + 1)
    u_app = np.empty(K * per + 1)
    e_k = np.empty(K)
    us_k = np.empty(K)
    x = np.zeros(G.n)
    xc = np.zeros(Kz.n)
    Ad, Bd, Cd, Dd = Kz.Ad, Kz.Bd[:, 0], Kz.Cd[0], Kz.Dd[0, 0]
    y[0] = c @ x
    diverged = False
    done = K
    for k in range(K):
        e = r_k[k] - c @ x
        u_star = Cd @ xc + Dd * e
        xc = Ad @ xc + Bd * e
        e_k[k], us_k[k] = e, u_star
        levels = pwm_modulate(u_star, pwm, k) if pwm is not None else (u_star,)
        base = k * per
        for j, lev in enumerate(levels):
            X = pows @ x + gams * lev
            i0 = base + j * M
            y[i0 + 1 : i0 + M + 1] = X @ c
            u_app[i0 : i0 + M] = lev
            x = X[-1]
        if not np.all(np.isfinite(y[base + 1 : base + per + 1])) or np.abs(y[base + 1 : base + per + 1]).max() > limit:
            diverged = True
            done = k + 1
            break
    n_fine = done * per + 1
    u_app[n_fine - 1] = u_app[n_fine - 2]
    t = h * np.arange(n_fine)
    r_fine = np.repeat(r_k[:done], per)
    r_fine = np.r_[r_fine, r_fine[-1]]
    return HybridResult(
        t, r_fine, u_app[:n_fine], y[:n_fine], t_k[:done], e_k[:done], us_k[:done], Ts, diverged, pwm
    )


def continuous_closed_loop(G, K, amplitude, t):
    """Step response of the continuous loop ``y = G K (r - y)`` on the uniform grid ``t``."""
    t = np.asarray(t, dtype=float)
    T = interconnect("feedback_unity", interconnect("series", K, G))
    u = SignalTrace(t[0], t[1] - t[0], np.full(len(t), float(amplitude)), "r")
    return simulate_lti(T, u).samples


def baseline_deviation(result, G, K):
    """RMS of ``y_hybrid - y_continuous`` over the hybrid run's fine grid.

    The continuous loop uses the same plant, the continuous controller ``K``
    and the step amplitude of the run. Diverged runs give ``inf``.
    """
    if result.diverged:
        return float("inf")
    y_c = continuous_closed_loop(G, K, result.r[0], result.t)
    return float(np.sqrt(np.mean((result.y - y_c) ** 2)))

"""Excitation signals, discrete Fourier analysis, time simulation, FRF estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyResult, LengthMismatch, SingularE, StepTooLarge
from .io import read_csv, write_csv
from .lti import freqresp

__all__ = [
    "SignalTrace",
    "Spectrum",
    "FrequencyData",
    "gen_chirp",
    "chirp_frequency",
    "gen_prbs",
    "gen_impulse",
    "dft",
    "idft",
    "parseval_energy",
    "simulate_lti",
    "measure_response",
    "estimate_frf",
    "sample_system",
]


@dataclass(frozen=True, eq=False)
class SignalTrace:
    """Uniformly sampled signal; ``samples`` is ``(n,)`` or ``(n, channels)``."""

    t0: float
    dt: float
    samples: np.ndarray
    name: str = "u"

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"sample period must be positive, got {self.dt}")
        x = np.array(self.samples, dtype=float)
        if x.ndim not in (1, 2) or x.shape[0] < 2:
            raise DomainError(f"a trace needs at least 2 samples per channel, got shape {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def fs(self):
        return 1.0 / self.dt

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(len(self))

    def decimate(self, factor):
        """Keep every ``factor``-th sample (no anti-alias filtering)."""
        factor = int(factor)
        if factor < 1:
            raise DomainError("decimation factor must be >= 1")
        return SignalTrace(self.t0, self.dt * factor, self.samples[::factor], self.name)

    def to_csv(self, path):
        return write_csv(path, ["t", self.name], [self.t, self.samples])

    @classmethod
    def from_csv(cls, path):
        header, cols = read_csv(path)
        t = cols[header[0]]
        if len(t) < 2:
            raise DomainError(f"{path}: fewer than 2 samples")
        dt = float(np.mean(np.diff(t)))
        return cls(float(t[0]), dt, cols[header[1]], header[1])


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One-sided DFT: bin ``i`` sits at ``i * df`` Hz, up to ``fs/2``."""

    df: float
    values: np.ndarray
    n: int

    @property
    def freqs(self):
        return self.df * np.arange(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class FrequencyData:
    """SISO frequency samples ``{(omega_i, Phi_i)}``, omegas strictly increasing."""

    omega: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        w = np.array(self.omega, dtype=float).ravel()
        v = np.array(self.values, dtype=complex).ravel()
        if w.shape != v.shape:
            raise LengthMismatch(f"{len(w)} frequencies but {len(v)} values")
        if np.any(w < 0) or np.any(np.diff(w) <= 0):
            raise DomainError("frequencies must be nonnegative and strictly increasing")
        w.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.omega)

    def to_csv(self, path):
        return write_csv(path, ["omega_rad_s", "re", "im"], [self.omega, self.values.real, self.values.imag])

    @classmethod
    def from_csv(cls, path):
        _, cols = read_csv(path)
        return cls(cols["omega_rad_s"], cols["re"] + 1j * cols["im"])


def sample_system(sys, omega):
    """Exact frequency samples of a SISO system."""
    omega = np.asarray(omega, dtype=float)
    return FrequencyData(omega, freqresp(sys, 1j * omega)[:, 0, 0])


# ------------------------------------------------------------------ generators


def _sample_count(T, fs):
    return int(math.floor(T * fs + 1e-9)) + 1


def gen_chirp(f0, f1, T, fs=100.0, amp=1.0):
    """Linear sweep ``amp * cos(2 pi (f0 t + (f1 - f0) t^2 / (2 T)))`` on ``[0, T]``."""
    if not fs > 0 or not T > 0:
        raise DomainError("sweep duration and sampling rate must be positive")
    if not (0 <= f0 < f1 <= fs / 2):
        raise DomainError(f"need 0 <= f0 < f1 <= fs/2, got f0={f0}, f1={f1}, fs={fs}")
    t = np.arange(_sample_count(T, fs)) / fs
    phase = 2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * T))
    return SignalTrace(0.0, 1.0 / fs, amp * np.cos(phase), "u")


def chirp_frequency(t, f0, f1, T):
    """Instantaneous frequency (Hz) of :func:`gen_chirp`."""
    return f0 + (f1 - f0) * np.asarray(t) / T


def gen_prbs(n, fs=100.0, chip_min=1, chip_max=10, seed=0, levels=(0.0, 1.0)):
    """Two-level random switching signal.

    Run lengths are drawn uniformly from ``[chip_min, chip_max]`` samples;
    the level alternates at each switch and the starting level is drawn from
    the same seeded generator.
    """
    n = int(n)
    if n < 2 or not fs > 0:
        raise DomainError("need n >= 2 samples and fs > 0")
    if not 1 <= chip_min <= chip_max:
        raise DomainError(f"need 1 <= chip_min <= chip_max, got {chip_min}, {chip_max}")
    rng = np.random.default_rng(seed)
    level = int(rng.integers(2))
    x = np.empty(n)
    pos = 0
    while pos < n:
        run = int(rng.integers(chip_min, chip_max + 1))
        x[pos:pos + run] = levels[level]
        pos += run
        level = 1 - level
    return SignalTrace(0.0, 1.0 / fs, x, "u")


def gen_impulse(width_samples, n, fs=100.0, amp=1.0):
    """Rectangular pulse of ``width_samples`` samples at the start of the record."""
    if not 1 <= width_samples <= n:
        raise DomainError(f"need 1 <= width <= n, got width={width_samples}, n={n}")
    if n < 2 or not fs > 0:
        raise DomainError("need n >= 2 samples and fs > 0")
    x = np.zeros(int(n))
    x[: int(width_samples)] = amp
    return SignalTrace(0.0, 1.0 / fs, x, "u")


# ------------------------------------------------------------------- Fourier


def dft(trace):
    """One-sided transform ``X_k = sum_j x_j exp(-2 pi i j k / N)``."""
    x = trace.samples
    return Spectrum(trace.fs / len(x), np.fft.rfft(x, axis=0), len(x))


def idft(spec, n=None):
    n = spec.n if n is None else int(n)
    x = np.fft.irfft(spec.values, n=n, axis=0)
    return SignalTrace(0.0, 1.0 / (n * spec.df), x, "x")


def parseval_energy(spec):
    """``sum_j x_j^2`` recovered from one-sided bins."""
    X = np.abs(spec.values) ** 2
    w = np.full(X.shape[0], 2.0)
    w[0] = 1.0
    if spec.n % 2 == 0:
        w[-1] = 1.0
    return float(np.tensordot(w, X, axes=(0, 0)).sum() / spec.n)


# ---------------------------------------------------------------- simulation


def _rk4_maps(F, G, h):
    """Exact linear maps of one RK4 step for x' = F x + G u(t), u affine in t.

    Returns ``Phi, P, Q`` with ``x+ = Phi x + P u_k + Q u_{k+1}``.
    """

    def step(x, ga, gm, gb):
        k1 = h * (F @ x + ga)
        k2 = h * (F @ (x + k1 / 2) + gm)
        k3 = h * (F @ (x + k2 / 2) + gm)
        k4 = h * (F @ (x + k3) + gb)
        return x + (k1 + 2 * k2 + 2 * k3 + k4) / 6

    n, m = G.shape
    Z = np.zeros((n, m))
    Phi = step(np.eye(n), np.zeros((n, n)), np.zeros((n, n)), np.zeros((n, n)))
    P = step(Z, G, G / 2, Z)
    Q = step(Z, Z, G / 2, G)
    return Phi, P, Q


def simulate_lti(sys, u, x0=None):
    """Fixed-step RK4 on ``x' = E^-1 (A x + B u)``, input linear between samples.

    Parameters
    ----------
    sys : DescriptorSystem
        ``E`` must be invertible.
    u : SignalTrace
        Input samples; the step equals ``u.dt``.
    x0 : array_like, optional
        Initial state (zeros by default).

    Returns
    -------
    SignalTrace
        ``y = C x (+ D u)`` at the input sample instants.
    """
    n = sys.n
    U = u.samples.reshape(len(u), -1)
    if U.shape[1] != sys.n_u:
        raise LengthMismatch(f"input has {U.shape[1]} channels, system has {sys.n_u} inputs")
    if n == 0:
        Y = U @ sys.feedthrough().T
        return SignalTrace(u.t0, u.dt, Y.ravel() if sys.n_y == 1 else Y, "y")
    if np.linalg.cond(sys.E) > 1e12:
        raise SingularE("explicit integration needs an invertible E")
    F = np.linalg.solve(sys.E, sys.A)
    G = np.linalg.solve(sys.E, sys.B)
    h = u.dt
    rho = float(np.abs(np.linalg.eigvals(F)).max())
    if h * rho >= 2.5:
        raise StepTooLarge(f"dt * max|eig| = {h * rho:.3g} >= 2.5", suggested_dt=2.0 / rho)
    Phi, P, Q = _rk4_maps(F, G, h)
    drive = U[:-1] @ P.T + U[1:] @ Q.T
    X = np.empty((len(u), n))
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    X[0] = x
    PhiT = Phi.T
    for k in range(len(u) - 1):
        x = x @ PhiT + drive[k]
        X[k + 1] = x
    Y = X @ sys.C.T + U @ sys.feedthrough().T
    return SignalTrace(u.t0, u.dt, Y.ravel() if sys.n_y == 1 else Y, "y")


def measure_response(sys, u_fine, factor):
    """Drive ``sys`` with a finely sampled input and record both signals at a coarser rate.

    The plant is integrated on the fine grid so that the held input is close
    to the continuous excitation; input and output are then sampled every
    ``factor`` fine steps, as an acquisition system would.
    """
    y_fine = simulate_lti(sys, u_fine)
    return u_fine.decimate(factor), y_fine.decimate(factor)


# ---------------------------------------------------------------- estimation


def estimate_frf(u, y, min_input_mag_rel=1e-3, f_max=None):
    """Spectral-division estimate ``Phi_i = Y_i / U_i``.

    Only bins with ``|U_i| >= min_input_mag_rel * max|U|`` and
    ``f_i <= f_max`` (default Nyquist) are kept.
    """
    if len(u) != len(y) or not math.isclose(u.dt, y.dt, rel_tol=1e-9):
        raise LengthMismatch("input and output traces must share length and sample period")
    if u.samples.ndim != 1 or y.samples.ndim != 1:
        raise DomainError("FRF estimation handles single-channel traces only")
    U, Y = dft(u), dft(y)
    f = U.freqs
    mag = np.abs(U.values)
    f_max = u.fs / 2 if f_max is None else f_max
    keep = (mag >= min_input_mag_rel * mag.max()) & (f <= f_max + 1e-12) & (mag > 0)
    if not np.any(keep):
        raise EmptyResult("no frequency bin passed the input-magnitude gate")
    return FrequencyData(2 * np.pi * f[keep], Y.values[keep] / U.values[keep])

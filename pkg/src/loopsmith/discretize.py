"""Bilinear (Tustin) discretization and discrete frequency responses."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from .errors import DimensionMismatch, DomainError, SingularAtPoint, SingularAtTustinPole, SingularE
from .io import atomic_write_text, csv_text
from .lti import freqresp

__all__ = ["DiscreteSystem", "CompareTable", "tustin", "freq_response_z", "compare_cd"]


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """``x[k+1] = Ad x[k] + Bd u[k]``, ``y[k] = Cd x[k] + Dd u[k]`` with sample time ``Ts``."""

    Ad: np.ndarray
    Bd: np.ndarray
    Cd: np.ndarray
    Dd: np.ndarray
    Ts: float

    def __post_init__(self):
        if not (np.isfinite(self.Ts) and self.Ts > 0):
            raise DomainError(f"sample time must be positive, got {self.Ts}")
        Dd = np.atleast_2d(np.asarray(self.Dd, dtype=float))
        ny, nu = Dd.shape
        Ad = np.asarray(self.Ad, dtype=float)
        if Ad.ndim != 2:
            raise DimensionMismatch(f"Ad must be a matrix, got shape {Ad.shape}")
        n = Ad.shape[0]
        Bd = np.asarray(self.Bd, dtype=float).reshape(n, nu)
        Cd = np.asarray(self.Cd, dtype=float).reshape(ny, n)
        if Ad.shape != (n, n):
            raise DimensionMismatch(f"Ad must be square, got {Ad.shape}")
        for name, m in (("Ad", Ad), ("Bd", Bd), ("Cd", Cd), ("Dd", Dd)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        object.__setattr__(self, "Ts", float(self.Ts))

    @property
    def n(self):
        return self.Ad.shape[0]

    @property
    def shape(self):
        return self.Dd.shape

    def to_dict(self):
        return {
            "kind": "discrete",
            "dims": {"n": self.n, "n_u": self.shape[1], "n_y": self.shape[0]},
            "Ad": self.Ad.tolist(),
            "Bd": self.Bd.tolist(),
            "Cd": self.Cd.tolist(),
            "Dd": self.Dd.tolist(),
            "Ts": self.Ts,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("kind", "discrete") != "discrete":
            raise DomainError(f"expected a discrete system document, got {doc.get('kind')!r}")
        n, nu, ny = doc["dims"]["n"], doc["dims"]["n_u"], doc["dims"]["n_y"]
        return cls(
            np.array(doc["Ad"], dtype=float).reshape(n, n),
            np.array(doc["Bd"], dtype=float).reshape(n, nu),
            np.array(doc["Cd"], dtype=float).reshape(ny, n),
            np.array(doc["Dd"], dtype=float).reshape(ny, nu),
            doc["Ts"],
        )


def tustin(sys, Ts):
    """Bilinear substitution ``s = (2/Ts)(z - 1)/(z + 1)``.

    With ``a = 2/Ts`` and ``M = (a E - A)^-1`` the result is
    ``Ad = M (a E + A)``, ``Bd = sqrt(2a) M B``, ``Cd = sqrt(2a) C M E`` and
    ``Dd = D + C M B``. The square-root split of the ``2a`` factor keeps
    ``Bd`` and ``Cd`` of comparable size.

    Raises
    ------
    SingularE
        ``E`` is singular (only proper descriptor models with invertible
        ``E`` are accepted).
    SingularAtTustinPole
        ``2/Ts`` is a pole of the system.
    """
    if not (np.isfinite(Ts) and Ts > 0):
        raise DomainError(f"sample time must be positive, got {Ts}")
    D = sys.feedthrough()
    if sys.n == 0:
        return DiscreteSystem(np.zeros((0, 0)), np.zeros((0, sys.n_u)), np.zeros((sys.n_y, 0)), D, Ts)
    E, A, B, C = sys.E, sys.A, sys.B, sys.C
    if np.linalg.cond(E) > 1e12:
        raise SingularE("Tustin discretization needs an invertible E")
    a = 2.0 / Ts
    P = a * E - A
    if np.linalg.cond(P) > 1e12:
        raise SingularAtTustinPole(f"2/Ts = {a:.6g} is a pole of the system")
    lu = spla.lu_factor(P)
    MB = spla.lu_solve(lu, B)
    # M (aE + A) = I + 2 M A; this form keeps I - Ad accurate for small Ts
    Ad = np.eye(sys.n) + 2.0 * spla.lu_solve(lu, A)
    k = np.sqrt(2.0 * a)
    # C M E = (E^T M^T C^T)^T
    CME = (E.T @ spla.lu_solve(lu, C.T, trans=1)).T
    return DiscreteSystem(Ad, k * MB, k * CME, D + C @ MB, Ts)


def freq_response_z(sysd, f):
    """``Cd (zI - Ad)^-1 Bd + Dd`` at ``z = exp(i 2 pi f Ts)`` for SISO ``sysd``.

    ``f`` is in Hz (scalar or array); the result has the same shape.
    """
    f_arr = np.asarray(f, dtype=float)
    z = np.exp(2j * np.pi * f_arr.ravel() * sysd.Ts)
    out = np.empty(z.shape, complex)
    n = sysd.n
    I = np.eye(n)
    for i, zk in enumerate(z):
        if n == 0:
            out[i] = sysd.Dd[0, 0]
            continue
        M = zk * I - sysd.Ad
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.LinAlgWarning)
            lu = spla.lu_factor(M)
        piv = np.abs(np.diag(lu[0]))
        if piv.min() <= 1e-14 * max(piv.max(), 1.0):
            raise SingularAtPoint(f"z = {zk:.6g} is a pole of the discrete system")
        out[i] = (sysd.Cd @ spla.lu_solve(lu, sysd.Bd[:, 0].astype(complex)))[0] + sysd.Dd[0, 0]
    return out.reshape(f_arr.shape)


@dataclass(frozen=True, eq=False)
class CompareTable:
    """Continuous vs discrete Bode data on a shared frequency grid."""

    f_hz: np.ndarray
    mag_c: np.ndarray
    mag_d: np.ndarray
    phase_c_deg: np.ndarray
    phase_d_deg: np.ndarray
    Ts: float
    band_edge_hz: float
    max_gain_deviation: float

    HEADER = ("f_hz", "mag_c", "mag_d", "phase_c_deg", "phase_d_deg")

    def __len__(self):
        return len(self.f_hz)

    def columns(self):
        return [self.f_hz, self.mag_c, self.mag_d, self.phase_c_deg, self.phase_d_deg]

    def to_csv(self, path):
        return atomic_write_text(path, csv_text(self.HEADER, self.columns()))


def compare_cd(sys_c, sysd, grid, fraction=0.1, f_max=None):
    """Evaluate both responses on ``grid`` (Hz) and measure their gain mismatch.

    ``max_gain_deviation`` is ``max ||H_d| - |H_c|| / |H_c|`` over grid points
    with ``f <= fraction * f_Nyquist`` (0 when there are none). Passing
    ``f_max`` (Hz) replaces that band edge; a common ``f_max`` makes results
    for different sample times comparable, since warping at a fixed fraction
    of Nyquist does not depend on ``Ts``.
    """
    f = np.asarray(grid, dtype=float).ravel()
    if f.size == 0:
        e = np.zeros(0)
        return CompareTable(e, e, e, e, e, sysd.Ts, 0.0, 0.0)
    Hc = freqresp(sys_c, 2j * np.pi * f)[:, 0, 0]
    Hd = freq_response_z(sysd, f)
    mc, md = np.abs(Hc), np.abs(Hd)
    edge = fraction * 0.5 / sysd.Ts if f_max is None else float(f_max)
    band = f <= edge
    dev = float(np.max(np.abs(md[band] - mc[band]) / mc[band])) if band.any() else 0.0
    return CompareTable(
        f,
        mc,
        md,
        np.degrees(np.unwrap(np.angle(Hc))),
        np.degrees(np.unwrap(np.angle(Hd))),
        sysd.Ts,
        edge,
        dev,
    )

"""Descriptor LTI systems: representation, evaluation, interconnection, norms.

The core object is :class:`DescriptorSystem`, ``E x' = A x + B u``,
``y = C x``. It carries no feed-through. Weights, controllers and anything
coming out of a bilinear transform need one, so :class:`FeedthroughSystem`
adds ``D``; every function here accepts either and returns the plain form
whenever the resulting ``D`` is identically zero.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from .errors import (
    DimensionMismatch,
    DomainError,
    IllPosedLoop,
    NotStrictlyProper,
    SingularAtPoint,
    SingularE,
    SingularPencil,
    UnstableSystem,
)

logger = logging.getLogger(__name__)

__all__ = [
    "DescriptorSystem",
    "FeedthroughSystem",
    "PoleSet",
    "RationalWeight",
    "make_system",
    "second_order_plant",
    "eval_transfer",
    "freqresp",
    "poles",
    "make_weight",
    "interconnect",
    "lft_lower",
    "select",
    "hinf_norm",
    "peak_gain",
    "h2_norm",
]

_PROBE_SEED = 20240229
_PROBE_COUNT = 5
_REGULARITY_RTOL = 1e-12


def _as_matrix(x, name):
    a = np.array(x, dtype=float, copy=True)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-D array, got shape {a.shape}")
    a.setflags(write=False)
    return a


def _pencil_is_regular(E, A):
    n = A.shape[0]
    if n == 0:
        return True
    scale = max(np.linalg.norm(A, 2), np.linalg.norm(E, 2))
    if scale == 0.0:
        return False
    if np.array_equal(E, np.eye(n)):
        return True
    rng = np.random.default_rng(_PROBE_SEED)
    angles = rng.uniform(0.0, 2.0 * np.pi, _PROBE_COUNT)
    for lam in scale * np.exp(1j * angles):
        smin = np.linalg.svd(A - lam * E, compute_uv=False)[-1]
        if smin >= _REGULARITY_RTOL * scale:
            return True
    # Every probe failed: confirm with QZ (a singular pencil has 0/0 pairs).
    alpha, beta = spla.eigvals(A, E, homogeneous_eigvals=True)
    tol = _REGULARITY_RTOL * scale
    return not np.any((np.abs(alpha) < tol) & (np.abs(beta) < tol))


@dataclass(frozen=True, eq=False)
class DescriptorSystem:
    """Strictly proper continuous-time descriptor system ``(E, A, B, C)``.

    Arrays are copied to read-only float matrices on construction. The pencil
    ``(E, A)`` must be regular.
    """

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in ("E", "A", "B", "C"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        self._check_shapes()
        if not _pencil_is_regular(self.E, self.A):
            raise SingularPencil("pencil (E, A) is singular: det(A - lambda E) vanishes identically")

    def _check_shapes(self):
        E, A, B, C = self.E, self.A, self.B, self.C
        n = A.shape[0]
        if A.shape != (n, n) or E.shape != (n, n):
            raise DimensionMismatch(f"E {E.shape} and A {A.shape} must be square of equal size")
        if B.shape[0] != n:
            raise DimensionMismatch(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise DimensionMismatch(f"C has {C.shape[1]} columns, expected {n}")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_y(self):
        return self.C.shape[0]

    @property
    def shape(self):
        return (self.n_y, self.n_u)

    def feedthrough(self):
        return np.zeros((self.n_y, self.n_u))

    @property
    def strictly_proper(self):
        return True

    @property
    def is_standard(self):
        """True when ``E`` is exactly the identity."""
        return np.array_equal(self.E, np.eye(self.n))

    def __call__(self, s):
        return eval_transfer(self, s)

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, n_u={self.n_u}, n_y={self.n_y})"

    @classmethod
    def _trusted(cls, E, A, B, C, D=None):
        # Skips validation; only for internally assembled, known-good blocks.
        obj = object.__new__(cls)
        mats = {"E": E, "A": A, "B": B, "C": C}
        if D is not None:
            mats["D"] = D
        for name, m in mats.items():
            m = np.asarray(m, dtype=float)
            m.setflags(write=False)
            object.__setattr__(obj, name, m)
        return obj


@dataclass(frozen=True, eq=False)
class FeedthroughSystem(DescriptorSystem):
    """Descriptor system with a direct term: ``y = C x + D u``."""

    D: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        D = self.D
        if D is None:
            D = np.zeros((self.n_y, self.n_u))
        object.__setattr__(self, "D", _as_matrix(D, "D"))
        if self.D.shape != (self.n_y, self.n_u):
            raise DimensionMismatch(f"D has shape {self.D.shape}, expected {(self.n_y, self.n_u)}")

    def feedthrough(self):
        return np.array(self.D)

    @property
    def strictly_proper(self):
        return not np.any(self.D)


def make_system(E, A, B, C, D=None):
    """Build the narrowest system type for the given matrices."""
    if D is not None and np.any(np.asarray(D, dtype=float)):
        return FeedthroughSystem(E, A, B, C, D)
    return DescriptorSystem(E, A, B, C)


def _trusted_system(E, A, B, C, D):
    if np.any(D):
        return FeedthroughSystem._trusted(E, A, B, C, D)
    return DescriptorSystem._trusted(E, A, B, C)


def static_gain(D):
    """Zero-state system with constant transfer ``D``."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    ny, nu = D.shape
    return make_system(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, nu)), np.zeros((ny, 0)), D)


@dataclass(frozen=True)
class PoleSet:
    """Finite generalized eigenvalues of a pencil.

    ``n_infinite`` counts the eigenvalues at infinity (singular ``E``
    directions), which are excluded from ``values``.
    """

    values: np.ndarray
    stable: bool
    n_infinite: int = 0

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    @property
    def abscissa(self):
        if len(self.values) == 0:
            return -np.inf
        return float(np.max(self.values.real))


@dataclass(frozen=True)
class RationalWeight:
    """First-order weight ``(b1 s + b0) / (a1 s + a0)``."""

    b1: float
    b0: float
    a1: float
    a0: float

    def __post_init__(self):
        if self.a1 == 0 and self.a0 == 0:
            raise DomainError("weight denominator is identically zero")
        if self.a1 == 0 and self.b1 != 0:
            raise DomainError("weight (b1 s + b0)/a0 with b1 != 0 is improper")

    def __call__(self, s):
        return (self.b1 * s + self.b0) / (self.a1 * s + self.a0)

    def as_tuple(self):
        return (self.b1, self.b0, self.a1, self.a0)


# ---------------------------------------------------------------- builders


def second_order_plant(d=0.2, w1=10.0, k=1.0):
    """Lightly damped second-order plant ``k / (s^2/w0^2 + 2 d s/w0 + 1)``.

    ``w0 = sqrt(w1**2 + d**2)`` (taken literally, units notwithstanding).
    The rotation block is oriented so that ``C (sI - A)^-1 B`` equals the
    transfer above with a positive sign.
    """
    if not 0.0 < d < 1.0:
        raise DomainError(f"damping ratio must lie in (0, 1), got {d}")
    if not w1 > 0.0:
        raise DomainError(f"cut-off frequency must be positive, got {w1}")
    if k == 0:
        raise DomainError("static gain must be nonzero")
    w0 = math.sqrt(w1**2 + d**2)
    wd = w0 * math.sqrt(1.0 - d**2)
    A = np.array([[-d * w0, -wd], [wd, -d * w0]])
    B = np.array([[k / wd], [0.0]])
    C = np.array([[0.0, w0**2]])
    return DescriptorSystem(np.eye(2), A, B, C)


def make_weight(w):
    """Realize a :class:`RationalWeight` as a one-state system plus feed-through.

    A constant weight (``a1 = 0``) gives a zero-state system.
    """
    if not isinstance(w, RationalWeight):
        w = RationalWeight(*w)
    if w.a1 == 0:
        return static_gain([[w.b0 / w.a0]])
    D = w.b1 / w.a1
    return make_system([[w.a1]], [[-w.a0]], [[1.0]], [[w.b0 - D * w.a0]], [[D]])


# -------------------------------------------------------------- evaluation


def eval_transfer(sys, s):
    """``C (sE - A)^-1 B + D`` at one complex point, by LU solve."""
    s = complex(s)
    D = sys.feedthrough().astype(complex)
    if sys.n == 0:
        return D
    M = s * sys.E - sys.A
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.LinAlgWarning)
        lu, piv = spla.lu_factor(M, check_finite=False)
    diag = np.abs(np.diag(lu))
    scale = max(np.abs(M).max(), np.finfo(float).tiny)
    if diag.min() <= 1e-14 * scale:
        raise SingularAtPoint(f"s = {s} is numerically a pole")
    X = spla.lu_solve((lu, piv), sys.B.astype(complex), check_finite=False)
    return sys.C @ X + D


class _Modal:
    """Diagonal form used for fast batched evaluation on frequency grids."""

    def __init__(self, lam, Cv, WB, D):
        self.lam, self.Cv, self.WB, self.D = lam, Cv, WB, D

    def __call__(self, s):
        s = np.asarray(s, dtype=complex).ravel()
        inv = 1.0 / (s[:, None] - self.lam[None, :])
        H = np.einsum("ik,nk,kj->nij", self.Cv, inv, self.WB, optimize=True)
        return H + self.D[None, :, :]


_MODAL_COND_LIMIT = 1e6


def _modal_form(sys):
    n = sys.n
    if n == 0:
        return None
    try:
        if sys.is_standard:
            lam, V = np.linalg.eig(sys.A)
            EV = V
        else:
            if np.linalg.cond(sys.E) > 1e12:
                return None
            lam, V = spla.eig(sys.A, sys.E)
            EV = sys.E @ V
        if not np.all(np.isfinite(lam)) or np.linalg.cond(V) > _MODAL_COND_LIMIT:
            return None
        WB = np.linalg.solve(EV, sys.B.astype(complex))
    except (np.linalg.LinAlgError, ValueError):
        return None
    return _Modal(lam, sys.C @ V, WB, sys.feedthrough().astype(complex))


def freqresp(sys, s, chunk=256):
    """Transfer at many points; returns an array of shape ``(len(s), n_y, n_u)``.

    A well-conditioned eigenbasis gives an O(n) evaluation per point;
    otherwise batched linear solves are used.
    """
    s = np.atleast_1d(np.asarray(s, dtype=complex)).ravel()
    D = sys.feedthrough().astype(complex)
    if sys.n == 0:
        return np.broadcast_to(D, (len(s),) + D.shape).copy()
    modal = _modal_form(sys)
    if modal is not None:
        return modal(s)
    out = np.empty((len(s), sys.n_y, sys.n_u), dtype=complex)
    B = sys.B.astype(complex)
    for start in range(0, len(s), chunk):
        sl = s[start:start + chunk]
        M = sl[:, None, None] * sys.E[None] - sys.A[None]
        try:
            X = np.linalg.solve(M, np.broadcast_to(B, (len(sl),) + B.shape))
        except np.linalg.LinAlgError:
            X = np.stack([_solve_or_inf(m, B) for m in M])
        out[start:start + len(sl)] = np.einsum("ik,nkj->nij", sys.C, X) + D
    return out


def _solve_or_inf(M, B):
    try:
        return np.linalg.solve(M, B)
    except np.linalg.LinAlgError:
        return np.full(B.shape, np.inf, dtype=complex)


def poles(sys):
    """Finite generalized eigenvalues of ``(E, A)``."""
    n = sys.n
    if n == 0:
        return PoleSet(np.zeros(0, dtype=complex), True, 0)
    if sys.is_standard:
        vals = np.linalg.eigvals(sys.A).astype(complex)
        n_inf = 0
    else:
        alpha, beta = spla.eigvals(sys.A, sys.E, homogeneous_eigvals=True)
        scale = max(np.linalg.norm(sys.A, 2), np.linalg.norm(sys.E, 2))
        tol = _REGULARITY_RTOL * scale
        if np.any((np.abs(alpha) < tol) & (np.abs(beta) < tol)):
            raise SingularPencil("pencil (E, A) is singular")
        finite = np.abs(beta) > 1e-13 * np.maximum(np.abs(alpha), tol)
        vals = (alpha[finite] / beta[finite]).astype(complex)
        n_inf = int(np.count_nonzero(~finite))
    vals = vals[np.lexsort((vals.imag, vals.real))]
    stable = bool(np.all(vals.real < 0))
    return PoleSet(vals, stable, n_inf)


# ---------------------------------------------------------- interconnection


def _parts(sys):
    return sys.E, sys.A, sys.B, sys.C, sys.feedthrough()


def _blkdiag(*mats):
    return spla.block_diag(*mats) if mats else np.zeros((0, 0))


def _series(s1, s2):
    # u -> s1 -> s2 -> y, transfer H2 H1
    E1, A1, B1, C1, D1 = _parts(s1)
    E2, A2, B2, C2, D2 = _parts(s2)
    if s2.n_u != s1.n_y:
        raise DimensionMismatch(f"series: {s1.n_y} outputs feed {s2.n_u} inputs")
    n1, n2 = s1.n, s2.n
    A = np.block([[A1, np.zeros((n1, n2))], [B2 @ C1, A2]])
    B = np.vstack([B1, B2 @ D1])
    C = np.hstack([D2 @ C1, C2])
    return _trusted_system(_blkdiag(E1, E2), A, B, C, D2 @ D1)


def _parallel(s1, s2):
    if s1.shape != s2.shape:
        raise DimensionMismatch(f"parallel: shapes {s1.shape} and {s2.shape} differ")
    E1, A1, B1, C1, D1 = _parts(s1)
    E2, A2, B2, C2, D2 = _parts(s2)
    return _trusted_system(
        _blkdiag(E1, E2), _blkdiag(A1, A2), np.vstack([B1, B2]), np.hstack([C1, C2]), D1 + D2
    )


def _append(s1, s2):
    E1, A1, B1, C1, D1 = _parts(s1)
    E2, A2, B2, C2, D2 = _parts(s2)
    return _trusted_system(
        _blkdiag(E1, E2), _blkdiag(A1, A2), _blkdiag(B1, B2), _blkdiag(C1, C2), _blkdiag(D1, D2)
    )


def _feedback_unity(L):
    # r -> e = r - y -> L -> y
    if L.n_u != L.n_y:
        raise DimensionMismatch("unity feedback needs a square open loop")
    E, A, B, C, D = _parts(L)
    IpD = np.eye(L.n_y) + D
    if np.linalg.cond(IpD) > 1e12:
        raise IllPosedLoop("I + D is singular: algebraic loop is ill-posed")
    M = np.linalg.inv(IpD)
    return _trusted_system(E, A - B @ M @ C, B @ M, M @ C, M @ D)


def interconnect(mode, sys1, sys2=None):
    """Compose two systems without any minimality reduction.

    ``series``: transfer ``H2 H1`` (``sys1`` drives ``sys2``).
    ``parallel``: ``H1 + H2``. ``append``: block diagonal.
    ``feedback_unity``: negative unity feedback around ``L = H1 H2``,
    i.e. ``L (I + L)^-1``; ``sys2`` may be omitted when ``sys1`` already is
    the open loop.
    """
    if mode == "series":
        return _series(sys1, sys2)
    if mode == "parallel":
        return _parallel(sys1, sys2)
    if mode == "append":
        return _append(sys1, sys2)
    if mode == "feedback_unity":
        L = sys1 if sys2 is None else _series(sys2, sys1)
        return _feedback_unity(L)
    raise DomainError(f"unknown interconnection mode {mode!r}")


def scale(sys, alpha):
    """``alpha * H`` (output scaling)."""
    E, A, B, C, D = _parts(sys)
    return _trusted_system(E, A, B, alpha * C, alpha * D)


def negate(sys):
    return scale(sys, -1.0)


def select(sys, outputs, inputs):
    """Sub-system from chosen output rows and input columns."""
    outputs = np.atleast_1d(outputs)
    inputs = np.atleast_1d(inputs)
    E, A, B, C, D = _parts(sys)
    return _trusted_system(E, A, B[:, inputs], C[outputs, :], D[np.ix_(outputs, inputs)])


def lft_lower(P, K, partition):
    """Lower LFT ``P11 + P12 K (I - P22 K)^-1 P21`` as a state-space composition.

    ``partition = (n_w, n_u, n_z, n_y)``: ``P`` maps ``[w; u]`` to ``[z; y]``
    and ``K`` maps ``y`` to ``u``.
    """
    n_w, n_u, n_z, n_y = partition
    if P.n_u != n_w + n_u or P.n_y != n_z + n_y:
        raise DimensionMismatch(f"plant shape {P.shape} does not match partition {partition}")
    if K.n_u != n_y or K.n_y != n_u:
        raise DimensionMismatch(f"controller shape {K.shape} must be ({n_u}, {n_y})")
    E, A, B, C, D = _parts(P)
    Ek, Ak, Bk, Ck, Dk = _parts(K)
    B1, B2 = B[:, :n_w], B[:, n_w:]
    C1, C2 = C[:n_z], C[n_z:]
    D11, D12 = D[:n_z, :n_w], D[:n_z, n_w:]
    D21, D22 = D[n_z:, :n_w], D[n_z:, n_w:]

    R = np.eye(n_u) - Dk @ D22
    if np.linalg.cond(R) > 1e12:
        raise IllPosedLoop("I - K(inf) P22(inf) is singular")
    Q = np.linalg.inv(R)
    # u = Ux x + Uk xk + Uw w
    Ux, Uk, Uw = Q @ Dk @ C2, Q @ Ck, Q @ Dk @ D21
    # y = Yx x + Yk xk + Yw w
    Yx, Yk, Yw = C2 + D22 @ Ux, D22 @ Uk, D21 + D22 @ Uw

    Acl = np.block([[A + B2 @ Ux, B2 @ Uk], [Bk @ Yx, Ak + Bk @ Yk]])
    Bcl = np.vstack([B1 + B2 @ Uw, Bk @ Yw])
    Ccl = np.hstack([C1 + D12 @ Ux, D12 @ Uk])
    Dcl = D11 + D12 @ Uw
    return _trusted_system(_blkdiag(E, Ek), Acl, Bcl, Ccl, Dcl)


def similarity(sys, V):
    """Projected realization ``(V^-1 E V, V^-1 A V, V^-1 B, C V)``."""
    E, A, B, C, D = _parts(sys)
    Vinv = np.linalg.inv(V)
    return make_system(Vinv @ E @ V, Vinv @ A @ V, Vinv @ B, C @ V, D if np.any(D) else None)


# ------------------------------------------------------------------ norms


def _sigma_max(H):
    if H.shape[1] == 1 and H.shape[2] == 1:
        return np.abs(H[:, 0, 0])
    return np.linalg.svd(H, compute_uv=False)[:, 0]


def peak_gain(sys, omega):
    """Largest singular value of ``H(i w)`` at each grid frequency.

    Frequencies that hit a pole yield ``inf``.
    """
    omega = np.asarray(omega, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = _sigma_max(freqresp(sys, 1j * omega))
    g[~np.isfinite(g)] = np.inf
    return g


def _default_grid(pole_vals, points_per_decade, marginal_tol=0.0):
    mags = np.abs(pole_vals)
    mags = mags[mags > max(marginal_tol, 0.0)]
    if len(mags) == 0:
        lo, hi = 1e-3, 1e3
    else:
        lo, hi = mags.min() * 1e-3, mags.max() * 1e3
    lo = max(lo, 1e-12)
    decades = math.log10(hi / lo)
    npts = max(int(math.ceil(decades * points_per_decade)), 16)
    grid = np.logspace(math.log10(lo), math.log10(hi), npts)
    # resonances sit near |Im p| and |p|
    extra = np.concatenate([np.abs(pole_vals.imag), np.abs(pole_vals)])
    extra = extra[(extra > lo) & (extra < hi)]
    return np.unique(np.concatenate([grid, extra]))


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f, a, b, xtol=1e-10, max_iter=200):
    """Maximize f over [a, b] (log-frequency coordinates)."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= xtol * max(1.0, abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def _refine_peaks(sys, omega, gains, n_candidates=4):
    """Golden-section refinement around the best local maxima of a grid scan."""
    finite = np.isfinite(gains)
    if not np.any(finite):
        return np.inf, float(omega[0])
    idx = np.arange(len(omega))
    interior = (idx > 0) & (idx < len(omega) - 1)
    left = np.r_[-np.inf, gains[:-1]]
    right = np.r_[gains[1:], -np.inf]
    local = np.flatnonzero((gains >= left) & (gains >= right) & finite)
    order = local[np.argsort(gains[local])[::-1]][:n_candidates]
    best_g = float(np.max(gains[finite]))
    best_w = float(omega[np.flatnonzero(gains == best_g)[0]])

    def g_of_logw(lw):
        return float(peak_gain(sys, [10.0**lw])[0])

    for i in order:
        if not interior[i] or omega[i - 1] <= 0:
            continue
        lw, g = _golden_max(g_of_logw, math.log10(omega[i - 1]), math.log10(omega[i + 1]))
        if g > best_g:
            best_g, best_w = g, 10.0**lw
    return best_g, best_w


def _hamiltonian(A, B, C, D, gamma):
    R = gamma**2 * np.eye(D.shape[1]) - D.T @ D
    Rinv = np.linalg.inv(R)
    Af = A + B @ Rinv @ D.T @ C
    top = np.hstack([Af, B @ Rinv @ B.T])
    bottom = np.hstack([-C.T @ (np.eye(D.shape[0]) + D @ Rinv @ D.T) @ C, -Af.T])
    return np.vstack([top, bottom])


def _imaginary_crossings(sys, gamma, rtol=1e-7):
    """Frequencies where some singular value of H(iw) equals gamma."""
    D = sys.feedthrough()
    if D.size and np.linalg.norm(D, 2) >= gamma:
        return None
    ev = np.linalg.eigvals(_hamiltonian(sys.A, sys.B, sys.C, D, gamma))
    tol = rtol * max(1.0, np.abs(ev).max())
    on_axis = ev[np.abs(ev.real) < tol]
    return np.unique(np.abs(on_axis.imag))


def hinf_norm(sys, points_per_decade=2000, omega=None, marginal_tol=0.0, certify=True):
    """H-infinity norm and the frequency where it is attained.

    A dense logarithmic scan is refined by golden-section search around the
    best bins. For ``E = I`` the result is checked against the Hamiltonian
    test at ``gamma (1 +- 1e-6)``; any crossing found above the bracket is
    fed back into the refinement.

    Parameters
    ----------
    sys : DescriptorSystem
        Stable system (feed-through allowed).
    points_per_decade : int
        Scan density of the automatic grid.
    omega : array_like, optional
        Explicit scan grid in rad/s; replaces the automatic one.
    marginal_tol : float
        Poles with ``|p| < marginal_tol`` are tolerated (structural
        integrators). The scan then excludes ``w = 0`` and the certificate is
        skipped.

    Returns
    -------
    gamma : float
    peak_freq : float
        rad/s; ``inf`` when the supremum is the high-frequency limit.
    """
    D = sys.feedthrough()
    d_norm = float(np.linalg.norm(D, 2)) if D.size else 0.0
    if sys.n == 0:
        return d_norm, 0.0
    p = poles(sys)
    marginal = np.abs(p.values) < marginal_tol
    if np.any(p.values[~marginal].real >= 0):
        raise UnstableSystem(f"system has poles with Re >= 0 (abscissa {p.abscissa:.3e})")
    if omega is None:
        omega = _default_grid(p.values[~marginal], points_per_decade, marginal_tol)
        if not np.any(marginal):
            omega = np.r_[0.0, omega]
    omega = np.sort(np.asarray(omega, dtype=float))
    gains = peak_gain(sys, omega)
    gamma, w_peak = _refine_peaks(sys, omega, gains)
    if p.n_infinite == 0 and d_norm > gamma:
        gamma, w_peak = d_norm, math.inf

    if certify and sys.is_standard and not np.any(marginal) and gamma > 0:
        for _ in range(10):
            cross = _imaginary_crossings(sys, gamma * (1 + 1e-6))
            if cross is None or len(cross) == 0:
                break
            g_c = peak_gain(sys, cross)
            k = int(np.argmax(g_c))
            if g_c[k] <= gamma:
                break
            # a peak the grid missed: rescan locally and refine
            local = cross[k] * np.logspace(-0.05, 0.05, 41)
            g_new, w_new = _refine_peaks(sys, local, peak_gain(sys, local))
            gamma, w_peak = max((g_new, w_new), (float(g_c[k]), float(cross[k])))
        else:
            logger.warning("hinf_norm certificate did not settle after 10 rounds")
    return float(gamma), float(w_peak)


def hinf_certificate(sys, gamma, rel=1e-6):
    """Hamiltonian bracket check for ``E = I``.

    Returns ``(lower_ok, upper_ok)``: the Hamiltonian at ``gamma (1 - rel)``
    has imaginary eigenvalues, and at ``gamma (1 + rel)`` it has none. A lower
    bracket at or below ``||D||`` counts as satisfied.
    """
    if not sys.is_standard:
        raise DomainError("Hamiltonian certificate needs E = I")
    lo = _imaginary_crossings(sys, gamma * (1 - rel))
    hi = _imaginary_crossings(sys, gamma * (1 + rel))
    lower_ok = lo is None or len(lo) > 0
    upper_ok = hi is not None and len(hi) == 0
    return lower_ok, upper_ok


def _h2_by_quadrature(sys, scale, rtol=1e-6, max_points=2**21):
    # ||H||^2 = (1/pi) int_0^inf ||H(iw)||_F^2 dw, with w = scale * tan(theta)
    CB = sys.C @ np.linalg.solve(sys.E, sys.B)
    tail = float(np.sum(CB**2)) / scale

    def integral(npts):
        theta = np.linspace(0.0, np.pi / 2, npts + 1)[:-1]
        w = scale * np.tan(theta)
        H = freqresp(sys, 1j * w)
        f = np.sum(np.abs(H) ** 2, axis=(1, 2)) * scale / np.cos(theta) ** 2
        f = np.r_[f, tail]
        h = (np.pi / 2) / npts
        return h * (np.sum(f) - 0.5 * (f[0] + f[-1])) / np.pi

    npts = 256
    prev = integral(npts)
    while npts < max_points:
        npts *= 2
        cur = integral(npts)
        if abs(cur - prev) <= rtol * abs(cur):
            return math.sqrt(max(cur, 0.0))
        prev = cur
    logger.warning("H2 quadrature hit the point limit before reaching rtol=%g", rtol)
    return math.sqrt(max(prev, 0.0))


def h2_norm(sys, cluster_rtol=1e-8):
    """H2 norm of a stable, strictly proper system with invertible ``E``.

    Uses the pole-residue sum over a simple spectrum; when two poles are
    closer than ``cluster_rtol`` times the spectral radius, falls back to
    trapezoidal quadrature of ``||H(iw)||_F^2 / pi``.
    """
    if not sys.strictly_proper:
        raise NotStrictlyProper("H2 norm is infinite with a nonzero feed-through")
    if sys.n == 0:
        return 0.0
    if np.linalg.cond(sys.E) > 1e13:
        raise SingularE("h2_norm needs an invertible E")
    lam, WL, VR = spla.eig(sys.A, sys.E, left=True, right=True)
    if np.any(lam.real >= 0):
        raise UnstableSystem("H2 norm needs a stable system")
    radius = float(np.abs(lam).max())
    gaps = np.abs(lam[:, None] - lam[None, :]) + np.diag(np.full(len(lam), np.inf))
    denom = np.einsum("ij,ik,kj->j", WL.conj(), sys.E, VR)
    ill = np.abs(denom) < 1e-10 * np.linalg.norm(WL, axis=0) * np.linalg.norm(VR, axis=0)
    if gaps.min() < cluster_rtol * radius or np.any(ill):
        logger.info("clustered spectrum: using quadrature for the H2 norm")
        return _h2_by_quadrature(sys, radius)
    cv = sys.C @ VR                      # (ny, n)
    wb = (WL.conj().T @ sys.B) / denom[:, None]  # (n, nu)
    # R_i = cv[:, i] wb[i, :];  tr(R_i^H R_j) = (cv_i^H cv_j)(wb_j wb_i^H)
    G = (cv.conj().T @ cv) * (wb @ wb.conj().T).T
    val = -np.sum(G / (lam.conj()[:, None] + lam[None, :]))
    return math.sqrt(max(val.real, 0.0))

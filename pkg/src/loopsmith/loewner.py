"""Loewner-framework interpolation of frequency-response data.

Data ``{(omega_i, Phi_i)}`` are closed under conjugation, split into right
and left node sets, and turned into the Loewner and shifted Loewner matrices.
A conjugation by 2x2 unitary blocks makes the pencil real. The numerical
rank of the pencil reveals the order of the underlying rational function,
and an SVD projection produces a descriptor realization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from .errors import DomainError, EmptyResult, NodeCollision, NothingStable, OrderTooLarge
from .lti import _trusted_system, freqresp, poles
from .signals import FrequencyData

__all__ = [
    "LoewnerPencil",
    "LoewnerDiagnostics",
    "prepare_data",
    "build_pencil",
    "detect_order",
    "realize",
    "enforce_stability",
    "interpolation_residual",
    "complex_form_transfer",
    "loewner_fit",
]

_CHECK_SEED = 7
_J = np.array([[1.0, -1.0j], [1.0, 1.0j]]) / np.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class LoewnerPencil:
    """Real-form Loewner pencil plus the complex data it came from.

    ``LL`` and ``sLL`` are ``q x k`` (left by right nodes), ``V`` is ``q x 1``
    and ``W`` is ``1 x k``. The ``*_c`` fields hold the complex form before
    realification.
    """

    LL: np.ndarray
    sLL: np.ndarray
    V: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    v: np.ndarray
    LL_c: np.ndarray = field(repr=False)
    sLL_c: np.ndarray = field(repr=False)
    V_c: np.ndarray = field(repr=False)
    W_c: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.LL.shape


@dataclass(frozen=True)
class LoewnerDiagnostics:
    raw_dimension: int
    mcmillan_degree: int
    minimal_degree: int
    selected_order: int
    rank_row: int
    rank_col: int
    tol_rel: float
    d_case: bool
    sv_row: tuple
    sv_col: tuple

    def to_dict(self):
        return {
            "raw_dimension": self.raw_dimension,
            "mcmillan_degree": self.mcmillan_degree,
            "minimal_degree": self.minimal_degree,
            "selected_order": self.selected_order,
            "rank_row_stacked": self.rank_row,
            "rank_col_stacked": self.rank_col,
            "rank_disagreement": abs(self.rank_row - self.rank_col),
            "tol_rel": self.tol_rel,
            "d_or_polynomial_case": self.d_case,
            "singular_values_row": list(self.sv_row),
            "singular_values_col": list(self.sv_col),
        }


def prepare_data(data, f_max=np.inf, undersample=1):
    """Keep every ``undersample``-th point with ``omega <= 2 pi f_max``."""
    undersample = int(undersample)
    if undersample < 1:
        raise DomainError(f"undersample must be >= 1, got {undersample}")
    keep = data.omega <= 2 * np.pi * f_max
    w, v = data.omega[keep][::undersample], data.values[keep][::undersample]
    if len(w) == 0:
        raise EmptyResult("no frequency point below f_max")
    return FrequencyData(w, v)


def _closed_nodes(omega, values):
    """Conjugate-closed node list plus the realification transform for it."""
    nodes, vals, blocks = [], [], []
    for wk, hk in zip(omega, values):
        if wk == 0.0:
            nodes.append(0.0)
            vals.append(complex(hk.real, 0.0))
            blocks.append(np.ones((1, 1)))
        else:
            nodes += [1j * wk, -1j * wk]
            vals += [hk, np.conj(hk)]
            blocks.append(_J)
    return np.array(nodes, dtype=complex), np.array(vals, dtype=complex), spla.block_diag(*blocks)


def _split(n, split):
    idx = np.arange(n)
    if split == "alternate":
        return idx[0::2], idx[1::2]
    if split == "half":
        return idx[: (n + 1) // 2], idx[(n + 1) // 2:]
    raise DomainError(f"unknown split {split!r}")


def build_pencil(data, split="alternate"):
    """Loewner pencil from SISO frequency data.

    Parameters
    ----------
    data : FrequencyData
        At least 4 points.
    split : {"alternate", "half"}
        ``alternate`` sends even-indexed frequencies (ascending) to the right
        set and odd-indexed ones to the left set; ``half`` sends the lower
        half right.
    """
    if len(data) < 4:
        raise DomainError(f"need at least 4 frequency points, got {len(data)}")
    ri, li = _split(len(data), split)
    lam, w, Jr = _closed_nodes(data.omega[ri], data.values[ri])
    mu, v, Jl = _closed_nodes(data.omega[li], data.values[li])
    diff = mu[:, None] - lam[None, :]
    scale = max(np.abs(lam).max(), np.abs(mu).max(), 1.0)
    if np.any(np.abs(diff) <= 1e-14 * scale):
        raise NodeCollision("a left node coincides with a right node")
    LL_c = (v[:, None] - w[None, :]) / diff
    sLL_c = (mu[:, None] * v[:, None] - lam[None, :] * w[None, :]) / diff
    V_c = v[:, None]
    W_c = w[None, :]
    _spot_check(LL_c, sLL_c, lam, w, mu, v)

    JlH = Jl.conj().T
    parts = [JlH @ LL_c @ Jr, JlH @ sLL_c @ Jr, JlH @ V_c, W_c @ Jr]
    real = []
    for m in parts:
        tol = 1e-10 * max(np.abs(m).max(), 1e-300)
        if np.abs(m.imag).max(initial=0.0) > tol:
            raise DomainError("realification left a non-negligible imaginary part")
        real.append(np.ascontiguousarray(m.real))
    return LoewnerPencil(*real, lam, w, mu, v, LL_c, sLL_c, V_c, W_c)


def _spot_check(LL, sLL, lam, w, mu, v, count=10):
    rng = np.random.default_rng(_CHECK_SEED)
    for _ in range(count):
        j, i = rng.integers(len(mu)), rng.integers(len(lam))
        d = mu[j] - lam[i]
        ok = np.isclose(LL[j, i], (v[j] - w[i]) / d, rtol=1e-12, atol=0) and np.isclose(
            sLL[j, i], (mu[j] * v[j] - lam[i] * w[i]) / d, rtol=1e-12, atol=0
        )
        if not ok:
            raise DomainError(f"Loewner entry ({j}, {i}) failed recomputation")


def detect_order(p, tol_rel=1e-8):
    """Numerical ranks of the pencil.

    ``mcmillan_degree`` is the rank of ``[LL, sLL]``, ``minimal_degree`` the
    rank of ``LL``; they differ when the data carry a constant (or
    polynomial) part. The selected order is the minimal degree, so the
    realization is strictly proper.
    """
    sv_row = np.linalg.svd(np.hstack([p.LL, p.sLL]), compute_uv=False)
    sv_col = np.linalg.svd(np.vstack([p.LL, p.sLL]), compute_uv=False)
    sv_ll = np.linalg.svd(p.LL, compute_uv=False)
    # one common reference so the three ranks are comparable
    ref = max(sv_row[0], sv_col[0])
    cut = tol_rel * ref if ref > 0 else np.inf
    rank_row = int(np.sum(sv_row > cut))
    rank_col = int(np.sum(sv_col > cut))
    nu = max(rank_row, rank_col)
    r = min(int(np.sum(sv_ll > cut)), nu)
    return LoewnerDiagnostics(
        raw_dimension=int(min(p.shape)),
        mcmillan_degree=nu,
        minimal_degree=r,
        selected_order=r,
        rank_row=rank_row,
        rank_col=rank_col,
        tol_rel=tol_rel,
        d_case=r != nu,
        sv_row=tuple(float(s) for s in sv_row),
        sv_col=tuple(float(s) for s in sv_col),
    )


def _projectors(LL, sLL, order):
    Y = np.linalg.svd(np.hstack([LL, sLL]), full_matrices=False)[0][:, :order]
    X = np.linalg.svd(np.vstack([LL, sLL]), full_matrices=False)[2][:order].conj().T
    return Y, X


def realize(p, order):
    """SVD-projected realization ``(-Y^T LL X, -Y^T sLL X, Y^T V, W X)``."""
    order = int(order)
    if not 1 <= order <= min(p.shape):
        raise OrderTooLarge(f"order must lie in [1, {min(p.shape)}], got {order}")
    Y, X = _projectors(p.LL, p.sLL, order)
    E = -Y.T @ p.LL @ X
    A = -Y.T @ p.sLL @ X
    B = Y.T @ p.V
    C = p.W @ X
    return _trusted_system(E, A, B, C, None)


def complex_form_transfer(p, order, s):
    """Transfer of the realization built from the complex pencil, at points ``s``."""
    Y, X = _projectors(p.LL_c, p.sLL_c, order)
    YH = Y.conj().T
    E, A = -YH @ p.LL_c @ X, -YH @ p.sLL_c @ X
    B, C = YH @ p.V_c, p.W_c @ X
    return np.array([(C @ np.linalg.solve(sk * E - A, B)).item() for sk in np.atleast_1d(s)])


def interpolation_residual(sys, data):
    """Largest relative mismatch ``|H(i w_i) - Phi_i| / |Phi_i|`` over the data."""
    H = freqresp(sys, 1j * data.omega)[:, 0, 0]
    den = np.maximum(np.abs(data.values), 1e-300)
    return float(np.max(np.abs(H - data.values) / den))


def _decouple(F, G, C, select):
    """Split ``(F, G, C)`` into two decoupled blocks by an ordered real Schur form.

    Eigenvalues for which ``select(re, im)`` holds go to the first block.
    Returns ``(k, (F1, G1, C1), (F2, G2, C2))``; the transfer
    ``C (sI - F)^-1 G`` equals the sum of the two block transfers.
    """
    T, Z, k = spla.schur(F, output="real", sort=select)
    Gz, Cz = Z.T @ G, C @ Z
    T11, T12, T22 = T[:k, :k], T[:k, k:], T[k:, k:]
    if 0 < k < len(T):
        Y = spla.solve_sylvester(T11, -T22, -T12)
    else:
        Y = np.zeros((k, len(T) - k))
    first = (T11, Gz[:k] - Y @ Gz[k:], Cz[:, :k])
    second = (T22, Gz[k:], Cz[:, :k] @ Y + Cz[:, k:])
    return k, first, second


def _shift_for(E, A):
    scale = max(np.linalg.norm(A, 2), 1.0) / max(np.linalg.norm(E, 2), 1e-300)
    for c in (1.6180339887, 2.7182818285, 0.7071067812, 3.1415926536, 0.5772156649):
        alpha = c * scale
        M = alpha * E - A
        if np.linalg.cond(M) < 1e10:
            return alpha, M
    raise DomainError("could not find a regular shift for the pencil")


def _default_omega(pole_values):
    finite = pole_values[np.isfinite(pole_values)]
    mags = np.abs(finite[finite != 0])
    if len(mags) == 0:
        mags = np.array([1.0])
    return np.logspace(np.log10(mags.min()) - 2, np.log10(mags.max()) + 2, 2000)


def enforce_stability(sys, report=False, omega=None):
    """Keep only the stable modal part of a model.

    With invertible ``E`` the model is brought to standard form and split by
    an ordered real Schur decomposition followed by a Sylvester decoupling;
    the unstable block is dropped and the stable residues are kept exactly.
    With singular ``E`` the pencil is shifted first,
    ``F = (alpha E - A)^-1 E``, so that a pole ``lambda`` becomes the
    eigenvalue ``1 / (alpha - lambda)`` of ``F`` and infinite eigenvalues
    become zero; that nilpotent block is kept as a constant feed-through.

    Parameters
    ----------
    sys : DescriptorSystem
    report : bool
        Also return a dict with the number of discarded modes and the peak
        gain of the discarded part on ``omega`` (an L-infinity distance
        estimate; the difference is unstable so it has no H-infinity norm).
    omega : array_like, optional
        Grid for that estimate; defaults to 2000 log-spaced points spanning
        the pole magnitudes.

    Returns
    -------
    DescriptorSystem or (DescriptorSystem, dict)
        The input object itself when nothing had to be removed.
    """
    D = sys.feedthrough()
    ps = poles(sys)
    if ps.stable and ps.n_infinite == 0:
        info = {"discarded": 0, "distance": 0.0, "infinite_modes": 0}
        return (sys, info) if report else sys
    if ps.n_infinite == 0:
        F = np.linalg.solve(sys.E, sys.A)
        G = np.linalg.solve(sys.E, sys.B)
        k, (A1, B1, C1), _ = _decouple(F, G, sys.C, "lhp")
    else:
        alpha, M = _shift_for(sys.E, sys.A)
        F = np.linalg.solve(M, sys.E)
        G = np.linalg.solve(M, sys.B)
        tol = 1e-10 * max(np.abs(np.linalg.eigvals(F)).max(), 1e-300)

        def stable_finite(re, im):
            mu = complex(re, im)
            return abs(mu) > tol and (alpha - 1.0 / mu).real < 0

        k, (F1, G1, C1), rest = _decouple(F, G, sys.C, stable_finite)
        F2, G2, C2 = rest
        if len(F2):
            _, _, (F3, G3, C3) = _decouple(F2, G2, C2, lambda re, im: np.hypot(re, im) > tol)
            # C3 (I - (alpha - s) F3)^-1 G3 with F3 nilpotent; index one gives F3 = 0
            D = D + C3 @ G3
        # C1 (I - (alpha - s) F1)^-1 G1 in standard form
        A1 = alpha * np.eye(k) - np.linalg.inv(F1) if k else np.zeros((0, 0))
        B1 = np.linalg.solve(F1, G1) if k else np.zeros((0, sys.n_u))
    if k == 0:
        raise NothingStable("the model has no stable mode")
    out = _trusted_system(np.eye(k), A1, B1, C1, D if np.any(D) else None)
    if not report:
        return out
    omega = _default_omega(ps.values) if omega is None else np.asarray(omega, dtype=float)
    diff = freqresp(sys, 1j * omega) - freqresp(out, 1j * omega)
    info = {
        "discarded": int(sys.n - k - ps.n_infinite),
        "distance": float(np.max(np.abs(diff))),
        "infinite_modes": int(ps.n_infinite),
    }
    return out, info


def loewner_fit(data, f_max=np.inf, undersample=1, tol_rel=1e-8, split="alternate", order=None):
    """Full data-to-model path: filter, pencil, order, realization, stable part.

    Returns ``(model, diagnostics, info)`` where ``info`` holds the
    stability-enforcement report and the interpolation residual of the raw
    realization.
    """
    d = prepare_data(data, f_max, undersample)
    p = build_pencil(d, split)
    diag = detect_order(p, tol_rel)
    k = diag.selected_order if order is None else int(order)
    if k < 1:
        raise EmptyResult("the data carry no dynamics above the rank tolerance")
    raw = realize(p, k)
    stable, rep = enforce_stability(raw, report=True)
    rep["interpolation_residual"] = interpolation_residual(raw, d)
    rep["n_points"] = len(d)
    return stable, diag, rep

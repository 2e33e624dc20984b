"""H2-oriented model reduction by iterative tangential interpolation.

The reduced model is obtained by two-sided (Petrov-Galerkin) projection onto
rational Krylov directions at a set of shifts. The shifts are then replaced
by the mirror images of the reduced poles and the procedure is repeated. At
a fixed point the reduced model interpolates the full one, with its
derivative, at its own mirrored poles, which is the first-order condition for
H2 optimality.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla
from scipy.optimize import linear_sum_assignment

from .errors import DomainError, NoConvergence, OrderTooLarge, SingularE, UnstableInput
from .lti import _trusted_system, h2_norm, interconnect, negate, peak_gain, poles

logger = logging.getLogger(__name__)

__all__ = ["ReductionReport", "itia_reduce", "shift_init", "modal_data"]


@dataclass
class ReductionReport:
    iterations: int = 0
    shift_history: list = field(default_factory=list)
    delta_hr: list = field(default_factory=list)
    unconverged_shifts: int = 0
    unconverged_history: list = field(default_factory=list)
    converged: bool = False
    h2_error_rel: float | None = None
    band: tuple = (0.0, np.inf)

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "unconverged_shifts": self.unconverged_shifts,
            "shift_history": [[{"re": s.real, "im": s.imag} for s in row] for row in self.shift_history],
            "delta_hr": list(self.delta_hr),
            "unconverged_history": list(self.unconverged_history),
            "h2_error_rel": self.h2_error_rel,
            "band_rad_s": list(self.band),
        }


def _conjugate_closed(values, tol=1e-10):
    """Force exact conjugate pairing and a canonical order (real first, then +imag)."""
    vals = np.asarray(values, dtype=complex)
    scale = max(np.abs(vals).max(initial=0.0), 1.0)
    real = vals[np.abs(vals.imag) <= tol * scale].real
    upper = vals[vals.imag > tol * scale]
    out = [complex(x) for x in np.sort(real)]
    for z in upper[np.argsort(upper.imag)]:
        out += [complex(z), complex(z.conjugate())]
    return np.array(out, dtype=complex)


def modal_data(H):
    """Poles and scalar residues of a SISO model with invertible ``E``.

    Returns ``(poles, residues, cond)`` where ``cond`` is the condition number
    of the right eigenvector matrix.
    """
    lam, Yl, Xr = spla.eig(H.A, H.E, left=True, right=True)
    num = (H.C @ Xr).ravel() * (Yl.conj().T @ H.B).ravel()
    den = np.einsum("ij,ik,kj->j", Yl.conj(), H.E, Xr)
    with np.errstate(divide="ignore", invalid="ignore"):
        res = num / den
    return lam, res, np.linalg.cond(Xr)


def shift_init(H, r, band=(0.0, np.inf)):
    """Initial interpolation shifts, conjugate-closed, in the open right half plane.

    Mirrored poles of ``H`` within the band (``|Im p| <= band[1]``) ranked by
    ``|residue| / |Re p|``; conjugate pairs are taken together. Slots that
    cannot be filled that way, or a failed residue computation, fall back to
    log-spaced real shifts across the band.
    """
    r = int(r)
    lo, hi = float(band[0]), float(band[1])
    chosen = []
    try:
        lam, res, cond = modal_data(H)
        ok = np.isfinite(lam) & np.isfinite(res) & (cond < 1e12)
        if not np.all(ok):
            raise np.linalg.LinAlgError("defective modal data")
        score = np.abs(res) / np.abs(lam.real)
        used = np.zeros(len(lam), bool)
        for j in np.argsort(-score, kind="stable"):
            if used[j] or abs(lam[j].imag) > hi:
                continue
            is_pair = abs(lam[j].imag) > 1e-10 * abs(lam[j])
            need = 2 if is_pair else 1
            if len(chosen) + need > r:
                continue
            used[j] = True
            chosen.append(lam[j])
            if is_pair:
                mate = np.argmin(np.where(used, np.inf, np.abs(lam - lam[j].conjugate())))
                used[mate] = True
                chosen.append(lam[j].conjugate())
            if len(chosen) == r:
                break
    except (np.linalg.LinAlgError, ValueError):
        chosen = []
    shifts = [-np.conj(p) for p in chosen]
    missing = r - len(shifts)
    if missing:
        top = hi if np.isfinite(hi) and hi > 0 else max(np.abs(poles(H).values).max(), 1.0)
        bottom = lo if lo > 0 else top * 1e-2
        shifts += list(np.logspace(np.log10(bottom), np.log10(top), missing + 2)[1:-1].astype(complex))
    return _conjugate_closed(shifts)


def _real_basis(vectors, shifts):
    cols = []
    for v, s in zip(vectors.T, shifts):
        if s.imag > 0:
            cols += [v.real, v.imag]
        elif s.imag == 0:
            cols.append(v.real)
    Q, _ = np.linalg.qr(np.column_stack(cols))
    return Q


def _project(H, shifts):
    """Two-sided projection at ``shifts``; returns the reduced model in standard form."""
    E, A, B, C = H.E, H.A, H.B, H.C
    V = np.empty((H.n, len(shifts)), complex)
    W = np.empty((H.n, len(shifts)), complex)
    for i, s in enumerate(shifts):
        if s.imag < 0:
            continue
        lu = spla.lu_factor(s * E - A)
        V[:, i] = spla.lu_solve(lu, B[:, 0].astype(complex))
        W[:, i] = spla.lu_solve(lu, C[0].astype(complex), trans=2)
    Vr, Wr = _real_basis(V, shifts), _real_basis(W, shifts)
    Er = Wr.T @ E @ Vr
    if np.linalg.cond(Er) > 1e12:
        raise SingularE("projected E is singular; shifts are not admissible")
    Ar = np.linalg.solve(Er, Wr.T @ A @ Vr)
    Br = np.linalg.solve(Er, Wr.T @ B)
    return _trusted_system(np.eye(len(Ar)), Ar, Br, C @ Vr, None)


def _match_change(new, old):
    d = np.abs(new[:, None] - old[None, :]) / np.maximum(np.abs(old[None, :]), 1e-300)
    ri, ci = linear_sum_assignment(d)
    return float(d[ri, ci].max())


def _grid_for(H):
    mags = np.abs(poles(H).values)
    mags = mags[mags > 0]
    lo, hi = (mags.min(), mags.max()) if len(mags) else (1.0, 1.0)
    return np.logspace(np.log10(lo) - 2, np.log10(hi) + 2, 600)


def itia_reduce(H, r, max_iter=100, tol=1e-6, band=(0.0, np.inf), init="auto"):
    """Reduce ``H`` to order ``r`` by iterative tangential interpolation.

    Parameters
    ----------
    H : DescriptorSystem
        Stable SISO model with invertible ``E``.
    r : int
        Target order, ``1 <= r <= H.n``.
    max_iter : int
    tol : float
        Convergence threshold on the largest relative change of the shifts
        between two iterations.
    band : (float, float)
        Frequency band in rad/s used by the automatic shift choice.
    init : "auto" or array_like
        Initial shifts; ``auto`` calls :func:`shift_init`.

    Returns
    -------
    Hr : DescriptorSystem
        Reduced model with ``E = I``.
    report : ReductionReport

    Raises
    ------
    UnstableInput
        ``H`` is not stable.
    NoConvergence
        ``max_iter`` reached; the last iterate and report are attached.
    """
    if H.shape != (1, 1):
        raise DomainError("reduction handles SISO models only")
    r = int(r)
    if not 1 <= r <= H.n:
        raise OrderTooLarge(f"reduced order must lie in [1, {H.n}], got {r}")
    if np.linalg.cond(H.E) > 1e12:
        raise SingularE("reduction needs an invertible E")
    ps = poles(H)
    if not ps.stable:
        raise UnstableInput(f"input model has spectral abscissa {ps.abscissa:.3g} >= 0")

    if isinstance(init, str):
        if init != "auto":
            raise DomainError(f"unknown shift initialization {init!r}")
        shifts = shift_init(H, r, band)
    else:
        shifts = _conjugate_closed(init)
        if len(shifts) != r or np.any(shifts.real <= 0):
            raise DomainError("initial shifts must be r values in the open right half plane")

    report = ReductionReport(band=(float(band[0]), float(band[1])))
    grid = _grid_for(H)
    Hr_prev = None
    Hr = None
    for it in range(1, max_iter + 1):
        Hr = _project(H, shifts)
        report.shift_history.append(shifts.copy())
        if Hr_prev is not None:
            cur = peak_gain(Hr, grid).max()
            diff = peak_gain(interconnect("parallel", Hr, negate(Hr_prev)), grid).max()
            report.delta_hr.append(float(diff / cur) if cur > 0 else float("inf"))
        lam = np.linalg.eigvals(Hr.A)
        mirrored = -np.conj(lam)
        escaped = mirrored.real <= 0
        nxt = _conjugate_closed(np.where(escaped, lam, mirrored))
        report.unconverged_history.append(int(escaped.sum()))
        change = _match_change(nxt, shifts)
        report.iterations = it
        logger.debug("itia iteration %d: shift change %.3e, unconverged %d", it, change, escaped.sum())
        if change < tol and not escaped.any():
            report.converged = True
            report.unconverged_shifts = 0
            break
        shifts = nxt
        Hr_prev = Hr
    else:
        report.unconverged_shifts = report.unconverged_history[-1]
        raise NoConvergence(f"no fixed point after {max_iter} iterations", best=Hr, report=report)

    try:
        err = h2_norm(interconnect("parallel", H, negate(Hr)))
        report.h2_error_rel = float(err / h2_norm(H))
    except (DomainError, np.linalg.LinAlgError):
        report.h2_error_rel = None
    return Hr, report

"""Mixed-sensitivity generalized plant and fixed-structure H-infinity synthesis.

The controller has the fixed form ``K = (I, A(theta), B(theta), C(theta), 0)``
of order ``nc``. Its parameters are tuned by a derivative-free multistart
pattern search on the peak gain of the weighted closed loop, with a barrier
that rejects any parameter vector whose loop is not internally stable.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, DomainError, NoStabilizingController
from .lti import (
    DescriptorSystem,
    RationalWeight,
    _trusted_system,
    freqresp,
    hinf_norm,
    interconnect,
    lft_lower,
    make_weight,
    poles,
    select,
)

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_WU",
    "DEFAULT_WE",
    "GeneralizedPlant",
    "StructuredController",
    "SynthesisResult",
    "build_generalized_plant",
    "closed_loop_channels",
    "synthesis_grid",
    "synthesize",
]

DEFAULT_WU = RationalWeight(1.0, 1.0, 1e-3, 1.0)
DEFAULT_WE = RationalWeight(10.0, 10.0, 1.0, 0.0)
PARTITION = (1, 1, 2, 1)
MARGINAL_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class GeneralizedPlant:
    """``[z_u; z_e; e] = P [r; u]`` with ``P = [[0, Wu], [We, -We Hr], [1, -Hr]]``."""

    P: DescriptorSystem
    Hr: DescriptorSystem
    Wu: RationalWeight
    We: RationalWeight
    partition: tuple = PARTITION


def build_generalized_plant(Hr, Wu=DEFAULT_WU, We=DEFAULT_WE):
    """Assemble the weighted plant; states are ordered ``(Hr, Wu, We)``."""
    if Hr.shape != (1, 1):
        raise DimensionMismatch(f"Hr must be SISO, got shape {Hr.shape}")
    if not isinstance(Wu, RationalWeight):
        Wu = RationalWeight(*Wu)
    if not isinstance(We, RationalWeight):
        We = RationalWeight(*We)
    Eh, Ah, Bh, Ch, Dh = Hr.E, Hr.A, Hr.B, Hr.C, Hr.feedthrough()
    wu, we = make_weight(Wu), make_weight(We)
    Eu, Au, Bu, Cu, Du = wu.E, wu.A, wu.B, wu.C, wu.feedthrough()
    Ee, Ae, Be, Ce, De = we.E, we.A, we.B, we.C, we.feedthrough()
    nh, nu_, ne = Hr.n, wu.n, we.n
    Z = np.zeros
    E = np.block([
        [Eh, Z((nh, nu_)), Z((nh, ne))],
        [Z((nu_, nh)), Eu, Z((nu_, ne))],
        [Z((ne, nh)), Z((ne, nu_)), Ee],
    ])
    A = np.block([
        [Ah, Z((nh, nu_)), Z((nh, ne))],
        [Z((nu_, nh)), Au, Z((nu_, ne))],
        [-Be @ Ch, Z((ne, nu_)), Ae],
    ])
    B = np.block([
        [Z((nh, 1)), Bh],
        [Z((nu_, 1)), Bu],
        [Be, -Be @ Dh],
    ])
    C = np.block([
        [Z((1, nh)), Cu, Z((1, ne))],
        [-De @ Ch, Z((1, nu_)), Ce],
        [-Ch, Z((1, nu_)), Z((1, ne))],
    ])
    D = np.block([
        [Z((1, 1)), Du],
        [De, -De @ Dh],
        [np.ones((1, 1)), -Dh],
    ])
    return GeneralizedPlant(_trusted_system(E, A, B, C, D), Hr, Wu, We)


@dataclass(frozen=True, eq=False)
class StructuredController:
    """Strictly proper controller ``(I, A, B, C, 0)``.

    ``theta`` stacks ``A`` row-major, then ``B``, then ``C``:
    ``(a_1 .. a_{nc^2}, b_1 .. b_nc, c_1 .. c_nc)``.
    """

    nc: int
    theta: np.ndarray

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).ravel()
        if self.nc < 1 or th.size != self.nc**2 + 2 * self.nc:
            raise DomainError(f"order {self.nc} needs {self.nc**2 + 2 * self.nc} parameters, got {th.size}")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @classmethod
    def from_matrices(cls, A, B, C):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(A.shape[0], np.r_[A.ravel(), np.ravel(B), np.ravel(C)])

    @property
    def A(self):
        return self.theta[: self.nc**2].reshape(self.nc, self.nc)

    @property
    def B(self):
        return self.theta[self.nc**2: self.nc**2 + self.nc].reshape(self.nc, 1)

    @property
    def C(self):
        return self.theta[self.nc**2 + self.nc:].reshape(1, self.nc)

    @property
    def system(self):
        return DescriptorSystem(np.eye(self.nc), self.A, self.B, self.C)

    def to_dict(self):
        return {"nc": self.nc, "theta": self.theta.tolist(), "A": self.A, "B": self.B, "C": self.C}

    @classmethod
    def from_dict(cls, doc):
        return cls(int(doc["nc"]), doc["theta"])


def _as_system(K):
    return K.system if isinstance(K, StructuredController) else K


def closed_loop_channels(gp, K):
    """Weighted closed loop and its named SISO channels.

    Returns a dict with ``T`` (``r -> [z_u; z_e]``), ``T_ru`` (``Wu K S``),
    ``T_re`` (``We S``) and ``T_ry`` (``Hr K S``), ``S = 1 / (1 + Hr K)``.
    """
    Ks = _as_system(K)
    T = lft_lower(gp.P, Ks, gp.partition)
    return {
        "T": T,
        "T_ru": select(T, [0], [0]),
        "T_re": select(T, [1], [0]),
        "T_ry": interconnect("feedback_unity", gp.Hr, Ks),
    }


def synthesis_grid(w_min=1e-3, w_max=1e4, points_per_decade=400, tail_min=1e-8, tail_ppd=20):
    """Frequency grid for the synthesis objective and template checks.

    The main band carries ``points_per_decade``; a sparse tail reaching down
    to ``tail_min`` keeps the integral action of the weighting honest.
    """
    main = np.logspace(np.log10(w_min), np.log10(w_max), int(round(np.log10(w_max / w_min) * points_per_decade)) + 1)
    if tail_min is None or tail_min >= w_min:
        return main
    n_tail = int(round(np.log10(w_min / tail_min) * tail_ppd))
    tail = np.logspace(np.log10(tail_min), np.log10(w_min), n_tail, endpoint=False)
    return np.r_[tail, main]


class _Objective:
    """Vectorized objective ``max(sup_grid sigma(T), Wk ||K||)`` plus stability barrier."""

    def __init__(self, gp, nc, Wk, grid):
        self.nc = nc
        self.Wk = float(Wk)
        self.s = 1j * np.asarray(grid)
        Hr = gp.Hr
        self.h = freqresp(Hr, self.s)[:, 0, 0]
        self.we = gp.We(self.s)
        self.wu = gp.Wu(self.s)
        self.sk = np.r_[0.0, self.s]
        F = np.linalg.solve(Hr.E, Hr.A)
        G = np.linalg.solve(Hr.E, Hr.B)
        self.F, self.G, self.Ch, self.Dh = F, G, Hr.C, Hr.feedthrough()
        self.evals = 0

    def controller_response(self, A, B, C, s):
        if self.nc == 2:
            a, b, c, d = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
            det = (s - a) * (s - d) - b * c
            x0 = ((s - d) * B[0, 0] + b * B[1, 0]) / det
            x1 = (c * B[0, 0] + (s - a) * B[1, 0]) / det
            return C[0, 0] * x0 + C[0, 1] * x1
        M = s[:, None, None] * np.eye(self.nc) - A
        return (C @ np.linalg.solve(M, np.broadcast_to(B, (len(s),) + B.shape)))[:, 0, 0]

    def loop_matrix(self, A, B, C):
        # weights sit outside the loop, so internal stability is decided here
        F, G, Ch, Dh = self.F, self.G, self.Ch, self.Dh
        return np.block([[F, G @ C], [-B @ Ch, A - B @ Dh @ C]])

    def stable(self, th):
        nc = self.nc
        A = th[: nc * nc].reshape(nc, nc)
        B = th[nc * nc: nc * nc + nc].reshape(nc, 1)
        C = th[nc * nc + nc:].reshape(1, nc)
        if np.any(np.linalg.eigvals(A).real >= 0):
            return None
        if np.any(np.linalg.eigvals(self.loop_matrix(A, B, C)).real >= 0):
            return None
        return A, B, C

    def __call__(self, th):
        self.evals += 1
        mats = self.stable(th)
        if mats is None:
            return np.inf
        A, B, C = mats
        with np.errstate(all="ignore"):
            k_all = self.controller_response(A, B, C, self.sk)
            k = k_all[1:]
            S = 1.0 / (1.0 + self.h * k)
            sig = np.sqrt(np.abs(self.we * S) ** 2 + np.abs(self.wu * k * S) ** 2)
            val = max(np.max(sig), self.Wk * np.max(np.abs(k_all)))
        return float(val) if np.isfinite(val) else np.inf


def _pattern_search(f, x0, step0, max_evals, xtol=1e-10):
    """Coordinate pattern search with per-coordinate adaptive steps.

    A successful move doubles that coordinate's step (and keeps its
    direction first next time); a failed pair of probes halves it.
    Returns ``(x, fx, log)`` with ``log`` the list of ``(eval, f, best)``.
    """
    x = np.array(x0, dtype=float)
    fx = f(x)
    log = [(1, fx, fx)]
    steps = np.array(step0, dtype=float)
    sign = np.ones_like(x)
    n_eval = 1
    while n_eval < max_evals:
        improved = False
        for i in range(len(x)):
            for direction in (sign[i], -sign[i]):
                if n_eval >= max_evals:
                    break
                trial = x.copy()
                trial[i] += direction * steps[i]
                ft = f(trial)
                n_eval += 1
                if ft < fx:
                    x, fx = trial, ft
                    steps[i] *= 2.0
                    sign[i] = direction
                    improved = True
                    log.append((n_eval, ft, fx))
                    break
                log.append((n_eval, ft, fx))
            else:
                steps[i] *= 0.5
        if not improved and np.all(steps <= xtol * np.maximum(np.abs(x), 1e-12)):
            break
    return x, fx, log


@dataclass
class SynthesisResult:
    controller: StructuredController
    gamma: float
    objective: float
    log: list = field(repr=False)
    starts: list = field(default_factory=list)
    grid: np.ndarray = field(default=None, repr=False)
    Wk: float = 1e-9

    def to_dict(self):
        return {
            "theta": self.controller.theta.tolist(),
            "nc": self.controller.nc,
            "gamma": self.gamma,
            "objective": self.objective,
            "Wk": self.Wk,
            "iterations": len(self.log),
            "starts": self.starts,
        }


def _initial_points(gp, nc, multistarts, seed, obj, max_tries=200):
    """PI-like first start, then seeded random starts that pass the barrier."""
    Hr = gp.Hr
    rho = max(float(np.abs(poles(Hr).values).max(initial=0.0)), 1e-3)
    h0 = abs(freqresp(Hr, [0.0])[0, 0, 0])
    h0 = h0 if h0 > 0 else 1.0
    A = np.diag(-np.r_[1e-8, np.full(nc - 1, rho)])
    B = np.ones((nc, 1))
    C = np.zeros((1, nc))
    C[0, 0] = 0.5 / h0
    starts = [np.r_[A.ravel(), B.ravel(), C.ravel()]]
    seeds = np.random.SeedSequence(seed).spawn(max(multistarts - 1, 0))
    for ss in seeds:
        rng = np.random.default_rng(ss)
        chosen = None
        for _ in range(max_tries):
            th = np.r_[
                rng.normal(scale=rho, size=nc * nc),
                rng.normal(size=nc),
                rng.normal(scale=1.0 / h0, size=nc),
            ]
            if obj.stable(th) is not None:
                chosen = th
                break
        starts.append(chosen)
    return starts


def _n_workers():
    try:
        return max(1, int(os.environ.get("LOOPSMITH_THREADS", "1")))
    except ValueError:
        return 1


def synthesize(gp, nc=2, Wk=1e-9, multistarts=20, max_evals=20000, seed=0, grid=None):
    """Fixed-structure H-infinity synthesis by multistart pattern search.

    Parameters
    ----------
    gp : GeneralizedPlant
    nc : int
        Controller order.
    Wk : float
        Weight on the controller's own peak gain.
    multistarts : int
        Number of starts; the first is a low-gain PI-like controller.
    max_evals : int
        Objective evaluations allowed per start.
    seed : int
        Seeds the random starts.
    grid : array_like, optional
        Frequency grid; :func:`synthesis_grid` by default.

    Returns
    -------
    SynthesisResult
        ``gamma`` is the larger of the H-infinity norm of the weighted closed
        loop on the grid (integrator pole of ``We`` tolerated) and
        ``Wk ||K||``. ``log`` holds ``(start, eval, f, best)`` rows merged
        in start order; ``best`` is nonincreasing across the merged log.

    Raises
    ------
    NoStabilizingController
        No start passes the stability barrier.
    """
    if Wk < 0:
        raise DomainError("Wk must be nonnegative")
    grid = synthesis_grid() if grid is None else np.asarray(grid, dtype=float)
    obj = _Objective(gp, nc, Wk, grid)
    starts = _initial_points(gp, nc, multistarts, seed, obj)

    def run(item):
        idx, th0 = item
        if th0 is None or not np.isfinite(obj(th0)):
            return idx, None, np.inf, []
        step0 = 0.1 * np.maximum(np.abs(th0), 1e-3)
        x, fx, log = _pattern_search(_Objective(gp, nc, Wk, grid), th0, step0, max_evals)
        return idx, x, fx, log

    workers = _n_workers()
    items = list(enumerate(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, items))
    else:
        results = [run(it) for it in items]
    results.sort(key=lambda r: r[0])

    merged, summary = [], []
    best_x, best_f, running = None, np.inf, np.inf
    for idx, x, fx, log in results:
        summary.append({"start": idx, "objective": fx, "evaluations": len(log), "stabilizing": x is not None})
        for n, ft, _ in log:
            running = min(running, ft)
            merged.append((idx, n, ft, running))
        if x is not None and fx < best_f:
            best_x, best_f = x, fx
    if best_x is None:
        raise NoStabilizingController("no start produced an internally stable loop")

    K = StructuredController(nc, best_x)
    T = closed_loop_channels(gp, K)["T"]
    g_t, _ = hinf_norm(T, omega=grid, marginal_tol=MARGINAL_TOL)
    g_k = Wk * max(np.abs(freqresp(K.system, 1j * np.r_[0.0, grid])[:, 0, 0]))
    gamma = float(max(g_t, g_k))
    logger.info("synthesis: gamma %.6g after %d evaluations", gamma, len(merged))
    return SynthesisResult(K, gamma, float(best_f), merged, summary, grid, float(Wk))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, linalg

from loopsmith import lti
from loopsmith.errors import (
    DimensionMismatch,
    DomainError,
    NotStrictlyProper,
    SingularAtPoint,
    SingularPencil,
    UnstableSystem,
)
from loopsmith.io import load_system, save_system

from .helpers import match_distance

D_REF, W1_REF = 0.2, 10.0


def g_closed_form(s, d=D_REF, w1=W1_REF, k=1.0):
    w0 = math.sqrt(w1**2 + d**2)
    return k / (s**2 / w0**2 + 2 * d * s / w0 + 1)


def random_stable(rng, n, ny=1, nu=1, feedthrough=False):
    # modal construction, then a random similarity so A is dense
    lam = []
    while len(lam) < n:
        if n - len(lam) >= 2 and rng.random() < 0.5:
            re, im = -rng.uniform(0.1, 5), rng.uniform(0.2, 20)
            lam += [complex(re, im), complex(re, -im)]
        else:
            lam.append(-rng.uniform(0.1, 10))
    blocks = []
    i = 0
    while i < n:
        if lam[i].imag != 0:
            blocks.append(np.array([[lam[i].real, lam[i].imag], [-lam[i].imag, lam[i].real]]))
            i += 2
        else:
            blocks.append(np.array([[lam[i].real]]))
            i += 1
    A = linalg.block_diag(*blocks)
    V = rng.normal(size=(n, n)) + 3 * np.eye(n)
    A = np.linalg.solve(V, A @ V)
    B = rng.normal(size=(n, nu))
    C = rng.normal(size=(ny, n))
    D = rng.normal(size=(ny, nu)) if feedthrough else None
    return lti.make_system(np.eye(n), A, B, C, D)


# ------------------------------------------------------------ plant builder


def test_plant_w0_literal():
    sys = lti.second_order_plant(0.2, 10.0, 1.0)
    w0 = math.sqrt(100.04)
    assert sys.C[0, 1] == pytest.approx(w0**2, rel=1e-15)
    assert w0 == pytest.approx(10.002, abs=1e-3)


def test_plant_static_gain():
    for k in (1.0, -3.0, 0.25):
        sys = lti.second_order_plant(0.35, 4.0, k)
        assert lti.eval_transfer(sys, 0)[0, 0] == pytest.approx(k, rel=1e-14)


def test_plant_matches_closed_form():
    sys = lti.second_order_plant()
    s = 3 + 4j
    assert lti.eval_transfer(sys, s)[0, 0] == pytest.approx(g_closed_form(s), rel=1e-12)


def test_plant_poles_closed_form():
    d, w1 = 0.2, 10.0
    w0 = math.sqrt(w1**2 + d**2)
    expected = np.array([-d * w0 - 1j * w0 * math.sqrt(1 - d * d), -d * w0 + 1j * w0 * math.sqrt(1 - d * d)])
    p = lti.poles(lti.second_order_plant(d, w1))
    assert p.stable
    np.testing.assert_allclose(p.values, expected, rtol=1e-12)
    np.testing.assert_allclose(p.values, [-2.0004 - 9.8000j, -2.0004 + 9.8000j], atol=1e-4)
    # oracle: generalized eigensolver on (A, E)
    sys = lti.second_order_plant(d, w1)
    np.testing.assert_allclose(np.sort_complex(linalg.eigvals(sys.A, sys.E)), expected, rtol=1e-12)


@pytest.mark.parametrize("d,w1", [(0.0, 10), (1.0, 10), (-0.1, 10), (0.5, 0.0), (0.5, -1)])
def test_plant_domain(d, w1):
    with pytest.raises(DomainError):
        lti.second_order_plant(d, w1)


# ---------------------------------------------------------------- evaluation


def test_eval_transfer_decays():
    sys = lti.second_order_plant()
    assert abs(lti.eval_transfer(sys, 1e8j)[0, 0]) < 1e-10


def test_eval_transfer_at_pole():
    sys = lti.make_system(np.eye(2), np.diag([-1.0, -2.0]), np.ones((2, 1)), np.ones((1, 2)))
    with pytest.raises(SingularAtPoint):
        lti.eval_transfer(sys, -1.0)


def test_freqresp_agrees_with_pointwise():
    rng = np.random.default_rng(1)
    sys = random_stable(rng, 6, ny=2, nu=3, feedthrough=True)
    s = 1j * np.logspace(-2, 2, 17) + 0.1
    H = lti.freqresp(sys, s)
    for k, sk in enumerate(s):
        np.testing.assert_allclose(H[k], lti.eval_transfer(sys, sk), rtol=1e-9, atol=1e-12)


def test_freqresp_descriptor_fallback():
    # singular E: the solve path must match pointwise evaluation
    E = np.diag([1.0, 0.0])
    A = np.array([[-1.0, 0.0], [0.0, -1.0]])
    sys = lti.make_system(E, A, [[1.0], [2.0]], [[1.0, 1.0]])
    s = np.array([0.5j, 2j, 10j])
    H = lti.freqresp(sys, s)[:, 0, 0]
    np.testing.assert_allclose(H, 1 / (s + 1) + 2, rtol=1e-12)


# ---------------------------------------------------------------------- poles


def test_poles_diagonal():
    sys = lti.make_system(np.eye(2), np.diag([-1.0, -2.0]), np.ones((2, 1)), np.ones((1, 2)))
    p = lti.poles(sys)
    np.testing.assert_allclose(sorted(p.values.real), [-2, -1])
    assert p.stable and p.n_infinite == 0


def test_poles_all_infinite():
    n = 3
    sys = lti.make_system(np.zeros((n, n)), np.eye(n), np.ones((n, 1)), np.ones((1, n)))
    p = lti.poles(sys)
    assert len(p.values) == 0
    assert p.n_infinite == n


def test_singular_pencil_rejected():
    with pytest.raises(SingularPencil):
        lti.make_system(np.zeros((2, 2)), np.zeros((2, 2)), np.ones((2, 1)), np.ones((1, 2)))
    E = np.array([[1.0, 0.0], [0.0, 0.0]])
    A = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(SingularPencil):
        lti.make_system(E, A, np.ones((2, 1)), np.ones((1, 2)))


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        lti.make_system(np.eye(2), np.eye(3), np.ones((3, 1)), np.ones((1, 3)))
    with pytest.raises(DimensionMismatch):
        lti.make_system(np.eye(2), np.eye(2), np.ones((3, 1)), np.ones((1, 2)))
    with pytest.raises(DimensionMismatch):
        lti.make_system(np.eye(2), np.eye(2), np.ones((2, 1)), np.ones((1, 3)))


def test_systems_are_immutable():
    sys = lti.second_order_plant()
    with pytest.raises(ValueError):
        sys.A[0, 0] = 1.0
    with pytest.raises(AttributeError):
        sys.A = np.eye(2)


# --------------------------------------------------------------------- weights


def test_weight_wu_static():
    wu = lti.make_weight(lti.RationalWeight(1, 1, 1e-3, 1))
    assert lti.eval_transfer(wu, 0)[0, 0] == pytest.approx(1.0, rel=1e-14)
    assert wu.n == 1


def test_weight_we_integrator():
    we = lti.make_weight(lti.RationalWeight(10, 10, 1, 0))
    val = lti.eval_transfer(we, 1j)[0, 0]
    assert val == pytest.approx(10 * (1 + 1j) / 1j, rel=1e-14)
    assert val == pytest.approx(10 - 10j, rel=1e-14)
    assert lti.poles(we).values[0] == 0


def test_weight_constant():
    w = lti.make_weight(lti.RationalWeight(0, 2.5, 0, 1))
    for s in (0, 1j, 3 + 4j, 100j):
        assert lti.eval_transfer(w, s)[0, 0] == pytest.approx(2.5)


def test_weight_invalid():
    with pytest.raises(DomainError):
        lti.RationalWeight(1, 1, 0, 0)


@given(
    b1=st.floats(-10, 10), b0=st.floats(-10, 10), a1=st.floats(0.01, 10), a0=st.floats(-10, 10),
    w=st.floats(0.01, 100),
)
@settings(max_examples=60, deadline=None)
def test_weight_realization_exact(b1, b0, a1, a0, w):
    wt = lti.RationalWeight(b1, b0, a1, a0)
    s = 1j * w + 0.3
    if abs(a1 * s + a0) < 1e-6:
        return
    got = lti.eval_transfer(lti.make_weight(wt), s)[0, 0]
    assert got == pytest.approx(wt(s), rel=1e-10, abs=1e-12)


# -------------------------------------------------------------- interconnect


def test_feedback_static_half():
    one = lti.static_gain([[1.0]])
    cl = lti.interconnect("feedback_unity", one)
    for s in (0, 1j, 5.0):
        assert lti.eval_transfer(cl, s)[0, 0] == pytest.approx(0.5)


def test_series_dc():
    G = lti.second_order_plant(0.2, 10, 2.0)
    K = lti.make_weight(lti.RationalWeight(1, 3, 1, 2))
    ser = lti.interconnect("series", K, G)
    assert lti.eval_transfer(ser, 0)[0, 0] == pytest.approx(2.0 * 1.5)


def test_feedback_with_integrator_dc():
    G = lti.second_order_plant()
    K = lti.make_weight(lti.RationalWeight(0, 1, 1, 0))  # 1/s
    cl = lti.interconnect("feedback_unity", G, K)
    assert abs(lti.eval_transfer(cl, 1e-9)[0, 0] - 1.0) < 1e-6


def test_interconnect_identities():
    rng = np.random.default_rng(7)
    H1 = random_stable(rng, 3, feedthrough=True)
    H2 = random_stable(rng, 4, feedthrough=True)
    for s in rng.normal(size=5) + 1j * rng.normal(size=5):
        h1, h2 = lti.eval_transfer(H1, s)[0, 0], lti.eval_transfer(H2, s)[0, 0]
        assert lti.eval_transfer(lti.interconnect("series", H1, H2), s)[0, 0] == pytest.approx(h2 * h1)
        assert lti.eval_transfer(lti.interconnect("parallel", H1, H2), s)[0, 0] == pytest.approx(h1 + h2)
        app = lti.eval_transfer(lti.interconnect("append", H1, H2), s)
        np.testing.assert_allclose(app, [[h1, 0], [0, h2]], rtol=1e-10, atol=1e-12)
        L = h1 * h2
        fb = lti.eval_transfer(lti.interconnect("feedback_unity", H1, H2), s)[0, 0]
        assert fb == pytest.approx(L / (1 + L))


def test_interconnect_errors():
    one = lti.static_gain([[1.0, 0.0]])
    with pytest.raises(DimensionMismatch):
        lti.interconnect("parallel", one, lti.static_gain([[1.0]]))
    from loopsmith.errors import IllPosedLoop
    with pytest.raises(IllPosedLoop):
        lti.interconnect("feedback_unity", lti.static_gain([[-1.0]]))
    with pytest.raises(DomainError):
        lti.interconnect("bogus", one, one)


# ------------------------------------------------------------------------ lft


def test_lft_zero_controller():
    rng = np.random.default_rng(3)
    P = random_stable(rng, 4, ny=3, nu=2, feedthrough=True)
    K0 = lti.static_gain([[0.0]])
    T = lti.lft_lower(P, K0, (1, 1, 2, 1))
    assert T.shape == (2, 1)
    for s in (0.5j, 2 + 1j):
        np.testing.assert_allclose(lti.eval_transfer(T, s), lti.eval_transfer(P, s)[:2, :1], rtol=1e-12)


def test_lft_static_scalar():
    g, kappa = 0.7, 2.3
    P = lti.static_gain([[0.0, 1.0], [1.0, -g]])
    T = lti.lft_lower(P, lti.static_gain([[kappa]]), (1, 1, 1, 1))
    assert lti.eval_transfer(T, 1j)[0, 0] == pytest.approx(kappa / (1 + g * kappa))


def test_lft_matches_formula():
    rng = np.random.default_rng(11)
    P = random_stable(rng, 5, ny=3, nu=2, feedthrough=True)
    K = random_stable(rng, 2, feedthrough=True)
    T = lti.lft_lower(P, K, (1, 1, 2, 1))
    for s in 1j * np.array([0.1, 1.0, 7.0]):
        Ps = lti.eval_transfer(P, s)
        Ks = lti.eval_transfer(K, s)
        expect = Ps[:2, :1] + Ps[:2, 1:] @ Ks @ np.linalg.inv(np.eye(1) - Ps[2:, 1:] @ Ks) @ Ps[2:, :1]
        np.testing.assert_allclose(lti.eval_transfer(T, s), expect, rtol=1e-9)


# -------------------------------------------------------------------- hinf


def test_hinf_static():
    assert lti.hinf_norm(lti.static_gain([[-3.5]]))[0] == pytest.approx(3.5)


def test_hinf_first_order():
    sys = lti.make_system([[1.0]], [[-1.0]], [[1.0]], [[1.0]])
    gamma, w = lti.hinf_norm(sys)
    assert gamma == pytest.approx(1.0, rel=1e-10)
    assert w == pytest.approx(0.0, abs=1e-3)


def test_hinf_resonance_closed_form():
    d = 0.2
    sys = lti.second_order_plant(d, 10.0, 1.0)
    w0 = math.sqrt(100.04)
    gamma, w = lti.hinf_norm(sys)
    expected = 1 / (2 * d * math.sqrt(1 - d * d))
    assert expected == pytest.approx(2.5516, abs=1e-4)
    assert gamma == pytest.approx(expected, rel=1e-9)
    assert w == pytest.approx(w0 * math.sqrt(1 - 2 * d * d), rel=1e-4)
    # brute-force grid oracle
    omega = np.linspace(0, 30, 300001)
    brute = np.abs(g_closed_form(1j * omega)).max()
    assert gamma >= brute * (1 - 1e-12)
    assert gamma == pytest.approx(brute, rel=1e-8)


def test_hinf_certificate_brackets():
    rng = np.random.default_rng(5)
    for _ in range(5):
        sys = random_stable(rng, 5, feedthrough=True)
        gamma, _ = lti.hinf_norm(sys)
        assert lti.hinf_certificate(sys, gamma) == (True, True)


def test_hinf_unstable_rejected():
    sys = lti.make_system([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    with pytest.raises(UnstableSystem):
        lti.hinf_norm(sys)


def test_hinf_submultiplicative():
    rng = np.random.default_rng(21)
    for _ in range(6):
        H1 = random_stable(rng, int(rng.integers(1, 5)), feedthrough=bool(rng.integers(2)))
        H2 = random_stable(rng, int(rng.integers(1, 5)), feedthrough=bool(rng.integers(2)))
        g12 = lti.hinf_norm(lti.interconnect("series", H1, H2))[0]
        assert g12 <= lti.hinf_norm(H1)[0] * lti.hinf_norm(H2)[0] * (1 + 1e-9)


def test_hinf_equals_grid_max_siso():
    rng = np.random.default_rng(8)
    sys = random_stable(rng, 6)
    gamma, _ = lti.hinf_norm(sys)
    grid = np.r_[0.0, np.logspace(-4, 4, 40001)]
    g_grid = lti.peak_gain(sys, grid).max()
    assert gamma >= g_grid * (1 - 1e-8)
    assert gamma <= g_grid * (1 + 1e-6)


def test_hinf_marginal_whitelist():
    # integrator weight: rejected as unstable unless the origin is whitelisted
    we = lti.make_weight(lti.RationalWeight(10, 10, 1, 0))
    with pytest.raises(UnstableSystem):
        lti.hinf_norm(we)
    gamma, _ = lti.hinf_norm(we, omega=np.logspace(-3, 3, 601), marginal_tol=1e-7)
    assert gamma == pytest.approx(abs(10 * (1e-3j + 1) / 1e-3j), rel=1e-6)


# ---------------------------------------------------------------------- h2


def h2_quad(sys):
    f = lambda w: np.sum(np.abs(lti.eval_transfer(sys, 1j * w)) ** 2)
    val, _ = integrate.quad(f, 0, np.inf, limit=500, epsabs=1e-13, epsrel=1e-11)
    return math.sqrt(val / math.pi)


def test_h2_first_order():
    sys = lti.make_system([[1.0]], [[-1.0]], [[1.0]], [[1.0]])
    assert lti.h2_norm(sys) == pytest.approx(1 / math.sqrt(2), rel=1e-12)
    assert h2_quad(sys) == pytest.approx(0.70711, abs=1e-5)


def test_h2_matches_quadrature_and_gramian():
    rng = np.random.default_rng(4)
    for n in (2, 4, 7):
        sys = random_stable(rng, n, ny=2, nu=2)
        h2 = lti.h2_norm(sys)
        P = linalg.solve_continuous_lyapunov(sys.A, -sys.B @ sys.B.T)
        assert h2 == pytest.approx(math.sqrt(np.trace(sys.C @ P @ sys.C.T)), rel=1e-8)
        assert h2 == pytest.approx(h2_quad(sys), rel=1e-7)


def test_h2_scaling():
    rng = np.random.default_rng(9)
    sys = random_stable(rng, 4)
    for alpha in (-3.0, 0.5, 10.0):
        assert lti.h2_norm(lti.scale(sys, alpha)) == pytest.approx(abs(alpha) * lti.h2_norm(sys), rel=1e-10)


def test_h2_static_gain_error():
    with pytest.raises(NotStrictlyProper):
        lti.h2_norm(lti.static_gain([[2.0]]))


def test_h2_clustered_falls_back_to_quadrature():
    # Jordan block: defective spectrum
    A = np.array([[-1.0, 1.0], [0.0, -1.0]])
    sys = lti.make_system(np.eye(2), A, [[0.0], [1.0]], [[1.0, 0.0]])  # 1/(s+1)^2
    # ||1/(s+1)^2||_2^2 = 1/4
    assert lti.h2_norm(sys) == pytest.approx(0.5, rel=1e-6)


def test_h2_parallel_cross_term():
    rng = np.random.default_rng(12)
    H1 = random_stable(rng, 3)
    H2 = random_stable(rng, 4)
    total = lti.h2_norm(lti.interconnect("parallel", H1, H2)) ** 2
    f = lambda w: (lti.eval_transfer(H1, 1j * w)[0, 0].conjugate() * lti.eval_transfer(H2, 1j * w)[0, 0]).real
    cross = integrate.quad(f, 0, np.inf, limit=500, epsabs=1e-13, epsrel=1e-11)[0] / math.pi
    assert total == pytest.approx(lti.h2_norm(H1) ** 2 + lti.h2_norm(H2) ** 2 + 2 * cross, rel=1e-6)


# ---------------------------------------------------------------- invariants


@given(seed=st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_state_space_equivalence(seed):
    rng = np.random.default_rng(seed)
    sys = random_stable(rng, int(rng.integers(1, 7)), feedthrough=bool(rng.integers(2)))
    V = rng.normal(size=(sys.n, sys.n)) + 2 * np.eye(sys.n)
    proj = lti.similarity(sys, V)
    pts = rng.normal(size=20) + 1j * rng.normal(scale=5, size=20)
    for s in pts:
        h = lti.eval_transfer(sys, s)
        np.testing.assert_allclose(lti.eval_transfer(proj, s), h, rtol=1e-9, atol=1e-12 * np.abs(h).max())
    p0, p1 = lti.poles(sys).values, lti.poles(proj).values
    assert match_distance(p0, p1) <= 1e-8 * max(1, np.abs(p0).max())


def test_json_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    for ft in (False, True):
        sys = random_stable(rng, 3, ny=2, nu=1, feedthrough=ft)
        save_system(tmp_path / "s.json", sys)
        back = load_system(tmp_path / "s.json")
        assert type(back) is type(sys)
        for name in ("E", "A", "B", "C"):
            np.testing.assert_array_equal(getattr(back, name), getattr(sys, name))
        np.testing.assert_array_equal(back.feedthrough(), sys.feedthrough())
    empty = lti.static_gain([[4.0]])
    save_system(tmp_path / "e.json", empty)
    assert load_system(tmp_path / "e.json").feedthrough()[0, 0] == 4.0

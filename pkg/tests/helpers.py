import numpy as np
from scipy.optimize import linear_sum_assignment

from loopsmith.lti import freqresp, make_system


def match_distance(a, b):
    """Largest distance between two complex multisets under the best pairing."""
    a, b = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    assert a.shape == b.shape, (a, b)
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def match_rel(a, b):
    """Largest relative pole error, relative to the matched reference ``b``."""
    a, b = np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)
    cost = np.abs(a[:, None] - b[None, :]) / np.abs(b)[None, :]
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def random_order20(seed):
    """Random stable order-20 SISO system: ten lightly to well damped modes in random coordinates."""
    rng = np.random.default_rng(seed)
    A = np.zeros((20, 20))
    for i in range(10):
        a, b = -rng.uniform(0.05, 5), rng.uniform(0.1, 30)
        A[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[a, b], [-b, a]]
    B, C = rng.normal(size=(20, 1)), rng.normal(size=(1, 20))
    V = rng.normal(size=(20, 20)) + 5 * np.eye(20)
    return make_system(np.eye(20), np.linalg.solve(V, A @ V), np.linalg.solve(V, B), C @ V)


def quad_h2_error(H, f, scale=30.0, n=200001):
    """Relative H2 error of ``f`` against ``H`` by trapezoid on omega = scale tan(theta)."""
    th = np.linspace(-np.pi / 2, np.pi / 2, n)[1:-1]
    om = scale * np.tan(th)
    jac = scale / np.cos(th) ** 2
    h = freqresp(H, 1j * om)[:, 0, 0]
    e = np.abs(h - f(1j * om)) ** 2
    return np.sqrt(np.trapezoid(e * jac, th) / np.trapezoid(np.abs(h) ** 2 * jac, th))


def dominant_modal_truncation(H, r):
    """Keep the r poles with the largest |residue| / |Re pole|, conjugate pairs together."""
    lam, X = np.linalg.eig(H.A)
    res = (H.C @ X).ravel() * np.linalg.solve(X, H.B).ravel()
    keep = []
    for j in np.argsort(-np.abs(res) / np.abs(lam.real)):
        if j in keep:
            continue
        group = [j]
        if abs(lam[j].imag) > 0:
            group.append(int(np.argmin(np.abs(lam - lam[j].conj()))))
        if len(keep) + len(group) <= r:
            keep += group
        if len(keep) == r:
            break
    return lambda s: sum(res[k] / (s - lam[k]) for k in keep)

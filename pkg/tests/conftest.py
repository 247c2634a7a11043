import numpy as np
import pytest

from boxl0.model import BoxBounds, LeastSquaresObjective
from boxl0.operators import DenseMap, power_iteration


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_ls_instance(n, m, s, seed, box=3.0, snr_db=None):
    """Unit-column Gaussian sensing instance with known sparse groundtruth."""
    gen = np.random.default_rng(seed)
    a = gen.standard_normal((m, n))
    a /= np.linalg.norm(a, axis=0)
    support = gen.permutation(n)[:s]
    xstar = np.zeros(n)
    xstar[support] = 0.1 + 2.9 * gen.random(s)
    b = a @ xstar
    if snr_db is not None:
        xi = gen.standard_normal(m)
        xi *= np.linalg.norm(b) / np.linalg.norm(xi) * 10 ** (-snr_db / 20)
        b = b + xi
    bounds = BoxBounds.symmetric(n, box)
    objective = LeastSquaresObjective(DenseMap(a), b)
    L = power_iteration(DenseMap(a), iters=80, seed=seed + 1)
    return objective, bounds, xstar, L


def fd_gradient(objective, x, h=1e-6):
    """Central finite differences of the objective value."""
    n = x.shape[0]
    out = np.zeros(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[i] = (objective.value(x + e) - objective.value(x - e)) / (2 * h)
    return out


def fd_hessian_block(objective, x, rows, cols, h=1e-6):
    """Finite-difference Jacobian of the gradient, restricted to (rows, cols)."""
    out = np.zeros((len(rows), len(cols)))
    for j, c in enumerate(cols):
        e = np.zeros(x.shape[0])
        e[c] = h
        diff = (objective.gradient(x + e) - objective.gradient(x - e)) / (2 * h)
        out[:, j] = diff[rows]
    return out

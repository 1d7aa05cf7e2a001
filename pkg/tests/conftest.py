import numpy as np
import pytest

from metainterp import autodiff as ad


def fd_grad(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at matrix x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / denom


def analytic_grad(build, x0):
    """Gradient of scalar build(x: DiffValue) at x0 via the tape."""
    tape = ad.Tape()
    x = tape.param(x0)
    out = build(x)
    (g,) = ad.grad(out, [x])
    return g.data


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)

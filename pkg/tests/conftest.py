import numpy as np
import pytest

from crossview.autodiff import Tensor

FD_STEP = 1e-5


def numeric_grad(f, params, step=FD_STEP):
    """Central finite differences of scalar ``f()`` with respect to each param's data."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        it = np.nditer(p.data, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p.data[idx]
            p.data[idx] = old + step
            hi = f().item()
            p.data[idx] = old - step
            lo = f().item()
            p.data[idx] = old
            g[idx] = (hi - lo) / (2 * step)
        out.append(g)
    return out


def analytic_grad(f, params):
    for p in params:
        p.zero_grad()
    f().backward()
    return [p.grad.copy() for p in params]


def rel_err(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


def grad_check(f, params, step=FD_STEP):
    return rel_err(analytic_grad(f, params), numeric_grad(f, params, step))


def param(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

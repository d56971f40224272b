import numpy as np
import pytest

from manipground.tensor import Tensor


def numeric_grad(f, arr: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``arr`` (in place)."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.linalg.norm(a) + np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / denom) if denom else 0.0


def check_grads(build, *leaves: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backward() and finite differences for ``build() -> scalar``."""
    for leaf in leaves:
        leaf.grad = None
    build().backward()
    worst = 0.0
    for leaf in leaves:
        num = numeric_grad(lambda: build().item(), leaf.data, eps)
        worst = max(worst, rel_err(leaf.grad, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

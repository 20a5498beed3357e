import numpy as np
import pytest

from ecgnet.autodiff import Tensor, tape_scope, backward


def finite_difference(loss_fn, tensors, h=1e-3):
    """Central finite differences of a scalar-valued function.

    ``loss_fn`` takes no arguments and reads the tensors' current data;
    returns one gradient array per tensor. Tensors should be float64 for
    meaningful comparisons.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn()
            flat[i] = keep - h
            down = loss_fn()
            flat[i] = keep
            g[i] = (up - down) / (2 * h)
        grads.append(g.reshape(t.data.shape))
    return grads


def autodiff_gradients(build_loss, tensors):
    """Run build_loss under a tape and return grads aligned with tensors."""
    for t in tensors:
        t.zero_grad()
    with tape_scope() as tape:
        loss = build_loss()
    backward(loss, tape)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def relative_errors(analytic, numeric, floor=1e-8):
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_tensor(rng, shape, requires_grad=False, scale=1.0, dtype=np.float64):
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype),
                  requires_grad=requires_grad)

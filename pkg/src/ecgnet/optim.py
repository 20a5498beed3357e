"""Adam optimizer with decoupled L2 on weight tensors.

Defaults follow the standard recommendation: learning rate 1e-3, beta1 0.9,
beta2 0.999, epsilon 1e-8. The L2 term enters as an effective gradient
g' = g + 2 * l2_lambda * w on tensors flagged for decay (convolution and
affine weights; never biases or batch-norm scale/shift), which is exactly the
gradient of l2_lambda * sum(w^2) evaluated at the pre-update point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **hyper) -> "AdamState":
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: Sequence[Tensor], grads: Optional[Sequence[np.ndarray]],
              state: AdamState, l2_lambda: float = 0.0,
              decay: Optional[Sequence[bool]] = None) -> None:
    """One bias-corrected Adam update, in place on the parameter buffers.

    ``grads`` defaults to each parameter's ``.grad``. ``decay`` marks which
    parameters receive the L2 term; default is all of them when l2_lambda > 0.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if len(state.first_moment) != len(params):
        raise ShapeError(
            f"optimizer state tracks {len(state.first_moment)} params, got {len(params)}")
    if decay is None:
        decay = [True] * len(params)
    if len(decay) != len(params):
        raise ShapeError(f"{len(params)} params but {len(decay)} decay flags")

    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    lr = state.learning_rate
    eps = state.epsilon

    for i, p in enumerate(params):
        g = grads[i]
        if g is None:
            raise ShapeError(f"parameter {p.name or i} has no gradient")
        if g.shape != p.data.shape:
            raise ShapeError(
                f"grad shape {g.shape} != param shape {p.data.shape} for {p.name or i}")
        if l2_lambda > 0.0 and decay[i]:
            g = g + 2.0 * l2_lambda * p.data
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)
    state.step_count = t

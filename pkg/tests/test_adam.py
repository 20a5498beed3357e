"""Adam update rule: closed-form first step, L2 coupling, determinism."""

import numpy as np
import pytest

from ecgnet.autodiff import Tensor
from ecgnet.errors import ShapeError
from ecgnet.optim import AdamState, adam_step


def test_defaults():
    state = AdamState()
    assert state.learning_rate == 1e-3
    assert state.beta1 == 0.9
    assert state.beta2 == 0.999
    assert state.epsilon == 1e-8
    assert state.step_count == 0


def test_zero_gradient_leaves_params():
    p = Tensor(np.array([1.0, -2.0, 3.0]))
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(3)], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])
    assert state.step_count == 1


def test_first_step_magnitude_is_learning_rate():
    # bias correction makes m_hat / sqrt(v_hat) = sign(g) on step one
    for g0 in (0.37, -4.2, 1e-3):
        p = Tensor(np.array([0.5]))
        state = AdamState.for_params([p])
        adam_step([p], [np.array([g0])], state)
        delta = 0.5 - p.data[0]
        exact = state.learning_rate * g0 / (abs(g0) + state.epsilon)
        assert delta == pytest.approx(exact, rel=1e-12)
        assert delta == pytest.approx(np.sign(g0) * state.learning_rate, rel=1e-4)


def test_l2_decay_shrinks_positive_weight():
    p = Tensor(np.array([0.8]))
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(1)], state, l2_lambda=0.01, decay=[True])
    assert p.data[0] < 0.8


def test_decay_flag_off_means_no_l2():
    p = Tensor(np.array([0.8]))
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(1)], state, l2_lambda=0.01, decay=[False])
    assert p.data[0] == 0.8


def test_step_count_increments_once_per_call():
    p = Tensor(np.zeros(2))
    state = AdamState.for_params([p])
    for expected in (1, 2, 3):
        adam_step([p], [np.ones(2)], state)
        assert state.step_count == expected


def test_deterministic_bit_identical():
    rng = np.random.default_rng(7)
    data = rng.standard_normal(16).astype(np.float32)
    grads = [rng.standard_normal(16).astype(np.float32) for _ in range(5)]

    def run():
        p = Tensor(data.copy())
        state = AdamState.for_params([p])
        for g in grads:
            adam_step([p], [g], state, l2_lambda=1e-4)
        return p.data

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_length_mismatch_rejected():
    p = Tensor(np.zeros(3))
    state = AdamState.for_params([p])
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(4)], state)
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(3), np.zeros(3)], state)


def test_matches_reference_sequence():
    # straight transcription of the update equations, kept independent
    p = Tensor(np.array([1.0, -1.0]))
    state = AdamState.for_params([p])
    gs = [np.array([0.1, 0.2]), np.array([-0.3, 0.05]), np.array([0.0, 1.0])]

    ref = np.array([1.0, -1.0])
    m = np.zeros(2)
    v = np.zeros(2)
    for t, g in enumerate(gs, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        m_hat = m / (1 - 0.9 ** t)
        v_hat = v / (1 - 0.999 ** t)
        ref = ref - 1e-3 * m_hat / (np.sqrt(v_hat) + 1e-8)
        adam_step([p], [g], state)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)

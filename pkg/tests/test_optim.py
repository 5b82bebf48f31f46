"""Tests for the Adam optimizer."""

import numpy as np
import pytest

from nbv_planner.errors import InvalidArgumentError
from nbv_planner.models import TrainConfig
from nbv_planner.optim import AdamState, adam_step


def test_first_step_moves_by_learning_rate_times_sign():
    """Test that bias correction makes the first step lr * sign(grad)."""
    cfg = TrainConfig(learning_rate=0.01)
    params = [np.array([1.0, -2.0, 0.5])]
    grads = [np.array([0.3, -4.0, 1e-3])]

    new, state = adam_step(params, grads, AdamState(), cfg)

    np.testing.assert_allclose(new[0], params[0] - 0.01 * np.sign(grads[0]), rtol=1e-5)
    assert state.step == 1


def test_matches_reference_recurrence():
    """Test several steps against the textbook moment recurrences."""
    cfg = TrainConfig(learning_rate=0.05, beta1=0.8, beta2=0.99, eps=1e-6)
    rng = np.random.default_rng(0)
    p = rng.normal(size=(3, 2))
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    params, state = [p.copy()], AdamState()

    for t in range(1, 6):
        g = rng.normal(size=p.shape)
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        p = p - 0.05 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-6)
        params, state = adam_step(params, [g], state, cfg)

    np.testing.assert_allclose(params[0], p, rtol=1e-12)
    assert state.step == 5


def test_inputs_are_not_modified():
    """Test that parameters and state are left untouched."""
    cfg = TrainConfig()
    params = [np.ones(4)]
    state = AdamState.zeros_like(params)

    adam_step(params, [np.ones(4)], state, cfg)

    np.testing.assert_array_equal(params[0], np.ones(4))
    np.testing.assert_array_equal(state.m[0], np.zeros(4))
    assert state.step == 0


def test_zero_gradient_keeps_parameters():
    """Test that a zero gradient leaves the parameters unchanged."""
    new, _ = adam_step([np.array([3.0])], [np.array([0.0])], AdamState(), TrainConfig())
    np.testing.assert_array_equal(new[0], [3.0])


def test_shape_mismatch_is_rejected():
    """Test mismatched parameter and gradient lists."""
    cfg = TrainConfig()
    with pytest.raises(InvalidArgumentError):
        adam_step([np.ones(3)], [np.ones(3), np.ones(3)], AdamState(), cfg)
    with pytest.raises(InvalidArgumentError):
        adam_step([np.ones(3)], [np.ones(4)], AdamState(), cfg)


def test_quadratic_bowl_converges():
    """Test 500 steps on f(w) = w^2 from w = 1 at a learning rate of 0.01."""
    cfg = TrainConfig(learning_rate=0.01)
    params, state = [np.array([1.0])], AdamState()

    for _ in range(500):
        params, state = adam_step(params, [2.0 * params[0]], state, cfg)

    assert abs(params[0][0]) < 1e-3
    assert state.step == 500

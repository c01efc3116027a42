import math

import numpy as np
import pytest

from oracles import (
    ADAM_FIRST_STEP_DELTA,
    NOAM_REL_TOL,
    NOAM_STEP1_D256_W4000,
    SOFTMAX_1_2,
    SOFTMAX_TOL,
)
from zstts.errors import CheckInvalidError, InvalidArgumentError, TrainingDivergedError
from zstts.numerics import AdamState, Parameter, adam_step, grad_check, masked_softmax, noam_lr, softmax


def test_softmax_examples():
    assert np.allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    big = softmax([1000.0, 1000.0, 1000.0])
    assert np.all(np.isfinite(big)) and np.allclose(big, 1 / 3)
    assert np.allclose(softmax([1.0, 2.0]), SOFTMAX_1_2, atol=SOFTMAX_TOL)


@pytest.mark.parametrize("bad", [[], [1.0, np.nan], [np.inf, 0.0]])
def test_softmax_rejects(bad):
    with pytest.raises(InvalidArgumentError):
        softmax(bad)


def test_softmax_shift_invariance():
    v = np.random.default_rng(0).normal(size=9)
    assert np.max(np.abs(softmax(v) - softmax(v + 123.4))) < 1e-9


def test_masked_softmax_ignores_padding():
    scores = np.array([[1.0, 2.0, 50.0]])
    out = masked_softmax(scores, np.array([[True, True, False]]))
    assert out[0, 2] == 0.0
    assert np.allclose(out[0, :2], SOFTMAX_1_2, atol=SOFTMAX_TOL)


def test_adam_first_step():
    p = Parameter("w", np.array([1.0]))
    p.grad[...] = 1.0
    state = AdamState()
    adam_step([p], state, lr=0.1)
    assert state.step == 1
    assert p.value[0] == pytest.approx(1.0 - ADAM_FIRST_STEP_DELTA, abs=1e-12)


def test_adam_zero_gradient_is_noop():
    rng = np.random.default_rng(1)
    p = Parameter("w", rng.normal(size=(3, 2)))
    state = AdamState()
    # give the state some history first
    p.grad[...] = rng.normal(size=(3, 2))
    adam_step([p], state, 0.01)
    before = p.value.copy()
    p.zero_grad()
    adam_step([p], state, 0.01)
    assert state.step == 2
    assert np.array_equal(p.value, before)


def test_adam_symmetric_params():
    a, b = Parameter("a", np.array([0.3, -0.2])), Parameter("b", np.array([0.3, -0.2]))
    state = AdamState()
    for k in range(3):
        a.grad[...] = b.grad[...] = [0.5 * k + 0.1, -1.0]
        adam_step([a, b], state, 0.05)
    assert np.array_equal(a.value, b.value)


def test_adam_divergence_names_param():
    p = Parameter("dec.out.W", np.zeros(2))
    p.grad[...] = [np.nan, 0.0]
    with pytest.raises(TrainingDivergedError) as exc:
        adam_step([p], AdamState(), 0.1)
    assert exc.value.param_name == "dec.out.W"


def test_noam_examples():
    assert noam_lr(1, 256, 4000) == pytest.approx(NOAM_STEP1_D256_W4000, rel=NOAM_REL_TOL)
    w = 400
    assert noam_lr(w, 64, w, 2.0) == pytest.approx(2.0 * 64**-0.5 * w**-0.5, rel=1e-12)
    assert noam_lr(2 * w, 64, w) < noam_lr(w, 64, w)
    with pytest.raises(InvalidArgumentError):
        noam_lr(0, 64, w)


def test_noam_shape():
    lrs = [noam_lr(s, 32, 50) for s in range(1, 200)]
    assert all(x < y for x, y in zip(lrs[:48], lrs[1:49]))
    assert all(x > y for x, y in zip(lrs[50:], lrs[51:]))
    # continuity at the crossover: left and right limits agree
    left = 32**-0.5 * 50 * 50**-1.5
    right = 32**-0.5 * 50**-0.5
    assert math.isclose(left, right, rel_tol=1e-12)


def _linear_problem(seed=0):
    rng = np.random.default_rng(seed)
    W = Parameter("W", rng.normal(size=(3, 4)))
    x = rng.normal(size=4)

    def loss():
        return float((W.value @ x).sum())

    def grad():
        W.zero_grad()
        W.grad += np.outer(np.ones(3), x)

    return W, x, loss, grad


def test_grad_check_linear_exact():
    W, x, loss, grad = _linear_problem()
    rep = grad_check(loss, grad, [W])
    assert rep.passed and rep.worst < 1e-8
    grad()
    assert np.allclose(W.grad, np.broadcast_to(x, (3, 4)))


def test_grad_check_catches_corrupted_gradient():
    W, x, loss, grad = _linear_problem(1)

    def bad_grad():
        grad()
        W.grad *= 2

    rep = grad_check(loss, bad_grad, [W])
    assert not rep.passed and rep.failures == ["W"]


def test_grad_check_detects_nondeterminism():
    W = Parameter("W", np.zeros(2))
    calls = iter(range(100))
    with pytest.raises(CheckInvalidError):
        grad_check(lambda: float(next(calls)), lambda: None, [W])

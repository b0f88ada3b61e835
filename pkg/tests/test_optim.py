import math

import numpy as np

from freqdet.optim import AdamState, adam_step
from freqdet.tensor import Tensor


def scalar_adam_oracle(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Independent per-scalar re-implementation used as the oracle."""
    m = v = 0.0
    t = 0
    for g in grads:
        t += 1
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta -= lr * mhat / (math.sqrt(vhat) + eps)
    return theta


def test_zero_gradient_is_noop_for_all_t():
    p = Tensor(np.array([1.5, -2.25, 0.0], dtype=np.float32), requires_grad=True)
    before = p.data.tobytes()
    state = AdamState()
    for _ in range(5):
        p.grad = np.zeros_like(p.data)
        adam_step([("p", p)], state, lr=0.1)
    assert p.data.tobytes() == before
    assert state.t == 5


def test_missing_gradient_is_skipped():
    p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
    before = p.data.tobytes()
    p.grad = None
    adam_step([("p", p)], AdamState(), lr=0.1)
    assert p.data.tobytes() == before


def test_first_step_magnitude_is_lr_times_sign():
    lr = 1e-3
    for g in (0.7, -3.0, 1e-4):
        p = Tensor(np.array([0.0], dtype=np.float64), requires_grad=True)
        p.grad = np.array([g])
        adam_step([("p", p)], AdamState(), lr=lr)
        # bias-corrected mhat/sqrt(vhat) = g/|g| before eps
        np.testing.assert_allclose(p.data[0], -lr * np.sign(g), rtol=1e-4)


def test_two_steps_match_scalar_oracle():
    rng = np.random.default_rng(11)
    theta0 = rng.standard_normal(6)
    grads = [rng.standard_normal(6), rng.standard_normal(6)]
    p = Tensor(theta0.copy(), requires_grad=True, dtype=np.float64)
    state = AdamState()
    for g in grads:
        p.grad = g
        adam_step([("p", p)], state, lr=2e-4)
    expected = [scalar_adam_oracle(theta0[i], [g[i] for g in grads], 2e-4)
                for i in range(6)]
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_identical_grads_shrink_second_update():
    g = np.array([0.5])
    p = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
    state = AdamState()
    p.grad = g.copy()
    adam_step([("p", p)], state, lr=1e-3)
    first = -p.data[0]
    prev = p.data[0]
    p.grad = g.copy()
    adam_step([("p", p)], state, lr=1e-3)
    second = prev - p.data[0]
    assert 0 < second < first

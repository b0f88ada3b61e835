"""Finite-difference verification of every kernel's backward pass.

The full 100-seed sweep runs in the acceptance suite; here each kernel
gets a handful of seeds so the file stays fast.
"""

import numpy as np
import pytest

from freqdet.gradcheck import KERNEL_CASES, KERNEL_TOL, fd_gradcheck
from freqdet import tensor as T
from freqdet.tensor import Tensor


@pytest.mark.parametrize("name", sorted(KERNEL_CASES))
def test_kernel_matches_finite_differences(name):
    case = KERNEL_CASES[name]
    worst = max(case(np.random.default_rng(seed)) for seed in range(5))
    assert worst < KERNEL_TOL, f"{name}: max rel err {worst:.3e}"


def test_softmax_bce_composite_on_random_8_vectors():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.uniform(-2, 2, 8), requires_grad=True, dtype=np.float64)
        y = Tensor(rng.integers(0, 2, 8).astype(np.float64))
        err = fd_gradcheck(lambda t: T.bce_loss(T.softmax(t, axis=-1), y),
                           [x], rng, n_coords=8)
        assert err < KERNEL_TOL


def test_fd_gradcheck_catches_wrong_gradients():
    def broken(x):
        out = T.gelu(x)
        bad = T._node(out.data, (x,), lambda g: (2.0 * g,), "broken")
        return T.mean(bad)

    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True, dtype=np.float64)
    assert fd_gradcheck(broken, [x], rng, n_coords=4) > 0.2

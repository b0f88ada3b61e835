"""Central finite-difference verification of every kernel's backward pass.

Checks run in float64 with step 1e-5. A kernel passes when the analytic
gradient matches the central difference at relative error < 1e-4 on every
sampled coordinate; the end-to-end detector check passes at < 1e-3.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from . import freq
from . import windows
from .attention import init_window_attention, window_attention_block
from .model import ModelConfig, detector_probs, init_detector_params, named_params
from .tensor import Tensor

KERNEL_TOL = 1e-4
END_TO_END_TOL = 1e-3
FD_STEP = 1e-5


def fd_gradcheck(fn: Callable[..., Tensor], inputs: list[Tensor],
                 rng: np.random.Generator, n_coords: int = 4,
                 h: float = FD_STEP) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must map the input tensors to a scalar Tensor and be free of
    side effects; inputs marked requires_grad are perturbed in place at
    sampled coordinates.
    """
    for t in inputs:
        t.grad = None
    fn(*inputs).backward()
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        if flat.size <= n_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=n_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp = fn(*inputs).item()
            flat[c] = orig - h
            fm = fn(*inputs).item()
            flat[c] = orig
            numeric = (fp - fm) / (2.0 * h)
            analytic = float(gflat[c])
            rel = abs(analytic - numeric) / max(1e-6, abs(analytic), abs(numeric))
            worst = max(worst, rel)
    return worst


def _leaf(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, dtype=np.float64)


def _reduce(out: Tensor, rng) -> Tensor:
    """Project a tensor output to a scalar with fixed random weights so every
    output coordinate influences the loss."""
    w = rng.standard_normal(out.shape)
    return T.mean(T.mul_const(out, w))


def _with_reduction(kernel, rng):
    weights: dict[tuple, np.ndarray] = {}

    def fn(*inputs):
        out = kernel(*inputs)
        key = out.shape
        if key not in weights:
            weights[key] = rng.standard_normal(out.shape)
        return T.mean(T.mul_const(out, weights[key]))

    return fn


def _check(kernel, inputs, rng, n_coords=4) -> float:
    return fd_gradcheck(_with_reduction(kernel, rng), inputs, rng, n_coords=n_coords)


# One entry per kernel: name -> callable(rng) -> max relative error.

def _case_matmul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    return _check(T.matmul, [a, b], rng)


def _case_matmul_batched(rng):
    a, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (2, 4, 3))
    return _check(T.matmul, [a, b], rng)


def _case_softmax(rng):
    x = _leaf(rng, (3, 5), -2.0, 2.0)
    return _check(lambda t: T.softmax(t, axis=-1), [x], rng)


def _case_gelu(rng):
    return _check(T.gelu, [_leaf(rng, (4, 5), -3.0, 3.0)], rng)


def _case_sigmoid(rng):
    return _check(T.sigmoid, [_leaf(rng, (6,), -3.0, 3.0)], rng)


def _case_linear(rng):
    x, w, b = _leaf(rng, (2, 3, 4)), _leaf(rng, (4, 5)), _leaf(rng, (5,))
    return _check(T.linear, [x, w, b], rng)


def _case_layernorm_rows(rng):
    x = _leaf(rng, (2, 3, 8))
    gamma = _leaf(rng, (3, 1), 0.5, 1.5)
    beta = _leaf(rng, (3, 1))
    return _check(lambda *a: T.layernorm(*a, axes=(-1,)), [x, gamma, beta], rng)


def _case_layernorm_spatial(rng):
    x = _leaf(rng, (2, 3, 4, 4))
    gamma = _leaf(rng, (3, 1, 1), 0.5, 1.5)
    beta = _leaf(rng, (3, 1, 1))
    return _check(lambda *a: T.layernorm(*a, axes=(-2, -1)), [x, gamma, beta], rng)


def _case_conv1x1(rng):
    x, w, b = _leaf(rng, (2, 3, 4, 4)), _leaf(rng, (5, 3)), _leaf(rng, (5,))
    return _check(T.conv1x1, [x, w, b], rng)


def _case_depthwise3x3(rng):
    x, w, b = _leaf(rng, (2, 3, 5, 6)), _leaf(rng, (3, 3, 3)), _leaf(rng, (3,))
    return _check(T.depthwise_conv3x3, [x, w, b], rng)


def _case_conv3x3(rng):
    x, w, b = _leaf(rng, (2, 3, 4, 4)), _leaf(rng, (4, 3, 3, 3)), _leaf(rng, (4,))
    return _check(T.conv3x3, [x, w, b], rng)


def _case_conv3x3_stride2(rng):
    x, w, b = _leaf(rng, (2, 3, 6, 6)), _leaf(rng, (4, 3, 3, 3)), _leaf(rng, (4,))
    return _check(lambda *a: T.conv3x3(*a, stride=2), [x, w, b], rng)


def _case_bce(rng):
    p = _leaf(rng, (8,), 0.05, 0.95)
    y = Tensor(rng.integers(0, 2, size=(8,)).astype(np.float64))
    return fd_gradcheck(lambda a: T.bce_loss(a, y), [p], rng, n_coords=8)


def _case_softmax_bce(rng):
    x = _leaf(rng, (8,), -2.0, 2.0)
    y = Tensor(rng.integers(0, 2, size=(8,)).astype(np.float64))
    return fd_gradcheck(lambda t: T.bce_loss(T.softmax(t, axis=-1), y), [x], rng, n_coords=8)


def _case_mean(rng):
    return _check(lambda t: T.mean(t, axes=(1, 2)), [_leaf(rng, (2, 3, 4))], rng)


def _case_channel_project(rng):
    w, x = _leaf(rng, (4, 3)), _leaf(rng, (5, 3, 6))
    return _check(T.channel_project, [w, x], rng)


def _case_add_mul(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    return _check(lambda u, v: T.add(T.mul(u, v), T.scale(u, 0.5)), [a, b], rng)


def _case_structural(rng):
    x = _leaf(rng, (2, 3, 4, 4))
    def kernel(t):
        r = T.reshape(t, (2, 3, 16))
        r = T.swap_last2(r)
        r = T.index_axis(r, 1, 3)
        return r
    return _check(kernel, [x], rng)


def _case_subsample(rng):
    return _check(lambda t: T.subsample(t, 2), [_leaf(rng, (2, 3, 4, 6))], rng)


def _case_stack(rng):
    a, b = _leaf(rng, (2, 3)), _leaf(rng, (2, 3))
    return _check(lambda u, v: T.stack_axis1([u, v]), [a, b], rng)


def _case_dwt(rng):
    return _check(lambda t: freq.dwt_haar2(t).ihat, [_leaf(rng, (2, 3, 4, 4))], rng)


def _case_idwt(rng):
    return _check(freq.idwt_haar2, [_leaf(rng, (2, 4, 3, 2, 2))], rng)


def _case_fft2(rng):
    return _check(lambda t: freq.fft2(t).packed, [_leaf(rng, (1, 2, 4, 4))], rng)


def _case_ifft2(rng):
    return _check(lambda t: freq.ifft2(freq.ComplexSpectrum(t))[0],
                  [_leaf(rng, (1, 2, 4, 4, 2))], rng)


def _case_polar_decompose(rng):
    spec = _leaf(rng, (1, 2, 4, 4, 2), 0.2, 1.0)  # away from the amplitude guard
    return _check(lambda t: freq.polar_decompose(freq.ComplexSpectrum(t)).packed,
                  [spec], rng)


def _case_polar_recombine(rng):
    amp = _leaf(rng, (1, 2, 4, 4), 0.1, 1.0)
    ph = _leaf(rng, (1, 2, 4, 4), -3.0, 3.0)
    return _check(lambda a, p: freq.polar_recombine(a, p).packed, [amp, ph], rng)


def _case_hermitian_average(rng):
    return _check(lambda t: freq.hermitian_average(t).packed,
                  [_leaf(rng, (1, 2, 4, 4, 2))], rng)


def _case_hermitian_phase_project(rng):
    # phases bounded so the averaged phasor stays far from the zero guard
    ph = _leaf(rng, (1, 1, 4, 4), -1.0, 1.0)
    return _check(freq.hermitian_phase_project, [ph], rng)


def _case_window_roundtrip(rng):
    x = _leaf(rng, (2, 3, 4, 4))
    def kernel(t):
        win = windows.window_partition(t, 2)
        return windows.window_inverse(win.values, 2, 2, 3, 4, 4)
    return _check(kernel, [x], rng)


def _case_tile_roundtrip(rng):
    x = _leaf(rng, (2, 4, 3, 4, 4))
    def kernel(t):
        tiled = windows.dwt_window_tile(t)
        return windows.dwt_window_untile(tiled)
    return _check(kernel, [x], rng)


def _case_attention_block(rng):
    prng = np.random.default_rng(rng.integers(1 << 31))
    p = init_window_attention(prng, 2, 3, 2, dtype=np.float64)
    x = _leaf(rng, (1, 2, 4, 4))
    tensors = [x, p.pre_w, p.dw_w, p.wq, p.wk, p.wv, p.mlp_w, p.out_w, p.mlp_bias]
    return _check(lambda x_, *_: window_attention_block(x_, p), tensors, rng, n_coords=2)


KERNEL_CASES: dict[str, Callable[[np.random.Generator], float]] = {
    "matmul": _case_matmul,
    "matmul_batched": _case_matmul_batched,
    "softmax": _case_softmax,
    "gelu": _case_gelu,
    "sigmoid": _case_sigmoid,
    "linear": _case_linear,
    "layernorm_rows": _case_layernorm_rows,
    "layernorm_spatial": _case_layernorm_spatial,
    "conv1x1": _case_conv1x1,
    "depthwise_conv3x3": _case_depthwise3x3,
    "conv3x3": _case_conv3x3,
    "conv3x3_stride2": _case_conv3x3_stride2,
    "bce_loss": _case_bce,
    "softmax_bce": _case_softmax_bce,
    "mean": _case_mean,
    "channel_project": _case_channel_project,
    "add_mul_scale": _case_add_mul,
    "reshape_swap_index": _case_structural,
    "subsample": _case_subsample,
    "stack": _case_stack,
    "dwt_haar2": _case_dwt,
    "idwt_haar2": _case_idwt,
    "fft2": _case_fft2,
    "ifft2": _case_ifft2,
    "polar_decompose": _case_polar_decompose,
    "polar_recombine": _case_polar_recombine,
    "hermitian_average": _case_hermitian_average,
    "hermitian_phase_project": _case_hermitian_phase_project,
    "window_partition_inverse": _case_window_roundtrip,
    "tile_untile": _case_tile_roundtrip,
    "attention_block": _case_attention_block,
}


def kernel_suite(seed: int = 0, seeds_per_kernel: int = 100) -> dict[str, float]:
    """Run every kernel case over many seeds; returns max relative error each."""
    results: dict[str, float] = {}
    for i, (name, case) in enumerate(KERNEL_CASES.items()):
        worst = 0.0
        for k in range(seeds_per_kernel):
            rng = np.random.default_rng(np.random.SeedSequence([seed, i, k]))
            worst = max(worst, case(rng))
        results[name] = worst
    return results


def end_to_end_check(seed: int = 0, size: int = 16, coords_per_param: int = 2) -> float:
    """Finite differences through the whole detector on a (1, 3, size, size)
    input, against the analytic parameter gradients. Runs in float64."""
    cfg = ModelConfig(input_size=size, seed=seed)
    params = init_detector_params(cfg, dtype=np.float64)
    plist = named_params(params)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    x = Tensor(rng.random((1, 3, size, size)))
    y = Tensor(np.array([1.0]))

    def loss_fn(*_tensors):
        return T.bce_loss(detector_probs(x, params, cfg), y)

    tensors = [t for _, t in plist]
    return fd_gradcheck(loss_fn, tensors, rng, n_coords=coords_per_param)

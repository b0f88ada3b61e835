"""Windowed attention block.

Pipeline: 1x1 conv (cross-channel) -> depthwise 3x3 -> window partition ->
learned Q/K/V channel projections per window -> channel-affinity attention
softmax(Q_i K_i^T) V_i -> elementwise product with a GELU position-MLP of
V_i -> inverse window -> 1x1 conv back to the input channel count.

The affinity matrix is C x C (channels attend over window positions); the
position MLP is a single N x N linear shared across windows and channels.
No softmax scaling, no residual around the block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from . import tensor as T
from .tensor import Tensor
from .windows import window_inverse, window_partition


@dataclass
class WindowAttentionParams:
    """Learned state for one attention block over b x b windows."""

    b: int
    pre_w: Tensor      # (C_int, C_in) 1x1 mixing
    pre_bias: Tensor   # (C_int,)
    dw_w: Tensor       # (C_int, 3, 3) depthwise
    dw_bias: Tensor    # (C_int,)
    wq: Tensor         # (C_int, C_int)
    wk: Tensor         # (C_int, C_int)
    wv: Tensor         # (C_int, C_int)
    mlp_w: Tensor      # (N, N), N = b*b
    mlp_bias: Tensor   # (N,)
    out_w: Tensor      # (C_in, C_int)
    out_bias: Tensor   # (C_in,)
    ln_gamma: Tensor   # (C_in, 1, 1); applied by the caller where needed
    ln_beta: Tensor    # (C_in, 1, 1)

    def __post_init__(self):
        n = self.b * self.b
        if self.mlp_w.shape != (n, n):
            raise DimensionError(f"mlp_w shape {self.mlp_w.shape} for window side {self.b}")

    @property
    def c_in(self) -> int:
        return self.pre_w.shape[1]

    @property
    def c_int(self) -> int:
        return self.pre_w.shape[0]


def init_window_attention(rng: np.random.Generator, c_in: int, c_int: int, b: int,
                          dtype=np.float32) -> WindowAttentionParams:
    """Uniform(-1/sqrt(fan_in), +) weights, zero biases, unit layernorm gain."""
    def u(shape, fan_in):
        a = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-a, a, size=shape).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    n = b * b
    return WindowAttentionParams(
        b=b,
        pre_w=u((c_int, c_in), c_in),
        pre_bias=zeros((c_int,)),
        dw_w=u((c_int, 3, 3), 9),
        dw_bias=zeros((c_int,)),
        wq=u((c_int, c_int), c_int),
        wk=u((c_int, c_int), c_int),
        wv=u((c_int, c_int), c_int),
        mlp_w=u((n, n), n),
        mlp_bias=zeros((n,)),
        out_w=u((c_in, c_int), c_int),
        out_bias=zeros((c_in,)),
        ln_gamma=Tensor(np.ones((c_in, 1, 1), dtype=dtype), requires_grad=True),
        ln_beta=zeros((c_in, 1, 1)),
    )


def conv_preprocess(x: Tensor, p: WindowAttentionParams) -> Tensor:
    """Cross-channel 1x1 mixing followed by a per-channel depthwise 3x3."""
    return T.depthwise_conv3x3(T.conv1x1(x, p.pre_w, p.pre_bias), p.dw_w, p.dw_bias)


def window_channel_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T) V per window; inputs and output are (S, C, N)."""
    if not (q.shape == k.shape == v.shape):
        raise DimensionError(f"attention shapes {q.shape}, {k.shape}, {v.shape}")
    affinity = T.softmax(T.matmul(q, T.swap_last2(k)), axis=-1)
    return T.matmul(affinity, v)


def position_mlp(v: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """GELU(v @ w + bias) over the window-position axis, shared everywhere."""
    return T.gelu(T.linear(v, w, bias))


def window_attention_block(x: Tensor, p: WindowAttentionParams) -> Tensor:
    """Full block on a (B, C_in, H, W) map; output has the input's shape."""
    mixed, origin = _block_windows(x, p)
    restored = window_inverse(mixed, p.b, *origin)
    return T.conv1x1(restored, p.out_w, p.out_bias)


def _block_windows(x: Tensor, p: WindowAttentionParams):
    """Everything before the inverse window + output conv. Exposed so tests
    can check that windows stay independent of one another."""
    pre = conv_preprocess(x, p)
    win = window_partition(pre, p.b)
    q = T.channel_project(p.wq, win.values)
    k = T.channel_project(p.wk, win.values)
    v = T.channel_project(p.wv, win.values)
    att = window_channel_attention(q, k, v)
    mixed = T.mul(att, position_mlp(v, p.mlp_w, p.mlp_bias))
    B, _, H, W = win.origin
    return mixed, (B, p.c_int, H, W)

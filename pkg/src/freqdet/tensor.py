"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a float32 or float64 numpy array. Operations build an
implicit computation graph: each result records its parent tensors and a
closure that maps the result's gradient to per-parent gradients.
``Tensor.backward()`` walks the graph in reverse topological order.

Training runs in float32; the gradient-check suite runs the identical
kernels in float64. Tensors are immutable from the caller's perspective
(only the optimizer writes ``.data`` in place).
"""

from __future__ import annotations

import ctypes
import ctypes.util
import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError


def _tune_malloc() -> None:
    """Keep large numpy temporaries on the heap instead of mmap.

    Every op here allocates fresh output arrays; with glibc defaults,
    multi-megabyte blocks are mmapped and unmapped on free, so each
    training step pays full page-fault cost again. Raising the mmap and
    trim thresholds lets freed blocks be reused (several-fold speedup on
    the training loop at the price of holding peak heap).
    """
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass  # non-glibc platform; purely a performance knob


_tune_malloc()

_FLOAT_DTYPES = (np.float32, np.float64)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

BCE_EPS = 1e-7


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A node in the computation graph.

    Leaf tensors are created directly; interior nodes are created by the
    kernel functions below. ``op`` names the producing operation (leaves
    are "leaf"), ``_parents`` holds the input nodes in order, and
    ``_backward`` maps the node's output gradient to one gradient array
    (or None) per parent.
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, grad={self.requires_grad})"

    # Arithmetic sugar; accepts a Tensor of identical shape or a python scalar.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, -other if isinstance(other, Tensor) else -float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def backward(self) -> None:
        """Reverse-mode gradient sweep seeded at this (scalar) node.

        Accumulates into ``.grad`` of every reachable node that has
        ``requires_grad`` set.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.shape}")
        order = topo_order(self)
        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._parents == ():
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + pg
                else:
                    flowing[key] = pg


def topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the graph below ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_same_dtype(*tensors: Tensor) -> None:
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise DimensionError(f"mixed dtypes {dt} vs {t.dtype}")


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


# ---------------------------------------------------------------------------
# elementwise and structural kernels


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data + a.dtype.type(c), (a,), lambda g: (g,), "add_scalar")
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return _node(x.data * c, (x,), lambda g: (g * c,), "scale")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def mul_const(x: Tensor, arr) -> Tensor:
    """Elementwise product with a constant broadcastable array (no gradient to it)."""
    arr = np.asarray(arr, dtype=x.dtype)
    data = x.data * arr
    if data.shape != x.shape:
        raise DimensionError(f"mul_const must not change shape {x.shape} -> {data.shape}")
    return _node(data, (x,), lambda g: (g * arr,), "mul_const")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = x.shape
    data = np.ascontiguousarray(x.data).reshape(shape)
    return _node(data, (x,), lambda g: (g.reshape(orig),), "reshape")


def swap_last2(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise DimensionError("swap_last2 needs ndim >= 2")
    return _node(np.ascontiguousarray(x.data.swapaxes(-1, -2)), (x,),
                 lambda g: (g.swapaxes(-1, -2),), "swap_last2")


def index_axis(x: Tensor, axis: int, i: int) -> Tensor:
    """Select index ``i`` along ``axis`` (the axis is dropped)."""
    idx = [slice(None)] * x.ndim
    idx[axis] = i
    idx = tuple(idx)
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _node(np.ascontiguousarray(x.data[idx]), (x,), bwd, "index_axis")


def stack_axis1(tensors: list[Tensor]) -> Tensor:
    """Stack same-shaped tensors along a new axis 1."""
    _check_same_dtype(*tensors)
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError("stack_axis1 needs identical shapes")
    data = np.stack([t.data for t in tensors], axis=1)
    n = len(tensors)

    def bwd(g):
        return tuple(np.ascontiguousarray(g[:, i]) for i in range(n))

    return _node(data, tuple(tensors), bwd, "stack_axis1")


def subsample(x: Tensor, step: int) -> Tensor:
    """Spatial subsampling x[:, :, ::step, ::step] on a rank-4 tensor."""
    if x.ndim != 4:
        raise DimensionError("subsample expects B,C,H,W")
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, :, ::step, ::step] = g
        return (full,)

    return _node(np.ascontiguousarray(x.data[:, :, ::step, ::step]), (x,), bwd, "subsample")


def mean(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))
    axes = tuple(a % x.ndim for a in axes)
    count = 1
    for a in axes:
        count *= x.shape[a]
    shape = x.shape
    data = x.data.mean(axis=axes)
    inv = x.dtype.type(1.0 / count)

    def bwd(g):
        gk = np.expand_dims(g, axes)
        return (np.broadcast_to(gk * inv, shape).copy(),)

    return _node(data, (x,), bwd, "mean")


# ---------------------------------------------------------------------------
# dense algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Both 2-D, or both stacked with identical leading dims."""
    _check_same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim:
        raise DimensionError(f"matmul rank mismatch {a.shape} @ {b.shape}")
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return (g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g)

    return _node(ad @ bd, (a, b), bwd, "matmul")


def channel_project(w: Tensor, x: Tensor) -> Tensor:
    """Apply one shared (Co, Ci) map to every slab of x (S, Ci, N)."""
    _check_same_dtype(w, x)
    if w.ndim != 2 or x.ndim != 3 or w.shape[1] != x.shape[1]:
        raise DimensionError(f"channel_project shapes {w.shape} @ {x.shape}")
    wd, xd = w.data, x.data

    def bwd(g):
        gw = np.matmul(g, xd.swapaxes(-1, -2)).sum(axis=0)
        gx = np.matmul(wd.T, g)
        return (gw, gx)

    return _node(np.matmul(wd, xd), (w, x), bwd, "channel_project")


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Affine map over the last axis: x @ w + bias."""
    _check_same_dtype(x, w, bias)
    if x.shape[-1] != w.shape[0] or bias.shape != (w.shape[1],):
        raise DimensionError(f"linear shapes x{x.shape} w{w.shape} b{bias.shape}")
    xd, wd = x.data, w.data
    data = xd @ wd + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        g2 = g.reshape(-1, g.shape[-1])
        x2 = xd.reshape(-1, xd.shape[-1])
        return (g @ wd.T, x2.T @ g2, g.sum(axis=lead))

    return _node(data, (x, w, bias), bwd, "linear")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _node(s, (x,), bwd, "softmax")


def gelu(x: Tensor) -> Tensor:
    """Exact erf-form GELU: x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    cdf = cdf.astype(x.dtype, copy=False)

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf.astype(xd.dtype, copy=False)),)

    return _node(xd * cdf, (x,), bwd, "gelu")


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    s = s.astype(x.dtype, copy=False)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor,
              axes: tuple[int, ...] = (-1,), eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance over ``axes``, then scale and shift.

    gamma and beta may be any shape broadcastable against x; gradients are
    reduced back onto their shapes.
    """
    _check_same_dtype(x, gamma, beta)
    axes = tuple(a % x.ndim for a in axes)
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (xd - mu) * inv_std
    gd = gamma.data
    data = xhat * gd + beta.data

    def bwd(g):
        g_gamma = _unbroadcast(g * xhat, gamma.shape)
        g_beta = _unbroadcast(g, beta.shape)
        gh = g * gd
        m1 = gh.mean(axis=axes, keepdims=True)
        m2 = (gh * xhat).mean(axis=axes, keepdims=True)
        gx = inv_std * (gh - m1 - xhat * m2)
        return (gx, g_gamma, g_beta)

    return _node(data, (x, gamma, beta), bwd, "layernorm")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce g down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, extent in enumerate(shape):
        if extent == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# convolutions


def conv1x1(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel channel mixing: (B,Ci,H,W) x (Co,Ci) -> (B,Co,H,W)."""
    _check_same_dtype(x, w, bias)
    if x.ndim != 4 or w.ndim != 2 or x.shape[1] != w.shape[1] or bias.shape != (w.shape[0],):
        raise DimensionError(f"conv1x1 shapes x{x.shape} w{w.shape} b{bias.shape}")
    B, Ci, H, W = x.shape
    xm = x.data.reshape(B, Ci, H * W)
    ym = np.matmul(w.data, xm)
    data = ym.reshape(B, w.shape[0], H, W) + bias.data[None, :, None, None]
    wd = w.data

    def bwd(g):
        gm = g.reshape(B, w.shape[0], H * W)
        gw = np.matmul(gm, xm.swapaxes(-1, -2)).sum(axis=0)
        gx = np.matmul(wd.T, gm).reshape(B, Ci, H, W)
        return (gx, gw, g.sum(axis=(0, 2, 3)))

    return _node(data, (x, w, bias), bwd, "conv1x1")


def depthwise_conv3x3(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Per-channel 3x3 cross-correlation with zero padding 1; shape preserved."""
    _check_same_dtype(x, w, bias)
    B, C, H, W = x.shape
    if w.shape != (C, 3, 3) or bias.shape != (C,):
        raise DimensionError(f"depthwise_conv3x3 shapes x{x.shape} w{w.shape} b{bias.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    wd = w.data
    data = np.zeros_like(x.data)
    for di in range(3):
        for dj in range(3):
            data += xp[:, :, di:di + H, dj:dj + W] * wd[None, :, di, dj, None, None]
    data += bias.data[None, :, None, None]

    def bwd(g):
        gp = np.zeros_like(xp)
        gw = np.empty_like(wd)
        for di in range(3):
            for dj in range(3):
                gp[:, :, di:di + H, dj:dj + W] += g * wd[None, :, di, dj, None, None]
                gw[:, di, dj] = np.einsum("bchw,bchw->c", g, xp[:, :, di:di + H, dj:dj + W])
        return (gp[:, :, 1:H + 1, 1:W + 1], gw, g.sum(axis=(0, 2, 3)))

    return _node(data, (x, w, bias), bwd, "depthwise_conv3x3")


def _im2col3(xp: np.ndarray, Ho: int, Wo: int, stride: int) -> np.ndarray:
    """(B, Ci, H+2, W+2) padded input -> (Ci*9, B*Ho*Wo) patch matrix.

    Assembled tap by tap: nine plain 4-D strided copies beat one shuffled
    6-D copy by a wide margin on stride-unfriendly memory.
    """
    B, Ci = xp.shape[:2]
    buf = np.empty((Ci, 9, B, Ho, Wo), dtype=xp.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            sl = xp[:, :, di:di + stride * Ho:stride, dj:dj + stride * Wo:stride]
            np.copyto(buf[:, k], sl.transpose(1, 0, 2, 3))
            k += 1
    return buf.reshape(Ci * 9, B * Ho * Wo)


def conv3x3(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """Dense 3x3 cross-correlation, zero padding 1, stride 1 or 2.

    Lowered to a single GEMM over an im2col patch matrix; the patch matrix
    is rebuilt in the backward pass rather than kept alive.
    """
    _check_same_dtype(x, w, bias)
    B, Ci, H, W = x.shape
    Co = w.shape[0]
    if w.shape != (Co, Ci, 3, 3) or bias.shape != (Co,):
        raise DimensionError(f"conv3x3 shapes x{x.shape} w{w.shape} b{bias.shape}")
    if stride not in (1, 2) or H % stride or W % stride:
        raise DimensionError(f"conv3x3 stride {stride} on {H}x{W}")
    Ho, Wo = H // stride, W // stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    w2 = w.data.reshape(Co, Ci * 9)
    cols = _im2col3(xp, Ho, Wo, stride)
    out = (w2 @ cols).reshape(Co, B, Ho, Wo)
    data = np.ascontiguousarray(out.transpose(1, 0, 2, 3)) + bias.data[None, :, None, None]

    def bwd(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(Co, -1)
        cols_b = _im2col3(xp, Ho, Wo, stride)
        gw = (gm @ cols_b.T).reshape(Co, Ci, 3, 3)
        gcols = (w2.T @ gm).reshape(Ci, 3, 3, B, Ho, Wo)
        gp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                gp[:, :, di:di + stride * Ho:stride, dj:dj + stride * Wo:stride] += \
                    gcols[:, di, dj].transpose(1, 0, 2, 3)
        return (gp[:, :, 1:H + 1, 1:W + 1], gw, g.sum(axis=(0, 2, 3)))

    return _node(data, (x, w, bias), bwd, "conv3x3")


# ---------------------------------------------------------------------------
# loss


def bce_loss(prob: Tensor, label: Tensor) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [BCE_EPS, 1-BCE_EPS]."""
    _check_same_dtype(prob, label)
    if prob.shape != label.shape:
        raise DimensionError(f"bce_loss shapes {prob.shape} vs {label.shape}")
    lo = prob.dtype.type(BCE_EPS)
    hi = prob.dtype.type(1.0 - BCE_EPS)
    p = np.clip(prob.data, lo, hi)
    y = label.data
    n = p.size
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean()

    def bwd(g):
        inside = (prob.data > lo) & (prob.data < hi)
        gp = g * (p - y) / (p * (1.0 - p) * n)
        return (np.where(inside, gp, 0.0).astype(p.dtype, copy=False), None)

    return _node(np.asarray(loss, dtype=prob.dtype), (prob, label), bwd, "bce_loss")

"""Window partitioning for attention and the subband tiling layout.

All four operations are pure permutations of values (reshape/transpose
round trips), so forward and backward are exact inverses of one another
and preserve values bitwise.

Layout rules, fixed so checkpoints are portable:

* window_partition enumerates windows row-major over the (H/b, W/b) grid,
  batch-major overall; inside a window the b*b positions are row-major.
* tile_subbands lays each (batch, channel) slab out as a 4 x (H*W/4) map:
  row s (subband s in LL, LH, HL, HH order) concatenates the subband's
  2x2 blocks in row-major block order, each block flattened row-major.
  A 4x4 attention window over that map therefore holds exactly one 2x2
  spatial block from each of the four subbands.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, _node


@dataclass
class WindowedFeatures:
    """Windowed view of a feature map: values shaped (S, C, N), N = b*b."""

    values: Tensor
    b: int
    grid: tuple[int, int]
    origin: tuple[int, int, int, int]  # B, C, H, W


@dataclass
class TiledFeatures:
    """Subbands tiled per channel into (B, C, 4, H*W/4)."""

    data: Tensor
    origin: tuple[int, int]  # subband H/2, W/2


def _partition_arrays(x: np.ndarray, b: int) -> np.ndarray:
    B, C, H, W = x.shape
    gh, gw = H // b, W // b
    v = x.reshape(B, C, gh, b, gw, b).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(v).reshape(B * gh * gw, C, b * b)


def _inverse_arrays(w: np.ndarray, b: int, B: int, C: int, H: int, W: int) -> np.ndarray:
    gh, gw = H // b, W // b
    v = w.reshape(B, gh, gw, C, b, b).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(v).reshape(B, C, H, W)


def window_partition(x: Tensor, b: int) -> WindowedFeatures:
    """Split (B, C, H, W) into S = B*(H/b)*(W/b) windows of N = b*b values."""
    if x.ndim != 4:
        raise DimensionError(f"window_partition expects B,C,H,W, got {x.shape}")
    B, C, H, W = x.shape
    if b < 1 or H % b or W % b:
        raise DimensionError(f"window side {b} does not divide {H}x{W}")
    out = _node(_partition_arrays(x.data, b), (x,),
                lambda g: (_inverse_arrays(g, b, B, C, H, W),), "window_partition")
    return WindowedFeatures(out, b, (H // b, W // b), (B, C, H, W))


def window_inverse(w: Tensor, b: int, B: int, C: int, H: int, W: int) -> Tensor:
    """Exact inverse permutation of window_partition."""
    if w.ndim != 3 or w.shape[2] != b * b or w.shape[1] != C:
        raise DimensionError(f"window_inverse shape {w.shape} for b={b}, C={C}")
    if w.shape[0] * w.shape[2] != B * (H // b) * (W // b) * b * b or H % b or W % b:
        raise DimensionError(f"window_inverse metadata mismatch {w.shape} vs {(B, C, H, W)}, b={b}")
    return _node(_inverse_arrays(w.data, b, B, C, H, W), (w,),
                 lambda g: (_partition_arrays(g, b),), "window_inverse")


def _tile_arrays(ihat: np.ndarray) -> np.ndarray:
    B, nb, C, h, w = ihat.shape
    v = ihat.transpose(0, 2, 1, 3, 4).reshape(B, C, nb, h // 2, 2, w // 2, 2)
    v = v.transpose(0, 1, 2, 3, 5, 4, 6)
    return np.ascontiguousarray(v).reshape(B, C, nb, h * w)


def _untile_arrays(t: np.ndarray, h: int, w: int) -> np.ndarray:
    B, C, nb, _ = t.shape
    v = t.reshape(B, C, nb, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 3, 5, 4, 6)
    v = np.ascontiguousarray(v).reshape(B, C, nb, h, w)
    return np.ascontiguousarray(v.transpose(0, 2, 1, 3, 4))


def dwt_window_tile(ihat: Tensor) -> TiledFeatures:
    """Tile stacked subbands (B, 4, C, h, w) into (B, C, 4, h*w)."""
    if ihat.ndim != 5 or ihat.shape[1] != 4:
        raise DimensionError(f"dwt_window_tile expects B,4,C,h,w, got {ihat.shape}")
    h, w = ihat.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"dwt_window_tile needs even subband extents, got {h}x{w}")
    out = _node(_tile_arrays(ihat.data), (ihat,),
                lambda g: (_untile_arrays(g, h, w),), "dwt_window_tile")
    return TiledFeatures(out, (h, w))


def dwt_window_untile(t: TiledFeatures | Tensor, origin: tuple[int, int] | None = None) -> Tensor:
    """Exact inverse permutation of dwt_window_tile."""
    if isinstance(t, TiledFeatures):
        data, (h, w) = t.data, t.origin
    else:
        if origin is None:
            raise DimensionError("dwt_window_untile needs the origin subband shape")
        data, (h, w) = t, origin
    if data.ndim != 4 or data.shape[-1] != h * w:
        raise DimensionError(f"dwt_window_untile shape {data.shape} vs origin {h}x{w}")
    return _node(_untile_arrays(data.data, h, w), (data,),
                 lambda g: (_tile_arrays(g),), "dwt_window_untile")

"""Dual-branch detector: wavelet tiling branch + FFT phase branch, fused
by a convex weight and scored by a small residual CNN.

Branch layouts (input (B, 3, H, W), H = W = a power of two >= 16):

* DWT branch: Haar subbands -> per-channel 4 x (H*W/4) tiling -> layernorm
  over the tiled rows -> windowed attention with side 4 -> untile -> IDWT.
* FFT branch: forward DFT -> phase plane only -> windowed attention with
  side 8 -> recombine with the untouched original amplitude -> inverse DFT.

The fused feature map keeps the input shape, so the classifier sees the
image resolution regardless of which branches run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .attention import WindowAttentionParams, init_window_attention, window_attention_block
from .errors import ConfigError, ContractError, DimensionError
from .freq import (dwt_haar2, fft2, hermitian_phase_project, idwt_haar2, ifft2,
                   polar_compose_signed, polar_decompose, polar_recombine)
from .tensor import Tensor
from .windows import dwt_window_tile, dwt_window_untile

DWT_WINDOW = 4
FFT_WINDOW = 8

FFT_PART_CHOICES = ("phase", "phase+amp")


@dataclass
class ModelConfig:
    """Everything needed to rebuild a detector (stored next to checkpoints)."""

    input_size: int = 32
    c_int: int = 16
    lambda_: float = 0.4
    dwt_window: int = DWT_WINDOW
    fft_window: int = FFT_WINDOW
    classifier_widths: tuple[int, int] = (32, 64)
    stem_stride: int = 2
    seed: int = 0
    use_dwt_branch: bool = True
    use_fft_branch: bool = True
    use_tiling: bool = True
    subband_mask: tuple[int, int, int, int] = (1, 1, 1, 1)
    fft_part: str = "phase"

    def __post_init__(self):
        n = self.input_size
        if n < 16 or n & (n - 1):
            raise ConfigError(f"input_size must be a power of two >= 16, got {n}")
        if self.stem_stride not in (1, 2):
            raise ConfigError(f"stem_stride must be 1 or 2, got {self.stem_stride}")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lambda_}")
        if self.dwt_window != DWT_WINDOW or self.fft_window != FFT_WINDOW:
            raise ConfigError("branch window sides are fixed at 4 (DWT) and 8 (FFT)")
        if self.fft_part not in FFT_PART_CHOICES:
            raise ConfigError(f"fft_part must be one of {FFT_PART_CHOICES}")
        if len(self.subband_mask) != 4 or any(m not in (0, 1) for m in self.subband_mask):
            raise ConfigError(f"subband_mask must be four 0/1 flags, got {self.subband_mask}")
        if not (self.use_dwt_branch or self.use_fft_branch):
            raise ConfigError("at least one branch must be enabled")

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "c_int": self.c_int,
            "lambda": self.lambda_,
            "dwt_window": self.dwt_window,
            "fft_window": self.fft_window,
            "classifier_widths": list(self.classifier_widths),
            "stem_stride": self.stem_stride,
            "seed": self.seed,
            "use_dwt_branch": self.use_dwt_branch,
            "use_fft_branch": self.use_fft_branch,
            "use_tiling": self.use_tiling,
            "subband_mask": list(self.subband_mask),
            "fft_part": self.fft_part,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        if "classifier_widths" in d:
            d["classifier_widths"] = tuple(d["classifier_widths"])
        if "subband_mask" in d:
            d["subband_mask"] = tuple(d["subband_mask"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "ModelConfig":
        return cls.from_dict(json.loads(s))

    def with_lambda(self, lam: float) -> "ModelConfig":
        return replace(self, lambda_=lam)


# ---------------------------------------------------------------------------
# classifier


@dataclass
class ResidualBlockParams:
    stride: int
    conv_a_w: Tensor
    conv_a_bias: Tensor
    ln_gamma: Tensor
    ln_beta: Tensor
    conv_b_w: Tensor
    conv_b_bias: Tensor
    skip_w: Tensor | None = None   # (Co, Ci) projection when shape changes
    skip_bias: Tensor | None = None


@dataclass
class ClassifierParams:
    stem_w: Tensor
    stem_bias: Tensor
    stem_ln_gamma: Tensor
    stem_ln_beta: Tensor
    blocks: list[ResidualBlockParams]
    head_w: Tensor
    head_bias: Tensor
    stem_stride: int = 2


def init_classifier(rng: np.random.Generator, widths: tuple[int, int],
                    stem_stride: int = 2, dtype=np.float32) -> ClassifierParams:
    w1, w2 = widths

    def u(shape, fan_in):
        a = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-a, a, size=shape).astype(dtype), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    def block(ci, co, stride):
        return ResidualBlockParams(
            stride=stride,
            conv_a_w=u((co, ci, 3, 3), 9 * ci),
            conv_a_bias=zeros((co,)),
            ln_gamma=ones((co, 1, 1)),
            ln_beta=zeros((co, 1, 1)),
            conv_b_w=u((co, co, 3, 3), 9 * co),
            conv_b_bias=zeros((co,)),
            skip_w=None if (ci == co and stride == 1) else u((co, ci), ci),
            skip_bias=None if (ci == co and stride == 1) else zeros((co,)),
        )

    return ClassifierParams(
        stem_w=u((w1, 3, 3, 3), 27),
        stem_bias=zeros((w1,)),
        stem_ln_gamma=ones((w1, 1, 1)),
        stem_ln_beta=zeros((w1, 1, 1)),
        blocks=[block(w1, w1, 1), block(w1, w1, 1), block(w1, w2, 2), block(w2, w2, 1)],
        head_w=u((w2, 1), w2),
        head_bias=zeros((1,)),
        stem_stride=stem_stride,
    )


def _residual_block(h: Tensor, bp: ResidualBlockParams) -> Tensor:
    t = T.conv3x3(h, bp.conv_a_w, bp.conv_a_bias, stride=bp.stride)
    t = T.gelu(T.layernorm(t, bp.ln_gamma, bp.ln_beta, axes=(-2, -1)))
    t = T.conv3x3(t, bp.conv_b_w, bp.conv_b_bias)
    if bp.skip_w is None:
        skip = h
    else:
        skip = h if bp.stride == 1 else T.subsample(h, bp.stride)
        skip = T.conv1x1(skip, bp.skip_w, bp.skip_bias)
    return T.add(t, skip)


def classifier_logits(features: Tensor, cp: ClassifierParams) -> Tensor:
    """Residual CNN -> global average pool -> one logit per sample."""
    h = T.conv3x3(features, cp.stem_w, cp.stem_bias, stride=cp.stem_stride)
    h = T.gelu(T.layernorm(h, cp.stem_ln_gamma, cp.stem_ln_beta, axes=(-2, -1)))
    for bp in cp.blocks:
        h = _residual_block(h, bp)
    pooled = T.mean(h, axes=(2, 3))
    logits = T.linear(pooled, cp.head_w, cp.head_bias)
    return T.reshape(logits, (features.shape[0],))


def classify(features: Tensor, cp: ClassifierParams) -> Tensor:
    """Fake-probability in (0, 1) for each sample."""
    return T.sigmoid(classifier_logits(features, cp))


# ---------------------------------------------------------------------------
# detector


@dataclass
class DetectorParams:
    dwt_branch: WindowAttentionParams
    fft_branch: WindowAttentionParams
    classifier: ClassifierParams
    lambda_: float = 0.4

    def __post_init__(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ContractError(f"lambda must be in [0, 1], got {self.lambda_}")
        if self.dwt_branch.b != DWT_WINDOW or self.fft_branch.b != FFT_WINDOW:
            raise ContractError("branch window sides are fixed at 4 (DWT) and 8 (FFT)")


def init_detector_params(cfg: ModelConfig, dtype=np.float32) -> DetectorParams:
    """Seeded initialization; the draw order is the named_params order."""
    rng = np.random.default_rng(cfg.seed)
    return DetectorParams(
        dwt_branch=init_window_attention(rng, 3, cfg.c_int, DWT_WINDOW, dtype),
        fft_branch=init_window_attention(rng, 3, cfg.c_int, FFT_WINDOW, dtype),
        classifier=init_classifier(rng, cfg.classifier_widths, cfg.stem_stride, dtype),
        lambda_=cfg.lambda_,
    )


_BRANCH_FIELDS = ("pre_w", "pre_bias", "dw_w", "dw_bias", "wq", "wk", "wv",
                  "mlp_w", "mlp_bias", "out_w", "out_bias", "ln_gamma", "ln_beta")
_BLOCK_FIELDS = ("conv_a_w", "conv_a_bias", "ln_gamma", "ln_beta",
                 "conv_b_w", "conv_b_bias", "skip_w", "skip_bias")


def named_params(params: DetectorParams) -> list[tuple[str, Tensor]]:
    """Stable (name, tensor) listing used by the optimizer and checkpoints."""
    out: list[tuple[str, Tensor]] = []
    for prefix, branch in (("dwt", params.dwt_branch), ("fft", params.fft_branch)):
        for f in _BRANCH_FIELDS:
            out.append((f"{prefix}.{f}", getattr(branch, f)))
    cp = params.classifier
    out += [("clf.stem_w", cp.stem_w), ("clf.stem_bias", cp.stem_bias),
            ("clf.stem_ln_gamma", cp.stem_ln_gamma), ("clf.stem_ln_beta", cp.stem_ln_beta)]
    for i, bp in enumerate(cp.blocks):
        for f in _BLOCK_FIELDS:
            t = getattr(bp, f)
            if t is not None:
                out.append((f"clf.block{i}.{f}", t))
    out += [("clf.head_w", cp.head_w), ("clf.head_bias", cp.head_bias)]
    return out


def branch_param_names(prefix: str) -> set[str]:
    return {f"{prefix}.{f}" for f in _BRANCH_FIELDS}


def fuse(dwt_out: Tensor, fft_out: Tensor, lam: float) -> Tensor:
    """Convex combination (1 - lam) * dwt_out + lam * fft_out."""
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"fusion weight {lam} outside [0, 1]")
    if dwt_out.shape != fft_out.shape:
        raise DimensionError(f"fuse shapes {dwt_out.shape} vs {fft_out.shape}")
    return T.add(T.scale(dwt_out, 1.0 - lam), T.scale(fft_out, lam))


def dwt_branch(x: Tensor, bp: WindowAttentionParams, cfg: ModelConfig) -> Tensor:
    """Subband decomposition -> (tiling ->) attention -> reconstruction."""
    sub = dwt_haar2(x)
    ihat = sub.ihat
    if any(m == 0 for m in cfg.subband_mask):
        mask = np.asarray(cfg.subband_mask, dtype=x.dtype).reshape(1, 4, 1, 1, 1)
        ihat = T.mul_const(ihat, mask)
    if cfg.use_tiling:
        tiled = dwt_window_tile(ihat)
        t = T.layernorm(tiled.data, bp.ln_gamma, bp.ln_beta, axes=(-1,))
        t = window_attention_block(t, bp)
        out = dwt_window_untile(t, origin=tiled.origin)
    else:
        # Ablation path: the same attention applied to each subband plane,
        # normalized over its spatial extent.
        bands = []
        for i in range(4):
            band = T.index_axis(ihat, 1, i)
            band = T.layernorm(band, bp.ln_gamma, bp.ln_beta, axes=(-2, -1))
            bands.append(window_attention_block(band, bp))
        out = T.stack_axis1(bands)
    return idwt_haar2(out)


def fft_branch(x: Tensor, bp: WindowAttentionParams, cfg: ModelConfig) -> Tensor:
    """Attention over the phase plane; amplitude passes through untouched
    (unless the phase+amp ablation trains it as well).

    The attended phase is projected back onto odd (Hermitian) symmetry
    before recombination: the spectrum then stays conjugate-symmetric, the
    inverse transform is real up to roundoff, and the output's amplitude
    spectrum equals the input's exactly.
    """
    pol = polar_decompose(fft2(x))
    new_phase = hermitian_phase_project(window_attention_block(pol.phase, bp))
    if cfg.fft_part == "phase":
        spec = polar_recombine(pol.amplitude.detach(), new_phase)
    else:
        new_amp = window_attention_block(pol.amplitude, bp)
        spec = polar_compose_signed(new_amp, new_phase)
    out, _residual = ifft2(spec)
    return out


def detector_features(x: Tensor, params: DetectorParams, cfg: ModelConfig) -> Tensor:
    """Fused branch output. Branches whose fusion weight is exactly 0 or 1
    (or that are toggled off) are skipped entirely."""
    lam = params.lambda_
    run_dwt = cfg.use_dwt_branch and (lam < 1.0 or not cfg.use_fft_branch)
    run_fft = cfg.use_fft_branch and (lam > 0.0 or not cfg.use_dwt_branch)
    if run_dwt and run_fft:
        return fuse(dwt_branch(x, params.dwt_branch, cfg),
                    fft_branch(x, params.fft_branch, cfg), lam)
    if run_dwt:
        return dwt_branch(x, params.dwt_branch, cfg)
    if run_fft:
        return fft_branch(x, params.fft_branch, cfg)
    raise ConfigError("no branch left to run")


def detector_logits(x: Tensor, params: DetectorParams, cfg: ModelConfig) -> Tensor:
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != x.shape[3]:
        raise DimensionError(f"detector expects B,3,N,N input, got {x.shape}")
    n = x.shape[2]
    if n < 16 or n & (n - 1):
        raise DimensionError(f"detector input size must be a power of two >= 16, got {n}")
    return classifier_logits(detector_features(x, params, cfg), params.classifier)


def detector_probs(x: Tensor, params: DetectorParams, cfg: ModelConfig) -> Tensor:
    """End-to-end forward pass: fake-probabilities shaped (B,)."""
    return T.sigmoid(detector_logits(x, params, cfg))

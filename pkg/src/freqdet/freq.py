"""2-D frequency transforms: one-level Haar DWT, radix-2 FFT, polar spectra.

Conventions used throughout the package:

* DWT: orthonormal Haar on non-overlapping 2x2 blocks. For a block
  [[a, b], [c, d]] the coefficients are LL=(a+b+c+d)/2, HL=(a-b+c-d)/2,
  LH=(a+b-c-d)/2, HH=(a-b-c+d)/2. Subbands stack in LL, LH, HL, HH order.
* FFT: unnormalized forward DFT; the inverse carries the 1/(H*W) factor.
  Extents must be powers of two (desk scale).
* Polar form: amplitude = sqrt(re^2 + im^2) >= 0, phase = atan2(im, re).
  Bins with amplitude below PHASE_GUARD get phase 0 and zero gradient.

Complex planes travel through the autodiff graph packed as real tensors
with a trailing extent-2 axis (index 0 = real, 1 = imaginary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, UnsupportedSizeError
from .tensor import Tensor, _node, index_axis

PHASE_GUARD = 1e-12


# ---------------------------------------------------------------------------
# Haar DWT


def _dwt_arrays(x: np.ndarray) -> np.ndarray:
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    s, t = a + b, c + d
    u, v = a - b, c - d
    return np.stack([(s + t) * 0.5, (s - t) * 0.5, (u + v) * 0.5, (u - v) * 0.5], axis=1)


def _idwt_arrays(bands: np.ndarray) -> np.ndarray:
    ll, lh, hl, hh = bands[:, 0], bands[:, 1], bands[:, 2], bands[:, 3]
    s, t = ll + lh, ll - lh
    u, v = hl + hh, hl - hh
    B, C, h, w = ll.shape
    out = np.empty((B, C, 2 * h, 2 * w), dtype=bands.dtype)
    out[..., 0::2, 0::2] = (s + u) * 0.5
    out[..., 0::2, 1::2] = (s - u) * 0.5
    out[..., 1::2, 0::2] = (t + v) * 0.5
    out[..., 1::2, 1::2] = (t - v) * 0.5
    return out


@dataclass
class SubbandSet:
    """The four Haar subbands of a batch of images.

    ``ihat`` holds the stacked (B, 4, C, H/2, W/2) tensor in LL, LH, HL, HH
    order; the per-band accessors are graph-connected views into it.
    """

    ihat: Tensor
    _bands: dict = field(default_factory=dict, repr=False)

    def band(self, i: int) -> Tensor:
        if i not in self._bands:
            self._bands[i] = index_axis(self.ihat, 1, i)
        return self._bands[i]

    @property
    def ll(self) -> Tensor:
        return self.band(0)

    @property
    def lh(self) -> Tensor:
        return self.band(1)

    @property
    def hl(self) -> Tensor:
        return self.band(2)

    @property
    def hh(self) -> Tensor:
        return self.band(3)


def dwt_haar2(x: Tensor) -> SubbandSet:
    """One-level orthonormal 2-D Haar transform of a (B, C, H, W) tensor."""
    if x.ndim != 4:
        raise DimensionError(f"dwt_haar2 expects B,C,H,W, got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"dwt_haar2 needs even extents, got {H}x{W}")
    # Orthonormal transform: the adjoint equals the inverse.
    out = _node(_dwt_arrays(x.data), (x,), lambda g: (_idwt_arrays(g),), "dwt_haar2")
    return SubbandSet(out)


def idwt_haar2(s: SubbandSet | Tensor) -> Tensor:
    """Exact inverse of dwt_haar2."""
    t = s.ihat if isinstance(s, SubbandSet) else s
    if t.ndim != 5 or t.shape[1] != 4:
        raise DimensionError(f"idwt_haar2 expects B,4,C,h,w, got {t.shape}")
    return _node(_idwt_arrays(t.data), (t,), lambda g: (_dwt_arrays(g),), "idwt_haar2")


# ---------------------------------------------------------------------------
# radix-2 FFT


def _bit_reverse_indices(n: int) -> np.ndarray:
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    bits = n.bit_length() - 1
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last_axis(z: np.ndarray) -> np.ndarray:
    """Iterative radix-2 Cooley-Tukey over the last axis (complex, in place)."""
    n = z.shape[-1]
    if n == 1:
        return z.copy()
    out = np.ascontiguousarray(z[..., _bit_reverse_indices(n)])
    m = 1
    while m < n:
        half = m
        m *= 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m).astype(out.dtype)
        v = out.reshape(*out.shape[:-1], n // m, m)
        even = v[..., :half].copy()
        odd = v[..., half:] * tw
        v[..., :half] = even + odd
        v[..., half:] = even - odd
    return out


def _require_pow2(n: int) -> None:
    if n < 1 or (n & (n - 1)) != 0:
        raise UnsupportedSizeError(f"FFT extent {n} is not a power of two")


def _fft2_complex(z: np.ndarray) -> np.ndarray:
    z = _fft_last_axis(z)
    return _fft_last_axis(z.swapaxes(-1, -2)).swapaxes(-1, -2)


def _ifft2_complex(z: np.ndarray) -> np.ndarray:
    n = z.shape[-1] * z.shape[-2]
    return np.conj(_fft2_complex(np.conj(z))) / n


def _complex_dtype(dtype) -> np.dtype:
    return np.dtype(np.complex64 if dtype == np.float32 else np.complex128)


def _pack(z: np.ndarray, dtype) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-1).astype(dtype, copy=False)


@dataclass
class ComplexSpectrum:
    """A complex plane packed as a real tensor with trailing (re, im) axis."""

    packed: Tensor

    @property
    def re(self) -> Tensor:
        return index_axis(self.packed, -1, 0)

    @property
    def im(self) -> Tensor:
        return index_axis(self.packed, -1, 1)

    @property
    def shape(self):
        return self.packed.shape[:-1]


@dataclass
class PolarSpectrum:
    """Amplitude/phase planes packed with a trailing (amplitude, phase) axis."""

    packed: Tensor

    @property
    def amplitude(self) -> Tensor:
        return index_axis(self.packed, -1, 0)

    @property
    def phase(self) -> Tensor:
        return index_axis(self.packed, -1, 1)


def fft2(x: Tensor) -> ComplexSpectrum:
    """Unnormalized 2-D forward DFT of each channel plane of (B, C, H, W)."""
    if x.ndim != 4:
        raise DimensionError(f"fft2 expects B,C,H,W, got {x.shape}")
    H, W = x.shape[-2:]
    _require_pow2(H)
    _require_pow2(W)
    cdt = _complex_dtype(x.dtype)
    z = _fft2_complex(x.data.astype(cdt))

    def bwd(g):
        # y = F x with x real and F symmetric: dL/dx = Re(F conj(g)).
        gz = (g[..., 0] - 1j * g[..., 1]).astype(cdt)
        return (_fft2_complex(gz).real.astype(x.dtype, copy=False),)

    return ComplexSpectrum(_node(_pack(z, x.dtype), (x,), bwd, "fft2"))


def ifft2(s: ComplexSpectrum) -> tuple[Tensor, float]:
    """1/(H*W)-normalized inverse DFT; returns the real part and the max-abs
    imaginary residual (a diagnostic, not part of the graph)."""
    t = s.packed
    H, W = t.shape[-3:-1]
    _require_pow2(H)
    _require_pow2(W)
    dtype = t.dtype
    cdt = _complex_dtype(dtype)
    z = (t.data[..., 0] + 1j * t.data[..., 1]).astype(cdt)
    w = _ifft2_complex(z)
    residual = float(np.abs(w.imag).max()) if w.size else 0.0

    def bwd(g):
        q = _ifft2_complex(g.astype(cdt))
        return (_pack(q.real - 1j * q.imag, dtype),)

    return _node(w.real.astype(dtype, copy=False), (t,), bwd, "ifft2"), residual


# ---------------------------------------------------------------------------
# polar form


def polar_decompose(s: ComplexSpectrum) -> PolarSpectrum:
    """Split a spectrum into amplitude and phase in [-pi, pi].

    Phase is defined as 0 wherever amplitude < PHASE_GUARD, and such bins
    propagate zero gradient (atan2 singularity guard).
    """
    t = s.packed
    re = t.data[..., 0]
    im = t.data[..., 1]
    amp = np.hypot(re, im)
    safe = amp >= PHASE_GUARD
    phase = np.where(safe, np.arctan2(im, re), 0.0).astype(t.dtype, copy=False)

    def bwd(g):
        g_amp = g[..., 0]
        g_ph = g[..., 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            r2 = amp * amp
            dre = g_amp * re / amp - g_ph * im / r2
            dim = g_amp * im / amp + g_ph * re / r2
        zero = np.zeros_like(re)
        return (np.stack([np.where(safe, dre, zero), np.where(safe, dim, zero)],
                         axis=-1).astype(t.dtype, copy=False),)

    packed = np.stack([amp.astype(t.dtype, copy=False), phase], axis=-1)
    return PolarSpectrum(_node(packed, (t,), bwd, "polar_decompose"))


def _polar_compose(amplitude: Tensor, phase: Tensor, op: str) -> ComplexSpectrum:
    if amplitude.shape != phase.shape:
        raise DimensionError(f"polar shapes {amplitude.shape} vs {phase.shape}")
    a = amplitude.data
    ph = phase.data
    cos, sin = np.cos(ph), np.sin(ph)

    def bwd(g):
        g_re = g[..., 0]
        g_im = g[..., 1]
        ga = g_re * cos + g_im * sin
        gp = a * (g_im * cos - g_re * sin)
        return (ga.astype(a.dtype, copy=False), gp.astype(a.dtype, copy=False))

    packed = np.stack([a * cos, a * sin], axis=-1).astype(a.dtype, copy=False)
    return ComplexSpectrum(_node(packed, (amplitude, phase), bwd, op))


def polar_recombine(amplitude: Tensor, phase: Tensor) -> ComplexSpectrum:
    """re = A cos(phi), im = A sin(phi). Amplitude must be nonnegative."""
    if np.any(amplitude.data < 0):
        raise ContractError("polar_recombine: negative amplitude")
    return _polar_compose(amplitude, phase, "polar_recombine")


def polar_compose_signed(amplitude: Tensor, phase: Tensor) -> ComplexSpectrum:
    """Recombination without the sign check, for trained-amplitude variants."""
    return _polar_compose(amplitude, phase, "polar_compose_signed")


def hermitian_average(packed: Tensor) -> ComplexSpectrum:
    """Project a packed spectrum onto Hermitian symmetry:
    out[k] = (S[k] + conj(S[-k])) / 2. Self-adjoint linear map."""
    if packed.ndim < 3 or packed.shape[-1] != 2:
        raise DimensionError(f"hermitian_average expects (..., H, W, 2), got {packed.shape}")
    H, W = packed.shape[-3:-1]
    iu = (-np.arange(H)) % H
    iv = (-np.arange(W)) % W

    def project(arr):
        mirrored = arr[..., iu, :, :][..., :, iv, :]
        out = np.empty_like(arr)
        out[..., 0] = 0.5 * (arr[..., 0] + mirrored[..., 0])
        out[..., 1] = 0.5 * (arr[..., 1] - mirrored[..., 1])
        return out

    return ComplexSpectrum(_node(project(packed.data), (packed,),
                                 lambda g: (project(g),), "hermitian_average"))


def hermitian_phase_project(phase: Tensor) -> Tensor:
    """Map an arbitrary phase plane to the nearest odd-symmetric one.

    Unit phasors are Hermitian-averaged and their angle re-extracted, so a
    spectrum recombined from the result with any even-symmetric amplitude
    is exactly Hermitian (real inverse transform, amplitude untouched).
    Phases that are already odd-symmetric pass through unchanged.
    """
    ones = Tensor(np.ones(phase.shape, dtype=phase.dtype))
    h = hermitian_average(_polar_compose(ones, phase, "unit_phasor").packed)
    return polar_decompose(h).phase


# ---------------------------------------------------------------------------
# phase swap


def phase_swap(img_a: Tensor, img_b: Tensor) -> tuple[Tensor, Tensor]:
    """Cross-combine two images' spectra.

    Returns (IFFT of A_a with phase of b, IFFT of A_b with phase of a),
    real parts only.
    """
    if img_a.shape != img_b.shape:
        raise DimensionError(f"phase_swap shapes {img_a.shape} vs {img_b.shape}")
    pa = polar_decompose(fft2(img_a))
    pb = polar_decompose(fft2(img_b))
    out_ab, _ = ifft2(polar_recombine(pa.amplitude, pb.phase))
    out_ba, _ = ifft2(polar_recombine(pb.amplitude, pa.phase))
    return out_ab, out_ba

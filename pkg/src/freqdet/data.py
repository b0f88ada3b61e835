"""Dataset manifests, image decoding, and the synthetic corpus generator.

Images are interchanged as binary PPM (P6, maxval 255); 8-bit RGB PNG is
decoded too when Pillow is importable. Manifests are JSON lines of
``{"path": ..., "label": 0|1, "split": "train"|"val"|"test"}`` with paths
resolved relative to the manifest file.

The synthetic corpus is built from smoothed random fields. Fakes blend in
a nearest-neighbour 2x resampling artifact aligned to the even pixel grid
(at strength 1 every aligned 2x2 block is exactly constant). Reals blend
in the same artifact at a diagonally shifted, off-grid alignment. Both
classes therefore share identical spectral-energy statistics; what
separates them is the grid alignment of the resampling lattice, a trace
carried by the Fourier phase rather than the amplitude. Detectors trained
on this corpus must read grid phase, which is what the phase-swap
diagnostic measures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, ManifestError

SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    path: Path
    label: int
    split: str


@dataclass
class SyntheticSpec:
    n_per_class: int
    size: int = 32
    seed: int = 0
    artifact_strength: float = 0.75

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")
        if self.size < 16 or self.size & (self.size - 1):
            raise ConfigError(f"size must be a power of two >= 16, got {self.size}")
        if not 0.0 <= self.artifact_strength <= 1.0:
            raise ConfigError(f"artifact_strength must be in [0, 1], got {self.artifact_strength}")


# ---------------------------------------------------------------------------
# PPM


def write_ppm(path, img: np.ndarray) -> None:
    """Write an 8-bit (3, H, W) uint8 array as binary P6."""
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[0] != 3:
        raise ContractError(f"write_ppm expects uint8 (3, H, W), got {img.dtype} {img.shape}")
    _, h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes())


def read_ppm(path) -> np.ndarray:
    """Read binary P6 with maxval 255 into a (3, H, W) uint8 array."""
    raw = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ContractError(f"truncated PPM header in {path}")
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise ContractError(f"{path}: not a binary P6 file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ContractError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    data = raw[pos:pos + 3 * w * h]
    if len(data) != 3 * w * h:
        raise ContractError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1).copy()


def _read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as e:
            raise ContractError("PNG support requires Pillow") from e
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        return arr.transpose(2, 0, 1).copy()
    raise ContractError(f"unsupported image format: {path}")


# ---------------------------------------------------------------------------
# decode + preprocess


def center_crop_window(h: int, w: int) -> tuple[int, int, int]:
    """(top, left, side) of the largest centered square."""
    side = min(h, w)
    return (h - side) // 2, (w - side) // 2, side


def bilinear_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Deterministic bilinear resize of (3, S, S) float data to (3, size, size).

    Half-pixel-center sampling; same-size input is returned unchanged.
    """
    _, h, w = img.shape
    if h == size and w == size:
        return img
    out_dtype = img.dtype

    def axis_coords(src, dst):
        c = (np.arange(dst) + 0.5) * (src / dst) - 0.5
        c = np.clip(c, 0.0, src - 1.0)
        i0 = np.floor(c).astype(np.intp)
        i1 = np.minimum(i0 + 1, src - 1)
        return i0, i1, (c - i0).astype(img.dtype)

    r0, r1, fr = axis_coords(h, size)
    c0, c1, fc = axis_coords(w, size)
    top = img[:, r0, :]
    bot = img[:, r1, :]
    rows = top + fr[None, :, None] * (bot - top)
    left = rows[:, :, c0]
    right = rows[:, :, c1]
    return (left + fc[None, None, :] * (right - left)).astype(out_dtype)


def decode_and_preprocess(path, size: int) -> np.ndarray:
    """Decode -> center crop to a square -> bilinear resize -> scale to [0, 1].

    Returns float32 (3, size, size). Fully deterministic.
    """
    img = _read_image(path)
    _, h, w = img.shape
    top, left, side = center_crop_window(h, w)
    cropped = img[:, top:top + side, left:left + side].astype(np.float32) / np.float32(255.0)
    return bilinear_resize(cropped, size)


# ---------------------------------------------------------------------------
# manifests


def load_manifest(path) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest; every referenced file must exist."""
    path = Path(path)
    if not path.exists():
        raise OSError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    base = path.parent
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
        if not isinstance(obj, dict) or set(obj) != {"path", "label", "split"}:
            raise ManifestError(f"{path}:{lineno}: expected keys path/label/split")
        if obj["label"] not in (0, 1):
            raise ManifestError(f"{path}:{lineno}: label must be 0 or 1, got {obj['label']!r}")
        if obj["split"] not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: split must be one of {SPLITS}")
        p = base / obj["path"]
        if not p.exists():
            raise OSError(f"{path}:{lineno}: image not found: {p}")
        entries.append(ManifestEntry(path=p, label=int(obj["label"]), split=obj["split"]))
    return entries


def split_entries(entries: list[ManifestEntry], split: str) -> list[ManifestEntry]:
    return [e for e in entries if e.split == split]


def load_split_arrays(entries: list[ManifestEntry], split: str,
                      size: int) -> tuple[np.ndarray, np.ndarray]:
    """Decode a whole split into (N, 3, size, size) float32 plus labels."""
    chosen = split_entries(entries, split)
    if not chosen:
        return (np.zeros((0, 3, size, size), dtype=np.float32),
                np.zeros((0,), dtype=np.int64))
    x = np.stack([decode_and_preprocess(e.path, size) for e in chosen])
    y = np.array([e.label for e in chosen], dtype=np.int64)
    return x, y


# ---------------------------------------------------------------------------
# synthetic corpus


def _box_blur3(x: np.ndarray) -> np.ndarray:
    """Circular 3x3 box blur per channel."""
    acc = np.zeros_like(x)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            acc += np.roll(x, (di, dj), axis=(-2, -1))
    return acc / 9.0


def _smooth_field(rng: np.random.Generator, size: int) -> np.ndarray:
    return _box_blur3(rng.random((3, size, size)))


def _grid_artifact(img: np.ndarray) -> np.ndarray:
    """2x mean-pool then nearest-neighbour 2x upsample, aligned to the grid."""
    c, h, w = img.shape
    pooled = img.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    return pooled.repeat(2, axis=1).repeat(2, axis=2)


OFFGRID_SHIFT = (1, 1)


def _offgrid_artifact(img: np.ndarray) -> np.ndarray:
    """The same resampling trace with its lattice shifted off the even grid.

    Circularly shifting before and back after the pool/upsample keeps the
    amplitude spectrum distribution identical to the aligned artifact; only
    the lattice phase differs.
    """
    di, dj = OFFGRID_SHIFT
    shifted = np.roll(img, (di, dj), axis=(-2, -1))
    return np.roll(_grid_artifact(shifted), (-di, -dj), axis=(-2, -1))


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def _split_for_index(order: np.ndarray, n: int) -> dict[int, str]:
    n_train = int(n * 0.8)
    n_val = int(n * 0.1)
    assign = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            assign[int(idx)] = "train"
        elif rank < n_train + n_val:
            assign[int(idx)] = "val"
        else:
            assign[int(idx)] = "test"
    return assign


def gen_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write the corpus and return the manifest path. Bitwise deterministic
    for a given spec."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    s = spec.artifact_strength
    lines: list[str] = []
    for label, prefix in ((0, "real"), (1, "fake")):
        splits = _split_for_index(rng.permutation(spec.n_per_class), spec.n_per_class)
        for i in range(spec.n_per_class):
            field = _smooth_field(rng, spec.size)
            if s > 0.0:
                art = _grid_artifact(field) if label == 1 else _offgrid_artifact(field)
                field = (1.0 - s) * field + s * art
            name = f"{prefix}_{i:05d}.ppm"
            write_ppm(out_dir / name, _quantize(field))
            lines.append(json.dumps({"path": name, "label": label, "split": splits[i]}))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest

"""Metrics and diagnostics: accuracy, average precision, the phase-swap
experiment, logit histograms, and the ablation harness.

Average precision is the information-retrieval form: the mean, over
positives in decreasing-score order, of precision at that rank. Score
ties keep their original order (stable sort). Accuracy thresholds at 0.5
by default and a score exactly on the threshold counts as fake.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import ManifestEntry, decode_and_preprocess, load_manifest, split_entries
from .errors import ContractError, MetricError
from .freq import phase_swap
from .model import DetectorParams, ModelConfig, detector_logits, detector_probs
from .tensor import Tensor

SCORE_BATCH = 128


@dataclass
class EvalReport:
    accuracy: float
    average_precision: float
    n: int
    threshold: float = 0.5


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError(f"accuracy shapes {scores.shape} vs {labels.shape}")
    if scores.size == 0:
        raise MetricError("accuracy of an empty score list is undefined")
    pred = (scores >= threshold).astype(labels.dtype)
    return float((pred == labels).mean())


def average_precision(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError(f"average_precision shapes {scores.shape} vs {labels.shape}")
    if labels.sum() == 0:
        raise MetricError("average precision is undefined without positives")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    cum_pos = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    prec_at_pos = cum_pos[ranked == 1] / ranks[ranked == 1]
    return float(prec_at_pos.mean())


# ---------------------------------------------------------------------------
# scoring


def score_arrays(params: DetectorParams, cfg: ModelConfig, x: np.ndarray,
                 logits: bool = False) -> np.ndarray:
    """Score (N, 3, S, S) float32 images in batches; returns float64 scores."""
    outs = []
    for start in range(0, x.shape[0], SCORE_BATCH):
        xb = Tensor(x[start:start + SCORE_BATCH])
        fn = detector_logits if logits else detector_probs
        outs.append(fn(xb, params, cfg).data.astype(np.float64))
    return np.concatenate(outs) if outs else np.zeros((0,), dtype=np.float64)


def evaluate_manifest(params: DetectorParams, cfg: ModelConfig, manifest_path,
                      split: str = "test", threshold: float = 0.5) -> EvalReport:
    entries = split_entries(load_manifest(manifest_path), split)
    if not entries:
        raise MetricError(f"no entries in split {split!r}")
    x = np.stack([decode_and_preprocess(e.path, cfg.input_size) for e in entries])
    y = np.array([e.label for e in entries])
    scores = score_arrays(params, cfg, x)
    return EvalReport(accuracy=accuracy(scores, y, threshold),
                      average_precision=average_precision(scores, y),
                      n=len(entries), threshold=threshold)


# ---------------------------------------------------------------------------
# phase-swap experiment


def phase_swap_experiment(params: DetectorParams, cfg: ModelConfig,
                          real_entries: list[ManifestEntry],
                          fake_entries: list[ManifestEntry],
                          n: int, seed: int) -> tuple[float, float]:
    """Score composites built from n real/fake pairs.

    Returns (mean fake-probability of real-amplitude/fake-phase composites,
    mean fake-probability of fake-amplitude/real-phase composites).
    """
    if len(real_entries) < n or len(fake_entries) < n:
        raise ContractError(
            f"need {n} images per class, have {len(real_entries)} real / {len(fake_entries)} fake")
    rng = np.random.default_rng(seed)
    ri = rng.choice(len(real_entries), size=n, replace=False)
    fi = rng.choice(len(fake_entries), size=n, replace=False)
    reals = np.stack([decode_and_preprocess(real_entries[i].path, cfg.input_size)
                      for i in ri]).astype(np.float64)
    fakes = np.stack([decode_and_preprocess(fake_entries[i].path, cfg.input_size)
                      for i in fi]).astype(np.float64)
    # Composites are built in float64 for spectral fidelity, scored in float32.
    fake_phase, fake_amp = phase_swap(Tensor(reals), Tensor(fakes))
    p_fake_phase = score_arrays(params, cfg, fake_phase.data.astype(np.float32))
    p_fake_amp = score_arrays(params, cfg, fake_amp.data.astype(np.float32))
    return float(p_fake_phase.mean()), float(p_fake_amp.mean())


# ---------------------------------------------------------------------------
# logit histogram


def logit_histogram(params: DetectorParams, cfg: ModelConfig, manifest_path,
                    bins: int = 40, split: str = "test") -> list[tuple[float, int, int]]:
    """Per-class counts of pre-sigmoid logits; rows are (bin_center, real, fake)."""
    entries = split_entries(load_manifest(manifest_path), split)
    if not entries:
        raise MetricError(f"no entries in split {split!r}")
    x = np.stack([decode_and_preprocess(e.path, cfg.input_size) for e in entries])
    y = np.array([e.label for e in entries])
    logits = score_arrays(params, cfg, x, logits=True)
    lo, hi = float(logits.min()), float(logits.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    real_counts, _ = np.histogram(logits[y == 0], bins=edges)
    fake_counts, _ = np.histogram(logits[y == 1], bins=edges)
    centers = (edges[:-1] + edges[1:]) / 2
    return [(float(c), int(r), int(f))
            for c, r, f in zip(centers, real_counts, fake_counts)]


def write_histogram_csv(path, rows: list[tuple[float, int, int]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bins", "real_count", "fake_count"])
        for center, r, fk in rows:
            writer.writerow([f"{center:.10g}", r, fk])


def histogram_overlap(rows: list[tuple[float, int, int]]) -> float:
    """Overlap coefficient of the two normalized class histograms."""
    real = np.array([r for _, r, _ in rows], dtype=np.float64)
    fake = np.array([f for _, _, f in rows], dtype=np.float64)
    if real.sum() == 0 or fake.sum() == 0:
        raise MetricError("histogram overlap needs both classes")
    return float(np.minimum(real / real.sum(), fake / fake.sum()).sum())


# ---------------------------------------------------------------------------
# ablation harness


@dataclass
class AblationVariant:
    name: str
    model_config: ModelConfig


def lambda_grid(base: ModelConfig) -> list[AblationVariant]:
    return [AblationVariant(f"lambda_{lam:g}", base.with_lambda(lam))
            for lam in (0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)]


def subband_grid(base: ModelConfig) -> list[AblationVariant]:
    masks = [("ll_only", (1, 0, 0, 0)), ("lh_only", (0, 1, 0, 0)),
             ("hl_only", (0, 0, 1, 0)), ("hh_only", (0, 0, 0, 1)),
             ("hl_hh", (0, 0, 1, 1)), ("lh_hl_hh", (0, 1, 1, 1)),
             ("all", (1, 1, 1, 1))]
    return [AblationVariant(f"subbands_{name}", replace(base, subband_mask=mask))
            for name, mask in masks]


def module_grid(base: ModelConfig) -> list[AblationVariant]:
    return [
        AblationVariant("no_fft_branch", replace(base, use_fft_branch=False)),
        AblationVariant("no_tiling", replace(base, use_tiling=False)),
        AblationVariant("no_dwt_branch", replace(base, use_dwt_branch=False)),
        AblationVariant("full", base),
    ]


def fft_part_grid(base: ModelConfig) -> list[AblationVariant]:
    return [AblationVariant("fft_phase_only", replace(base, fft_part="phase")),
            AblationVariant("fft_phase_amp", replace(base, fft_part="phase+amp"))]


GRIDS = {"lambda": lambda_grid, "subbands": subband_grid,
         "modules": module_grid, "fft": fft_part_grid}


def ablation_run(train_config, manifest_path, variants: list[AblationVariant],
                 out_dir=None, log_fn=None) -> list[dict]:
    """Train every variant from the same seed and corpus; one result row each."""
    from .train import train  # local import to avoid a cycle

    rows = []
    for variant in variants:
        cfg = replace(train_config, lambda_=variant.model_config.lambda_)
        sub_dir = Path(out_dir) / variant.name if out_dir is not None else None
        if log_fn is not None:
            log_fn(f"[ablate] training variant {variant.name}")
        result = train(cfg, manifest_path, out_dir=sub_dir,
                       model_config=variant.model_config, log_fn=None)
        report = evaluate_manifest(result.params, result.model_config, manifest_path)
        rows.append({"variant": variant.name, "accuracy": report.accuracy,
                     "average_precision": report.average_precision, "n": report.n})
        if log_fn is not None:
            log_fn(f"[ablate] {variant.name}: acc {report.accuracy:.4f} "
                   f"ap {report.average_precision:.4f}")
    return rows


def write_ablation_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "accuracy", "average_precision", "n"])
        for r in rows:
            writer.writerow([r["variant"], f"{r['accuracy']:.6f}",
                             f"{r['average_precision']:.6f}", r["n"]])

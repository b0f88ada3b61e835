"""Training loop: BCE + Adam + step-decay schedule, seeded end to end.

The config file format is flat ``key=value`` text with keys named after
TrainConfig fields ("lambda" is accepted for ``lambda_``). CLI flags
override file values. Runs are bitwise reproducible for a fixed seed in
single-threaded mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .checkpoint import save_checkpoint
from .data import load_manifest, load_split_arrays
from .errors import ConfigError, TrainingDiverged
from .model import (DetectorParams, ModelConfig, detector_probs,
                    init_detector_params, named_params)
from .optim import AdamState, adam_step
from .tensor import Tensor, bce_loss

LOG_HEADER = ("epoch", "lr", "train_loss", "val_acc", "val_ap")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    batch_size: int = 32
    epochs: int = 30
    decay_factor: float = 0.8
    decay_every: int = 10
    lambda_: float = 0.4
    seed: int = 0
    input_size: int = 32
    checkpoint_every: int = 10

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lambda_}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.decay_every < 1:
            raise ConfigError("epochs must be >= 0 and decay_every >= 1")


_FIELD_ALIASES = {"lambda": "lambda_"}


def parse_config_file(path) -> dict:
    """key=value lines -> {TrainConfig field: typed value}."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    casts = {"lr": float, "batch_size": int, "epochs": int, "decay_factor": float,
             "decay_every": int, "lambda_": float, "seed": int, "input_size": int,
             "checkpoint_every": int}
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = _FIELD_ALIASES.get(key.strip(), key.strip())
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = casts[key](value.strip())
        except ValueError as e:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from e
    return out


def load_train_config(path=None, **overrides) -> TrainConfig:
    values = parse_config_file(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def lr_schedule(epoch: int, base_lr: float, factor: float = 0.8, every: int = 10) -> float:
    """base_lr * factor ** floor(epoch / every)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return base_lr * factor ** (epoch // every)


@dataclass
class TrainResult:
    params: DetectorParams
    model_config: ModelConfig
    log_path: Path | None
    checkpoint_path: Path | None
    log_rows: list[dict]


def train(config: TrainConfig, manifest_path, out_dir=None,
          model_config: ModelConfig | None = None,
          params_init: DetectorParams | None = None,
          log_fn=None) -> TrainResult:
    """Train a detector on the manifest's train split.

    Writes ``train_log.csv`` plus scheduled and final checkpoints under
    ``out_dir`` when given. ``log_fn`` receives one formatted line per epoch.
    """
    if model_config is None:
        model_config = ModelConfig(input_size=config.input_size,
                                   lambda_=config.lambda_, seed=config.seed)
    else:
        model_config = replace(model_config, input_size=config.input_size,
                               lambda_=config.lambda_)

    entries = load_manifest(manifest_path)
    x_train, y_train = load_split_arrays(entries, "train", config.input_size)
    x_val, y_val = load_split_arrays(entries, "val", config.input_size)
    if len(set(y_train.tolist())) < 2:
        raise ConfigError("train split must contain both classes")

    params = params_init if params_init is not None else init_detector_params(model_config)
    plist = named_params(params)
    state = AdamState()
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    n = x_train.shape[0]
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.lr, config.decay_factor, config.decay_every)
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = Tensor(x_train[idx])
            yb = Tensor(y_train[idx].astype(np.float32))
            probs = detector_probs(xb, params, model_config)
            loss = bce_loss(probs, yb)
            lval = loss.item()
            if not np.isfinite(lval):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            for _, p in plist:
                p.grad = None
            loss.backward()
            adam_step(plist, state, lr)
            losses.append(lval)

        val_acc, val_ap = _val_metrics(params, model_config, x_val, y_val)
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
               "val_acc": val_acc, "val_ap": val_ap}
        rows.append(row)
        if log_fn is not None:
            log_fn(f"epoch {epoch:3d}  lr {lr:.3e}  loss {row['train_loss']:.4f}  "
                   f"val_acc {_fmt(val_acc)}  val_ap {_fmt(val_ap)}")
        if (out_dir is not None and config.checkpoint_every > 0
                and (epoch + 1) % config.checkpoint_every == 0
                and epoch + 1 < config.epochs):
            save_checkpoint(out_dir / f"epoch_{epoch + 1:04d}.ckpt", plist, model_config)

    log_path = ckpt_path = None
    if out_dir is not None:
        log_path = out_dir / "train_log.csv"
        write_log_csv(log_path, rows)
        ckpt_path = out_dir / "final.ckpt"
        save_checkpoint(ckpt_path, plist, model_config)
    return TrainResult(params, model_config, log_path, ckpt_path, rows)


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.4f}"


def _val_metrics(params, model_config, x_val, y_val) -> tuple[float, float]:
    if x_val.shape[0] == 0:
        return float("nan"), float("nan")
    scores = ev.score_arrays(params, model_config, x_val)
    acc = ev.accuracy(scores, y_val)
    ap = ev.average_precision(scores, y_val) if y_val.sum() > 0 else float("nan")
    return acc, ap


def write_log_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_HEADER)
        for r in rows:
            writer.writerow([r["epoch"], f"{r['lr']:.10g}", f"{r['train_loss']:.10g}",
                             _fmt(r["val_acc"]), _fmt(r["val_ap"])])

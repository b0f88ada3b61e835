"""Command-line interface.

One verb per invocation; every file output lands under --out. --threads
pins the BLAS thread pools (set before numpy loads) and defaults to 1 so
repeated runs with the same seed are bitwise identical.

Exit codes: 0 success, 1 contract/data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import FreqdetError

_THREAD_ENV_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="freqdet",
        description="Desk-scale AI-generated-image detector: dual frequency "
                    "branches with windowed attention.")
    parser.add_argument("--threads", type=int, default=1,
                        help="BLAS thread count; 1 (default) for bitwise determinism")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("gen-synthetic", help="generate a synthetic real/fake corpus")
    p.add_argument("--n-per-class", type=int, required=True, help="images per class")
    p.add_argument("--size", type=int, default=32, help="image side (power of two >= 16)")
    p.add_argument("--strength", type=float, default=0.75,
                   help="upsampling-artifact blend strength in [0, 1]")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="output directory for images + manifest")

    p = sub.add_parser("train", help="train a detector")
    p.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    p.add_argument("--config", default=None, help="key=value training config file")
    p.add_argument("--out", required=True, help="directory for checkpoints + log CSV")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 2e-4)")
    p.add_argument("--batch-size", type=int, default=None, help="mini-batch size (default 32)")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default 30)")
    p.add_argument("--decay-factor", type=float, default=None,
                   help="learning-rate decay multiplier (default 0.8)")
    p.add_argument("--decay-every", type=int, default=None,
                   help="epochs between decays (default 10)")
    p.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help="branch fusion weight in [0, 1] (default 0.4)")
    p.add_argument("--seed", type=int, default=None, help="seed for init and shuffling")
    p.add_argument("--input-size", type=int, default=None,
                   help="training resolution (default 32)")
    p.add_argument("--checkpoint-every", type=int, default=None,
                   help="epochs between checkpoints; 0 disables (default 10)")
    p.add_argument("--c-int", type=int, default=16, help="attention channel width")
    p.add_argument("--widths", default="32,64",
                   help="classifier stage widths, e.g. 32,64")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    p.add_argument("--split", default="test", choices=["train", "val", "test"],
                   help="manifest split to score")
    p.add_argument("--threshold", type=float, default=0.5, help="accuracy threshold")
    p.add_argument("--out", default=None, help="optional directory for report.csv")

    p = sub.add_parser("phase-swap", help="score amplitude/phase composites")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    p.add_argument("--split", default="test", choices=["train", "val", "test"],
                   help="split to draw pairs from")
    p.add_argument("--n", type=int, default=200, help="number of real/fake pairs")
    p.add_argument("--seed", type=int, default=0, help="pair-sampling seed")
    p.add_argument("--out", default=None, help="optional directory for phase_swap.csv")

    p = sub.add_parser("histogram", help="export per-class logit histogram CSV")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    p.add_argument("--split", default="test", choices=["train", "val", "test"],
                   help="manifest split to score")
    p.add_argument("--bins", type=int, default=40, help="histogram bin count")
    p.add_argument("--out", required=True, help="directory for histogram.csv")

    p = sub.add_parser("ablate", help="train and score a grid of model variants")
    p.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    p.add_argument("--grid", required=True, choices=["lambda", "subbands", "modules", "fft"],
                   help="which variant grid to run")
    p.add_argument("--epochs", type=int, default=10, help="epochs per variant")
    p.add_argument("--lr", type=float, default=2e-4, help="learning rate")
    p.add_argument("--batch-size", type=int, default=32, help="mini-batch size")
    p.add_argument("--seed", type=int, default=0, help="shared seed for all variants")
    p.add_argument("--input-size", type=int, default=32, help="training resolution")
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.4,
                   help="fusion weight for non-lambda grids")
    p.add_argument("--c-int", type=int, default=16, help="attention channel width")
    p.add_argument("--widths", default="32,64", help="classifier stage widths")
    p.add_argument("--out", required=True, help="directory for ablation.csv")

    p = sub.add_parser("gradcheck", help="finite-difference check of every kernel")
    p.add_argument("--seed", type=int, default=0, help="suite seed")
    p.add_argument("--seeds-per-kernel", type=int, default=100,
                   help="random instances per kernel")
    p.add_argument("--e2e", action="store_true",
                   help="also check the end-to-end detector at 1e-3")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (FreqdetError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _pin_threads(argv: list[str]) -> None:
    threads = 1
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            try:
                threads = int(argv[i + 1])
            except ValueError:
                return  # argparse will report it
        elif a.startswith("--threads="):
            try:
                threads = int(a.split("=", 1)[1])
            except ValueError:
                return
    if "numpy" not in sys.modules:
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(max(1, threads))


def _parse_widths(s: str) -> tuple[int, int]:
    from .errors import ConfigError
    parts = s.split(",")
    if len(parts) != 2:
        raise ConfigError(f"--widths expects two integers, got {s!r}")
    return int(parts[0]), int(parts[1])


def _dispatch(args) -> int:
    from pathlib import Path

    if args.verb == "gen-synthetic":
        from .data import SyntheticSpec, gen_synthetic
        spec = SyntheticSpec(n_per_class=args.n_per_class, size=args.size,
                             seed=args.seed, artifact_strength=args.strength)
        manifest = gen_synthetic(spec, args.out)
        print(manifest)
        return 0

    if args.verb == "train":
        from .model import ModelConfig
        from .train import load_train_config, train
        cfg = load_train_config(
            args.config, lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
            decay_factor=args.decay_factor, decay_every=args.decay_every,
            lambda_=args.lambda_, seed=args.seed, input_size=args.input_size,
            checkpoint_every=args.checkpoint_every)
        model_cfg = ModelConfig(input_size=cfg.input_size, c_int=args.c_int,
                                lambda_=cfg.lambda_, seed=cfg.seed,
                                classifier_widths=_parse_widths(args.widths))
        result = train(cfg, args.manifest, out_dir=args.out,
                       model_config=model_cfg, log_fn=print)
        print(f"checkpoint: {result.checkpoint_path}")
        print(f"log: {result.log_path}")
        return 0

    if args.verb == "eval":
        from .checkpoint import load_detector
        from .evaluate import evaluate_manifest
        params, cfg = load_detector(args.checkpoint)
        report = evaluate_manifest(params, cfg, args.manifest,
                                   split=args.split, threshold=args.threshold)
        print("accuracy,ap,n")
        print(f"{report.accuracy:.6f},{report.average_precision:.6f},{report.n}")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.csv").write_text(
                "accuracy,ap,n\n"
                f"{report.accuracy:.6f},{report.average_precision:.6f},{report.n}\n")
        return 0

    if args.verb == "phase-swap":
        from .checkpoint import load_detector
        from .data import load_manifest, split_entries
        from .evaluate import phase_swap_experiment
        params, cfg = load_detector(args.checkpoint)
        entries = split_entries(load_manifest(args.manifest), args.split)
        real = [e for e in entries if e.label == 0]
        fake = [e for e in entries if e.label == 1]
        mean_fake_phase, mean_fake_amp = phase_swap_experiment(
            params, cfg, real, fake, n=args.n, seed=args.seed)
        print("fake_phase_mean,fake_amp_mean")
        print(f"{mean_fake_phase:.6f},{mean_fake_amp:.6f}")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "phase_swap.csv").write_text(
                "fake_phase_mean,fake_amp_mean\n"
                f"{mean_fake_phase:.6f},{mean_fake_amp:.6f}\n")
        return 0

    if args.verb == "histogram":
        from .checkpoint import load_detector
        from .evaluate import logit_histogram, write_histogram_csv
        params, cfg = load_detector(args.checkpoint)
        rows = logit_histogram(params, cfg, args.manifest, bins=args.bins,
                               split=args.split)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_histogram_csv(out / "histogram.csv", rows)
        print(out / "histogram.csv")
        return 0

    if args.verb == "ablate":
        from .evaluate import GRIDS, ablation_run, write_ablation_csv
        from .model import ModelConfig
        from .train import TrainConfig
        base_model = ModelConfig(input_size=args.input_size, c_int=args.c_int,
                                 lambda_=args.lambda_, seed=args.seed,
                                 classifier_widths=_parse_widths(args.widths))
        train_cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size,
                                epochs=args.epochs, lambda_=args.lambda_,
                                seed=args.seed, input_size=args.input_size,
                                checkpoint_every=0)
        variants = GRIDS[args.grid](base_model)
        rows = ablation_run(train_cfg, args.manifest, variants,
                            out_dir=args.out, log_fn=print)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_ablation_csv(out / "ablation.csv", rows)
        print(out / "ablation.csv")
        return 0

    if args.verb == "gradcheck":
        from .gradcheck import (END_TO_END_TOL, KERNEL_TOL, end_to_end_check,
                                kernel_suite)
        results = kernel_suite(seed=args.seed, seeds_per_kernel=args.seeds_per_kernel)
        ok = True
        for name, err in results.items():
            status = "ok" if err < KERNEL_TOL else "FAIL"
            ok = ok and err < KERNEL_TOL
            print(f"{name:28s} max_rel_err {err:.3e}  {status}")
        if args.e2e:
            err = end_to_end_check(seed=args.seed)
            status = "ok" if err < END_TO_END_TOL else "FAIL"
            ok = ok and err < END_TO_END_TOL
            print(f"{'detector_end_to_end':28s} max_rel_err {err:.3e}  {status}")
        return 0 if ok else 1

    raise AssertionError(f"unhandled verb {args.verb}")


if __name__ == "__main__":
    sys.exit(main())

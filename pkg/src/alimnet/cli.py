"""``alimnet`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .exceptions import AlimnetError, DataError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("alimnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _default_seed() -> int:
    raw = os.environ.get("ALIMNET_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"ALIMNET_SEED must be an integer, got {raw!r}") from None


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True) if args.json else text)


# -- subcommands -------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    from .data import make_synthetic_corpus

    manifest = make_synthetic_corpus(args.out, args.classes, args.per_class, seed=args.seed)
    counts = {k: v for k, v in manifest.class_counts.items() if v}
    lines = [f"wrote {len(manifest)} clips to {args.out}"] + [f"  {k}: {v}" for k, v in counts.items()]
    _emit(args, {"out": str(args.out), "total": len(manifest), "class_counts": counts}, "\n".join(lines))
    return EXIT_OK


def cmd_preprocess(args) -> int:
    from .data import preprocess

    manifest = preprocess(args.in_dir, args.out, crop=args.crop, seed=args.seed, kind=args.kind,
                          expect_micm=args.expect_micm, pad=args.pad, threads=args.threads)
    _emit(args, {"out": str(args.out), "total": len(manifest),
                 "reference_magnitude": manifest.reference_magnitude},
          f"preprocessed {len(manifest)} clips into {args.out} "
          f"(reference magnitude {manifest.reference_magnitude:.6g})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import DatasetManifest, load_arrays
    from .train import TrainConfig, TrainingSet, train

    cfg = TrainConfig.from_json(args.config)
    overrides = {}
    if args.reduced:
        overrides["reduced"] = True
    if args.data is not None:
        overrides["data_dir"] = str(args.data)
    if args.steps is not None:
        overrides["steps"] = args.steps
    if overrides:
        cfg = TrainConfig(**{**cfg.__dict__, **overrides})
    if cfg.data_dir is None:
        raise UsageError("train: no data; pass --data DIR or set data_dir in the config")
    manifest = DatasetManifest.load(cfg.data_dir)
    arch = cfg.architecture()
    first = load_arrays(DatasetManifest(manifest.entries[:1], root=manifest.root))[0]
    factor = first.shape[-1] // arch.input_size
    if factor < 1 or factor * arch.input_size != first.shape[-1]:
        raise DataError(f"{cfg.data_dir}: spectrograms are {first.shape[-1]} wide, "
                        f"architecture expects {arch.input_size}")
    x, y, _ = load_arrays(manifest, cfg.class_mode, reduce_factor=factor)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.to_json(out / "config.json")
    state = train(cfg, TrainingSet(x, y, manifest.reference_magnitude or 1.0), out_dir=out,
                  progress_every=args.progress)
    last = state.history[-1]
    _emit(args, {"out": str(out), "steps": state.step, "LS": last[1], "LC": last[2], "g_objective": last[3]},
          f"trained {state.step} steps; final LS={last[1]:.4f} LC={last[2]:.4f} G={last[3]:.4f}; "
          f"checkpoint {out / 'final.almc'}")
    return EXIT_OK


def cmd_generate(args) -> int:
    from .synth import GenerationRequest, write_generation

    req = GenerationRequest(str(args.ckpt), args.dastgah, args.instrument, args.count, args.seed)
    paths = write_generation(req, args.out, iterations=args.iterations, png=args.png)
    _emit(args, {"files": [str(p) for p in paths]}, "\n".join(str(p) for p in paths))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from .dsp import StftConfig, istft, stft
    from .io import read_wav, write_wav

    cfg = StftConfig(args.fft, args.hop, args.window)
    clip = read_wav(args.in_wav)
    x = clip.samples
    y, covered = istft(stft(x, cfg), cfg, target_len=len(x), return_coverage=True)
    err = float(np.max(np.abs(y[covered] - x[covered]))) if covered.any() else float("nan")
    write_wav(args.out_wav, y)
    uncovered = int((~covered).sum())
    payload = {"samples": len(x), "max_error": err, "covered_fraction": float(covered.mean()),
               "uncovered_samples": uncovered, "full_coverage": uncovered == 0}
    _emit(args, payload,
          f"samples: {len(x)}\nmax error (covered samples): {err:.3e}\n"
          f"coverage: {covered.mean():.6f} ({uncovered} uncovered samples)"
          + ("\nfull coverage" if uncovered == 0 else ""))
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .models import PUBLISHED_D_COUNTS, compare_to_published, param_report, report_total
    from .train import load_state

    state = load_state(args.ckpt)
    rows = compare_to_published(state.discriminator)
    table, payload = [], []
    for i, (row, expected, ok) in enumerate(rows, start=1):
        name = row.description if row is not None else "(missing)"
        got = row.count if row is not None else None
        mark = "MATCH" if ok else "MISMATCH"
        table.append(f"{i:>2}  {name:<34} {str(got):>7} {str(expected):>7}  {mark}")
        payload.append({"row": i, "layer": name, "count": got, "published": expected, "match": ok})
    matched = sum(ok for _, _, ok in rows)
    g_rows = param_report(state.generator)
    text = "\n".join(
        ["discriminator vs published layer counts",
         f"{'#':>2}  {'layer':<34} {'count':>7} {'published':>7}", *table,
         f"{matched}/{len(PUBLISHED_D_COUNTS)} rows match; discriminator total {state.discriminator.param_count()}",
         f"generator total {report_total(g_rows)}"])
    _emit(args, {"rows": payload, "matched": matched,
                 "discriminator_total": state.discriminator.param_count(),
                 "generator_total": report_total(g_rows), "step": state.step}, text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .verify import run_suite

    results = run_suite(args.layer)
    failed = [r for r in results if not r.passed]
    lines = [f"{r.name:<26} {r.error:.3e} < {r.tolerance:g}  {'PASS' if r.passed else 'FAIL'}"
             + (f"  ({r.refined} kink crossings re-probed)" if r.refined else "") for r in results]
    _emit(args, {"results": [{"name": r.name, "error": float(r.error), "tolerance": r.tolerance,
                              "passed": r.passed, "refined": r.refined} for r in results]}, "\n".join(lines))
    if failed:
        raise NumericError(f"gradient check failed: {', '.join(r.name for r in failed)}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .verify import CHECK_NAMES

    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="print machine-readable JSON instead of text")
    common.add_argument("--threads", type=int, default=1, metavar="N",
                        help="cap worker and BLAS threads (1 guarantees bit-determinism; default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="alimnet", description="Spectrogram ACGAN toolkit for Dastgah music.")
    parser.add_argument("--version", action="version", version=f"alimnet {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    seed_help = "random seed (default: $ALIMNET_SEED or 0)"

    p = sub.add_parser("synth-data", parents=[common], help="write a seeded synthetic labeled corpus",
                       description="Write a seeded synthetic corpus in the <dastgah>/<instrument>/*.wav layout.")
    p.add_argument("--out", required=True, type=Path, metavar="DIR", help="output directory")
    p.add_argument("--classes", type=int, default=2, metavar="N", help="number of Dastgah classes, 2-7 (default 2)")
    p.add_argument("--per-class", type=int, default=10, metavar="M", help="clips per class (default 10)")
    p.add_argument("--seed", type=int, default=None, metavar="S", help=seed_help)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("preprocess", parents=[common], help="cut clips and write spectrogram containers",
                       description="Cut every clip to 131072 samples, take its STFT and write ALIM "
                                   "containers plus manifest.json.")
    p.add_argument("--in", dest="in_dir", required=True, type=Path, metavar="DIR", help="corpus root")
    p.add_argument("--out", required=True, type=Path, metavar="DIR", help="output directory")
    p.add_argument("--expect-micm", action="store_true", help="fail unless class counts match MICM")
    p.add_argument("--crop", choices=("head", "random"), default="head", help="clip cutting policy (default head)")
    p.add_argument("--kind", choices=("db_normalized", "magnitude"), default="db_normalized",
                   help="stored spectrogram kind (default db_normalized)")
    p.add_argument("--pad", action="store_true", help="zero-pad short clips instead of failing")
    p.add_argument("--seed", type=int, default=None, metavar="S", help=seed_help)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", parents=[common], help="train the conditional GAN",
                       description="Adversarial training from a JSON config over preprocessed data.")
    p.add_argument("--config", required=True, type=Path, metavar="FILE", help="JSON training config")
    p.add_argument("--out", required=True, type=Path, metavar="DIR", help="run directory for checkpoints and losses.csv")
    p.add_argument("--reduced", action="store_true", help="use the reduced 64x64 architecture")
    p.add_argument("--data", type=Path, default=None, metavar="DIR", help="preprocessed data (overrides data_dir)")
    p.add_argument("--steps", type=int, default=None, metavar="K", help="override the configured step count")
    p.add_argument("--progress", type=int, default=0, metavar="K", help="log losses every K steps (0: never)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="generate WAV files for one label",
                       description="Generate spectrograms for one label and resynthesize them to WAV.")
    p.add_argument("--ckpt", required=True, type=Path, metavar="FILE", help="training checkpoint")
    p.add_argument("--dastgah", required=True, metavar="NAME", help="Dastgah name (case-insensitive)")
    p.add_argument("--instrument", choices=("violin", "ney"), type=str.lower, default=None,
                   help="instrument label (required for fourteen-class checkpoints)")
    p.add_argument("--count", type=int, default=1, metavar="K", help="number of samples (default 1)")
    p.add_argument("--seed", type=int, default=None, metavar="S", help=seed_help)
    p.add_argument("--out", required=True, type=Path, metavar="DIR", help="output directory")
    p.add_argument("--iterations", type=int, default=32, metavar="K", help="Griffin-Lim iterations (default 32)")
    p.add_argument("--png", action="store_true", help="also write a grayscale spectrogram PNG per sample")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("reconstruct", parents=[common], help="STFT/ISTFT round trip of a WAV file",
                       description="Round-trip a WAV through STFT and ISTFT and report error and coverage.")
    p.add_argument("--in", dest="in_wav", required=True, type=Path, metavar="WAV", help="input WAV")
    p.add_argument("--out", dest="out_wav", required=True, type=Path, metavar="WAV", help="output WAV")
    p.add_argument("--fft", type=int, default=510, metavar="N", help="window length (default 510)")
    p.add_argument("--hop", type=int, default=514, metavar="H", help="hop length (default 514)")
    p.add_argument("--window", choices=("hann", "rectangular"), default="hann", help="analysis window (default hann)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("inspect", parents=[common], help="compare checkpoint layer counts with published ones",
                       description="Print per-layer parameter counts of a checkpoint next to the published counts.")
    p.add_argument("--ckpt", required=True, type=Path, metavar="FILE", help="training checkpoint")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gradcheck", parents=[common], help="run the gradient verification suite",
                       description="Central-difference gradient checks for every layer and both objectives.")
    p.add_argument("--layer", choices=CHECK_NAMES, default=None, metavar="NAME",
                   help=f"run a single check: {', '.join(CHECK_NAMES)}")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            sys.stderr.write(parser.format_usage())
            return EXIT_USAGE
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        if args.threads < 1:
            raise UsageError(f"--threads must be >= 1, got {args.threads}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except NumericError as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return EXIT_NUMERIC
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA
    except AlimnetError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

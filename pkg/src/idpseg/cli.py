"""Command line entry point: ``idpseg <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 decomposition did
not converge (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from idpseg import config as cfgmod
from idpseg.core import (
    DataError,
    list_images,
    load_masks,
    load_sequence,
    read_image,
    stack,
    write_image,
    write_sequence,
)
from idpseg.lowrank import decompose
from idpseg.optics import idp_bank, inverse_kernel, psf_bank

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3

log = logging.getLogger("idpseg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file (see the key list below)")


def build_parser() -> argparse.ArgumentParser:
    keys = "config keys:\n" + cfgmod.describe_keys()
    common = dict(formatter_class=argparse.RawDescriptionHelpFormatter, epilog=keys)
    parser = _Parser(prog="idpseg", description="Phase contrast cell segmentation.", **common)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset with ground truth", **common)
    _add_config(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, help="overrides the seed key")

    p = sub.add_parser("decompose", help="split a sequence into background and foreground", **common)
    _add_config(p)
    p.add_argument("--in", dest="inp", type=Path, required=True, help="directory of frames")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("restore", help="apply the inverse diffraction pattern bank", **common)
    _add_config(p)
    p.add_argument("--in", dest="inp", type=Path, required=True,
                   help="decomposition.npz from decompose, or a directory of foreground frames")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("segment", help="run the full pipeline", **common)
    _add_config(p)
    p.add_argument("--in", dest="inp", type=Path, required=True, help="directory of frames")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threads", type=int, default=1, help="worker cap for per-frame stages")
    p.add_argument("--truth", type=Path, help="optional truth mask directory; writes eval.csv")

    p = sub.add_parser("eval", help="score masks against ground truth", **common)
    p.add_argument("--masks", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="report CSV")
    p.add_argument("--pattern", default="*.pgm")

    p = sub.add_parser("bench", help="time the pipeline stages", **common)
    _add_config(p)
    p.add_argument("--in", dest="inp", type=Path, help="directory of frames (default: synthesize)")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", type=Path, required=True, help="timing CSV")

    p = sub.add_parser("dump-bank", help="write PSF and inverse kernels as images and CSV", **common)
    _add_config(p)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _normalized(k: np.ndarray) -> np.ndarray:
    span = np.ptp(k)
    return (k - k.min()) / span if span > 0 else np.zeros_like(k)


def cmd_synth(args, cfg) -> int:
    from idpseg.synth import render, write_dataset

    syn = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed)
    ds = render(syn, cfg.optics)
    write_dataset(ds, args.out)
    log.info("wrote %d frames to %s", syn.n_frames, args.out)
    return EXIT_OK


def cmd_decompose(args, cfg) -> int:
    seq = load_sequence(args.inp, cfg.pattern)
    dec = decompose(stack(seq), seq.shape, cfg.alm)
    out = args.out
    shape = seq.frames.shape
    bg = dec.background.T.reshape(shape)
    fg = dec.foreground.T.reshape(shape)
    write_sequence(bg, out / "background", cfg.bit_depth)
    write_sequence(fg, out / "foreground", cfg.bit_depth)
    np.savez_compressed(out / "decomposition.npz", background=bg, foreground=fg,
                        names=np.array(seq.names), converged=dec.converged)
    dec.write_csv(out / "diag.csv")
    if not dec.converged:
        print(f"decompose: not converged after {dec.iterations} iterations "
              f"(residual {dec.residual:.3g})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _load_foreground(path: Path, pattern: str) -> np.ndarray:
    if path.is_file():
        try:
            with np.load(path) as data:
                return np.asarray(data["foreground"], dtype=np.float64)
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"{path}: not a decomposition archive ({exc})") from None
    paths = list_images(path, pattern)
    if not paths:
        raise DataError(f"no files match {pattern!r} in {path}")
    frames = [read_image(p) for p in paths]
    if len({f.shape for f in frames}) != 1:
        raise DataError(f"{path}: frames differ in size")
    return np.stack(frames)


def cmd_restore(args, cfg) -> int:
    from idpseg.segment import restore

    fg = _load_foreground(args.inp, cfg.pattern)
    idp = idp_bank(psf_bank(cfg.optics), fg.shape[1:], cfg.optics.inv_reg)
    responses = np.stack([restore(frame, idp).responses for frame in fg])
    for k, frame_responses in enumerate(responses):
        for m, resp in enumerate(frame_responses, 1):
            write_image(resp, args.out / "restored" / f"phase_{m}" / f"frame_{k:04d}.pgm", cfg.bit_depth)
    args.out.mkdir(parents=True, exist_ok=True)
    np.save(args.out / "responses.npy", responses)
    return EXIT_OK


def cmd_segment(args, cfg) -> int:
    from idpseg.evaluation import evaluate
    from idpseg.segment import run_pipeline

    if args.threads < 1:
        raise _UsageError("--threads must be >= 1")
    seq = load_sequence(args.inp, cfg.pattern)
    result = run_pipeline(seq, cfg, args.out, threads=args.threads)
    if args.truth is not None:
        names, truths = load_masks(args.truth, cfg.pattern)
        evaluate(result.masks, truths, names).write_csv(args.out / "eval.csv")
    if not result.decomposition.converged:
        print("segment: decomposition did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    from idpseg.evaluation import evaluate

    names, masks = load_masks(args.masks, args.pattern)
    _, truths = load_masks(args.truth, args.pattern)
    report = evaluate(masks, truths, names)
    report.write_csv(args.out)
    print(f"mean ACC {report.mean:.4f} over {len(masks)} frames")
    return EXIT_OK


def cmd_bench(args, cfg) -> int:
    from idpseg.evaluation import bench
    from idpseg.synth import render

    if args.reps < 1:
        raise _UsageError("--reps must be >= 1")
    seq = load_sequence(args.inp, cfg.pattern) if args.inp else render(cfg.synth, cfg.optics).sequence
    report = bench(seq, cfg, args.reps)
    report.write_csv(args.out)
    for stage in report.samples:
        print(f"{stage:>10}: median {report.median(stage):.3f} s")
    return EXIT_OK


def cmd_dump_bank(args, cfg) -> int:
    bank = psf_bank(cfg.optics)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    with (out / "taps.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "phase_index", "theta", "row", "col", "value"])
        for m, (theta, k) in enumerate(zip(bank.phases, bank.kernels), 1):
            inv = inverse_kernel(k, cfg.optics.inv_reg)
            for kind, taps in (("psf", k), ("inverse", inv)):
                write_image(_normalized(taps), out / f"{kind}_{m}.pgm")
                for (i, j), value in np.ndenumerate(taps):
                    writer.writerow([kind, m, repr(theta), i, j, repr(float(value))])
    return EXIT_OK


class _UsageError(Exception):
    pass


COMMANDS = {
    "synth": cmd_synth,
    "decompose": cmd_decompose,
    "restore": cmd_restore,
    "segment": cmd_segment,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "dump-bank": cmd_dump_bank,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("idpseg: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = cfgmod.parse_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, cfg)
    except (cfgmod.ConfigError, _UsageError) as exc:
        print(f"idpseg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"idpseg {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

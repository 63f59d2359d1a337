"""Command-line entry point: ``rsdk synth | train | eval | infer | gradcheck``.

Exit codes: 0 success, 1 usage or invalid configuration, 2 data or format
error, 3 numerical failure. ``RSDK_THREADS`` caps BLAS threads and frame
loading workers.
"""

from __future__ import annotations

import argparse
from contextlib import nullcontext
import os
from pathlib import Path
import sys

import numpy as np

from . import checkpoint
from .config import RunConfig, load_config
from .data import (RadarFrame, generate_synthetic, load_dataset, read_pnm, write_ppm,
                   write_predictions)
from .errors import FormatError, InputError, NumericalError, ParameterError
from .evaluator import write_report
from .model import Detector
from .rbox import rbox_corners

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def threads() -> int | None:
    raw = os.environ.get("RSDK_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"RSDK_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"RSDK_THREADS must be a positive integer, got {raw!r}")
    return n


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _load_model(cfg, path) -> Detector:
    model = Detector(cfg.model, seed=cfg.seed)
    try:
        model.load_state_dict(checkpoint.load(path))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"checkpoint {path} does not fit the configured model: {exc}") from None
    return model


def _prediction_rows(dets):
    return [(s,) + tuple(b) for s, b in dets]


def draw_polygon(img, corners, color=(1.0, 0.0, 0.0)):
    """1-px outline of a closed polygon, clipped to the image."""
    h, w = img.shape[:2]
    for a, b in zip(corners, np.roll(corners, -1, axis=0)):
        n = int(np.ceil(np.abs(b - a).max() * 2)) + 1
        t = np.linspace(0.0, 1.0, n)[:, None]
        pts = np.floor(a + t * (b - a)).astype(int)
        ok = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
        img[pts[ok, 1], pts[ok, 0]] = color
    return img


def cmd_synth(cfg, args):
    out = args.out or cfg.dataset
    recs = generate_synthetic(cfg.synth(), out)
    print(f"wrote {len(recs)} frames to {out}")


def cmd_train(cfg, args):
    from .train import train

    frames = load_dataset(cfg.dataset, workers=threads())
    ckpt = Path(args.checkpoint or cfg.checkpoint)
    log_path = Path(args.out or cfg.log)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    model, hist = train(cfg, frames, log_path=log_path)
    checkpoint.save(ckpt, model.state_dict())
    print(f"trained {cfg.epochs} epochs, final loss {hist.losses()[-1]:.6f}; checkpoint {ckpt}")


def cmd_eval(cfg, args):
    from .train import evaluate

    model = _load_model(cfg, args.checkpoint or cfg.checkpoint)
    frames = load_dataset(args.split or cfg.dataset, workers=threads())
    report, dets = evaluate(model, frames, cfg.score_floor)
    out = Path(args.out or cfg.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out, out.with_suffix(".pr.txt"))
    write_predictions(out.with_suffix(".pred.txt"), {k: _prediction_rows(v) for k, v in dets.items()})
    print("\n".join(report.lines()))


def cmd_infer(cfg, args):
    from .train import predict

    if not args.image:
        raise UsageError("infer needs an image path")
    model = _load_model(cfg, args.checkpoint or cfg.checkpoint)
    img = read_pnm(args.image)
    frame = RadarFrame(img, [], Path(args.image).name)
    dets = predict(model, [frame])[frame.name]
    out = Path(args.out or "infer_out")
    out.mkdir(parents=True, exist_ok=True)
    kept = [d for d in dets if d[0] > cfg.score_floor]
    write_predictions(out / "predictions.txt", {frame.name: _prediction_rows(kept)})
    canvas = img.copy()
    for _, box in kept:
        draw_polygon(canvas, rbox_corners(box))
    write_ppm(out / (Path(args.image).stem + "_boxes.ppm"), canvas)
    print(f"{len(kept)} detections above {cfg.score_floor} written to {out}")


def cmd_gradcheck(cfg, args):
    from . import gradsuite

    scope = args.scope or "all"
    if scope not in gradsuite.SCOPES:
        raise UsageError(f"unknown gradcheck scope {scope!r}; choose from {sorted(gradsuite.SCOPES)}")
    rows = gradsuite.run(scope, seed=cfg.seed)
    print(gradsuite.format_table(rows))
    failed = [r[0] for r in rows if not r[3]]
    if failed:
        raise NumericalError(f"gradient check failed for: {', '.join(failed)}")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "gradcheck": cmd_gradcheck}


def build_parser():
    p = _Parser(prog="rsdk", description="Desk-scale rotated-box radar detector.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("target", nargs="?", help="image for infer, scope for gradcheck (ops|model|all)")
    p.add_argument("--config", help="key = value run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--checkpoint", help="checkpoint to write (train) or read (eval, infer)")
    p.add_argument("--out", help="output path: dataset dir, log, report, or infer directory")
    p.add_argument("--split", help="dataset directory to evaluate (default: configured dataset)")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be a non-negative integer")
        args.image = args.scope = args.target
        n = threads()
        cfg = _config(args)
        if n is not None:
            from threadpoolctl import threadpool_limits
            limit = threadpool_limits(limits=n)
        else:
            limit = nullcontext()
        with limit:
            COMMANDS[args.command](cfg, args)
        return EXIT_OK
    except (UsageError, ParameterError) as exc:
        print(f"rsdk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InputError, OSError) as exc:
        print(f"rsdk: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"rsdk: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main_exit():
    sys.exit(main())

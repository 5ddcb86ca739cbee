"""``scalelab`` command line: summary, scale, synth, train, evaluate, report.

Exit codes: 0 success, 2 input error, 3 scaling/shape error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .architecture import (
    PRESET_FACTORS,
    ArchitectureSpec,
    ScaleFactors,
    arch_from_file,
    arch_to_file,
    format_summary,
    preset,
    scale_compound,
    total_params,
)
from .data import LABELS_FILE, decode_image, load_index, split, synth_generate
from .errors import DivergenceError, ScaleLabError, ShapeError
from .metrics import (
    class_scores,
    confusion,
    format_report,
    history_read,
    history_write,
    roc,
    roc_read,
    roc_write,
)
from .optim import AdamHyper
from .plots import history_charts, roc_chart, write_svg
from .training import TrainConfig, build_model, evaluate, load_model, save_model, train

log = logging.getLogger("scalelab")

EXIT_OK, EXIT_INPUT, EXIT_SHAPE, EXIT_DIVERGED = 0, 2, 3, 4
THREADS_ENV = "SCALELAB_THREADS"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise CliError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _limit_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def _load_arch(name_or_file: str) -> ArchitectureSpec:
    if name_or_file in PRESET_FACTORS:
        return preset(name_or_file)
    path = Path(name_or_file)
    if not path.is_file():
        raise CliError(f"unknown architecture {name_or_file!r}: not a preset ({', '.join(PRESET_FACTORS)}) or a file")
    return arch_from_file(path.read_text(encoding="utf-8"))


def _factors(args) -> ScaleFactors:
    return ScaleFactors(args.width, args.depth, args.resolution)


def _write_manifest(out: Path, command: str, args) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {"command": command, "version": __version__, "threads": _threads(), "flags": flags}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --- commands ----------------------------------------------------------------

def cmd_summary(args) -> int:
    arch = scale_compound(_load_arch(args.arch), _factors(args))
    sys.stdout.write(format_summary(arch))
    return EXIT_OK


def cmd_scale(args) -> int:
    base = _load_arch(args.base)
    before = total_params(base)
    scaled = scale_compound(base, _factors(args))
    Path(args.out).write_text(arch_to_file(scaled), encoding="utf-8")
    print(f"parameters: {before:,} -> {total_params(scaled):,}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.res < 16:
        raise CliError(f"--res must be >= 16, got {args.res}")
    if args.n < 1:
        raise CliError(f"--n must be >= 1, got {args.n}")
    index = synth_generate(args.n, args.res, args.seed, args.out)
    print(f"wrote {len(index)} images and {LABELS_FILE} to {args.out}")
    return EXIT_OK


def _check_resolution(model, index, allow_resize: bool) -> None:
    if not len(index):
        raise CliError("dataset is empty")
    first = index.images[0]
    shape = tuple(decode_image(first).shape) if isinstance(first, (str, Path)) else tuple(first.shape)
    want = model.arch.input_shape
    if shape[2] != want[2] or (shape != want and not allow_resize):
        raise CliError(f"data resolution {shape} does not match model input {want}")


def _write_metrics(out: Path, ev) -> None:
    cm = confusion(ev.predictions, ev.labels)
    curve = roc(ev.scores, ev.labels) if len(set(ev.labels.tolist())) == 2 else None
    (out / "metrics.txt").write_text(format_report(cm, curve))
    if curve is None:
        log.warning("labels hold a single class; skipping roc.csv")
    else:
        roc_write(curve, out / "roc.csv")
    benign, malignant = class_scores(cm)
    auc_text = "undefined" if curve is None else f"{curve.auc:.4f}"
    print(
        f"accuracy {cm.accuracy:.4f}  auc {auc_text}  "
        f"benign P/R/F1 {benign.precision:.3f}/{benign.recall:.3f}/{benign.f1:.3f}  "
        f"malignant P/R/F1 {malignant.precision:.3f}/{malignant.recall:.3f}/{malignant.f1:.3f}"
    )


def cmd_train(args) -> int:
    arch = _load_arch(args.arch)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        adam=AdamHyper(lr=args.lr),
        read_ahead=4 if _threads() > 1 else 0,
    )
    index = load_index(args.data, args.labels)
    if not 0 < args.val_fraction < 1:
        raise CliError(f"--val-fraction must lie in (0, 1), got {args.val_fraction}")
    n_val = max(1, round(len(index) * args.val_fraction))
    if n_val >= len(index):
        raise CliError(f"dataset of {len(index)} records is too small to split")
    train_idx, val_idx = split(index, len(index) - n_val, n_val, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, "train", args)
    (out / "arch.txt").write_text(arch_to_file(arch), encoding="utf-8")
    val_idx.write_labels(out / "val_labels.csv")
    model = build_model(arch, args.seed)
    history = []

    def checkpoint(record):
        history.append(record)
        history_write(history, out / "history.csv")

    train(model, train_idx, val_idx, cfg, on_epoch=checkpoint)
    save_model(model, out / "model.bin")
    _write_metrics(out, evaluate(model, val_idx, args.batch, cfg.read_ahead))
    last = history[-1]
    print(
        f"epoch {last.epoch}: train_loss {last.train_loss:.6g} train_acc {last.train_accuracy:.6g} "
        f"val_loss {last.val_loss:.6g} val_acc {last.val_accuracy:.6g}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    index = load_index(args.data, args.labels, split="val")
    _check_resolution(model, index, args.resize)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_metrics(out, evaluate(model, index, args.batch))
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run)
    needed = [run / "history.csv", run / "roc.csv"]
    missing = [str(p) for p in needed if not p.is_file()]
    if missing:
        raise CliError("missing inputs: " + ", ".join(missing))
    history = history_read(run / "history.csv")
    if not history:
        raise CliError(f"{run / 'history.csv'} has no epochs")
    points = roc_read(run / "roc.csv")
    plots = run / "plots"
    plots.mkdir(exist_ok=True)
    acc, loss = history_charts(history)
    write_svg(plots / "accuracy.svg", acc)
    write_svg(plots / "loss.svg", loss)
    area = sum((b[0] - a[0]) * (a[1] + b[1]) / 2 for a, b in zip(points, points[1:]))
    write_svg(plots / "roc.svg", roc_chart(points, area))
    print(f"wrote accuracy.svg, loss.svg, roc.svg to {plots}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def _add_scaling(p):
    p.add_argument("--width", type=float, default=1.0, help="width factor (>= 1)")
    p.add_argument("--depth", type=int, default=1, help="conv replication factor (>= 1)")
    p.add_argument("--resolution", type=float, default=1.0, help="input resolution factor")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalelab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"scalelab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summary", help="print the layer table of an architecture")
    p.add_argument("--arch", required=True, help=f"preset ({', '.join(PRESET_FACTORS)}) or architecture file")
    _add_scaling(p)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("scale", help="write a scaled architecture file")
    p.add_argument("--base", required=True, help="preset name or architecture file")
    _add_scaling(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("synth", help="generate a synthetic two-class corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True, help="images per class")
    p.add_argument("--res", type=int, required=True, help="square image side (>= 16)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a run directory")
    p.add_argument("--arch", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", default=None, help=f"labels CSV (default DATA/{LABELS_FILE})")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="write metrics for a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--resize", action="store_true", help="resize images to the model input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render SVG plots for a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with _limit_threads(_threads()):
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ShapeError as exc:
        code = EXIT_SHAPE if args.command in ("scale", "summary") else EXIT_INPUT
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (ScaleLabError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

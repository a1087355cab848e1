"""Command-line interface: ``dipmatte <command> ...``.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure
(diverged loss or failed gradient check).
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .engine import DivergenceError, EngineConfig, MattingProblem, composite, extract_matte, extract_video
from .gradcheck import gradcheck_suite
from .imageio import ImageIOError, load_alpha, load_image, load_trimap, save_alpha, save_image
from .metrics import evaluate, format_report, write_summary
from .synth import KINDS, synth_case, write_case
from .unet import SnapshotError, UNetConfig, load_snapshot, save_snapshot

log = logging.getLogger("dipmatte")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

# engine settings accepted from flags and config files, with their parsers
ENGINE_KEYS = {
    "iters": int,
    "lr": float,
    "loss_threshold": float,
    "seed": int,
    "depth": int,
    "channels": lambda s: tuple(int(c) for c in str(s).replace(" ", "").split(",") if c),
    "snapshot_every": int,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _channels(text):
    try:
        return ENGINE_KEYS["channels"](text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _size(text):
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or HxW, got {text!r}")
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"expected N or HxW, got {text!r}")
    return dims


def read_config_file(path):
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ImageIOError(path, exc.strerror or str(exc))
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in ENGINE_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} (known: {', '.join(ENGINE_KEYS)})")
        try:
            values[key] = ENGINE_KEYS[key](value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}")
    return values


def resolve_settings(args):
    """Merge flags over the config file over defaults."""
    settings = read_config_file(args.config) if args.config else {}
    for key in ENGINE_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def engine_config(settings):
    default = UNetConfig()
    depth, channels = settings.get("depth"), settings.get("channels")
    if channels is None:
        if depth is None:
            channels = default.channels
        elif depth <= len(default.channels):
            channels = default.channels[:depth]
        else:
            raise UsageError(f"--depth {depth} needs --channels with {depth} entries")
    if depth is None:
        depth = len(channels)
    if len(channels) != depth:
        raise UsageError(f"--channels has {len(channels)} entries but --depth is {depth}")
    try:
        unet = dataclasses.replace(default, depth=depth, channels=tuple(channels))
        return EngineConfig(
            lr=settings.get("lr", 0.001),
            max_iters=settings.get("iters", EngineConfig.max_iters),
            loss_threshold=settings.get("loss_threshold"),
            seed=settings.get("seed", 0),
            snapshot_every=settings.get("snapshot_every", 0),
            unet=unet,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _problem(image, masks, config):
    try:
        return MattingProblem(image, masks, config)
    except ValueError as exc:
        raise UsageError(str(exc))


def _snapshot_writer(out_dir):
    snap_dir = Path(out_dir) / "snapshots"

    def write(iteration, nets):
        from .engine import networks_state

        snap_dir.mkdir(parents=True, exist_ok=True)
        save_snapshot(snap_dir / f"iter_{iteration:06d}.bin", networks_state(nets))
        log.info("iteration %d: snapshot written", iteration)

    return write


def write_result(out_dir, result, weights=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_alpha(out / "alpha.png", result.alpha)
    save_image(out / "fg.png", result.fg)
    save_image(out / "bg.png", result.bg)
    result.write_loss_history(out / "loss.txt")
    if weights:
        save_snapshot(out / "weights.bin", result.weights)


def _run(problem, out_dir, warm=None, snapshots=True):
    try:
        return extract_matte(problem, warm=warm,
                             on_snapshot=_snapshot_writer(out_dir) if snapshots else None)
    except ValueError as exc:
        # size too small for the depth, mismatched warm snapshot and the like
        raise UsageError(str(exc))


# -- commands -----------------------------------------------------------------

def cmd_extract(args):
    config = engine_config(resolve_settings(args))
    image = load_image(args.image)
    masks = load_trimap(args.trimap, expected_shape=image.shape[1:])
    warm = load_snapshot(args.warm) if args.warm else None
    if warm is None and args.loss_threshold is not None:
        log.warning("--loss-threshold only applies with --warm; cold runs use --iters")
    problem = _problem(image, masks, config)
    result = _run(problem, args.out_dir, warm=warm)
    write_result(args.out_dir, result)
    print(f"iterations={result.iterations_run} final_loss={result.final_loss:.6g}")
    return EXIT_OK


def _frame_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(directory, "not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ImageIOError(directory, "contains no images")
    return files


def cmd_video(args):
    config = engine_config(resolve_settings(args))
    frames = _frame_files(args.frames_dir)
    trimaps = _frame_files(args.trimaps_dir)
    if len(trimaps) != len(frames):
        raise UsageError(f"{len(frames)} frames but {len(trimaps)} trimaps")
    problems = []
    for frame, trimap in zip(frames, trimaps):
        image = load_image(frame)
        if problems and image.shape[1:] != problems[0].size:
            raise UsageError(f"{frame} has resolution {image.shape[1:]}, expected {problems[0].size}")
        problems.append(_problem(image, load_trimap(trimap, expected_shape=image.shape[1:]), config))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []

    def on_frame(i, result):
        write_result(out / f"frame_{i:04d}", result, weights=(i == len(problems) - 1))
        rows.append((i, frames[i].name, result.iterations_run, result.final_loss))
        print(f"frame={i} name={frames[i].name} iterations={result.iterations_run} "
              f"final_loss={result.final_loss:.6g}")

    try:
        extract_video(problems, threshold_factor=args.threshold_factor, on_frame=on_frame)
    except ValueError as exc:
        raise UsageError(str(exc))
    with open(out / "iterations.txt", "w") as fh:
        fh.write("# frame, name, iterations, final_loss\n")
        for i, name, its, loss in rows:
            fh.write(f"{i}, {name}, {its}, {loss:.9g}\n")
    return EXIT_OK


def cmd_composite(args):
    alpha = load_alpha(args.alpha)
    fg = load_image(args.fg)
    bg = load_image(args.new_bg)
    if fg.shape[1:] != alpha.shape or bg.shape != fg.shape:
        raise UsageError(f"alpha {alpha.shape}, fg {fg.shape[1:]} and background {bg.shape[1:]} sizes differ")
    save_image(args.out, composite(alpha, fg, bg))
    return EXIT_OK


def cmd_synth(args):
    try:
        case = synth_case(args.kind, args.size, band_px=args.band, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    write_case(args.out_dir, case)
    m = case.trimap
    print(f"kind={args.kind} size={args.size[0]}x{args.size[1]} fg={int(m.fg.sum())} "
          f"bg={int(m.bg.sum())} unknown={int(m.unknown.sum())}")
    return EXIT_OK


def cmd_eval(args):
    alpha = load_alpha(args.alpha)
    gt = load_alpha(args.gt_alpha)
    masks = load_trimap(args.trimap, expected_shape=gt.shape)
    if alpha.shape != gt.shape:
        raise UsageError(f"alpha {alpha.shape} and ground truth {gt.shape} sizes differ")
    report = evaluate(alpha, gt, masks)
    print(format_report(report))
    if args.json:
        write_summary(args.json, report)
    return EXIT_OK


def cmd_gradcheck(args):
    report = gradcheck_suite(seed=args.seed, dtype="float64" if args.f64_gradcheck else "float32")
    print("\n".join(report.lines()))
    if not report.passed:
        print(f"FAILED: {', '.join(report.failures)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _engine_flags(p):
    g = p.add_argument_group("optimization")
    g.add_argument("--config", metavar="FILE", help="flat key=value file; flags override it")
    g.add_argument("--iters", type=int, help="iterations for cold runs (default 4000)")
    g.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    g.add_argument("--loss-threshold", type=float, help="stop warm-started runs once the total loss is this low")
    g.add_argument("--seed", type=int, help="master seed for weights and noise (default 0)")
    g.add_argument("--depth", type=int, help="U-net levels (default 4)")
    g.add_argument("--channels", type=_channels, help="channels per level, e.g. 16,32,64,128")
    g.add_argument("--snapshot-every", type=int, help="write weights to OUT_DIR/snapshots every N iterations")


def build_parser():
    parser = _Parser(prog="dipmatte", description="Alpha matting with untrained U-nets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("extract", help="extract a matte from an image and trimap")
    p.add_argument("image")
    p.add_argument("trimap")
    p.add_argument("out_dir")
    p.add_argument("--warm", metavar="WEIGHTS", help="warm-start from a weights.bin snapshot")
    _engine_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("video", help="warm-started extraction over a frame sequence")
    p.add_argument("frames_dir")
    p.add_argument("trimaps_dir")
    p.add_argument("out_dir")
    p.add_argument("--threshold-factor", type=float, default=1.05,
                   help="warm frames stop at this multiple of frame 0's final loss (default 1.05)")
    _engine_flags(p)
    p.set_defaults(func=cmd_video)

    p = sub.add_parser("composite", help="place a foreground over a new background")
    p.add_argument("alpha")
    p.add_argument("fg")
    p.add_argument("new_bg")
    p.add_argument("out")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("synth", help="write a synthetic test case directory")
    p.add_argument("out_dir")
    p.add_argument("--kind", choices=KINDS, default="disk")
    p.add_argument("--size", type=_size, default=(64, 64), help="N or HxW (default 64)")
    p.add_argument("--band", type=int, default=4, help="unknown band half-width in pixels (default 4)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="SAD and MSE of a matte against ground truth")
    p.add_argument("alpha")
    p.add_argument("gt_alpha")
    p.add_argument("trimap")
    p.add_argument("--json", metavar="PATH", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--f64-gradcheck", action=argparse.BooleanOptionalAction, default=True,
                   help="run in 64-bit mode (default); --no-f64-gradcheck runs float32 for diagnosis")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dipmatte {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageIOError, SnapshotError, OSError) as exc:
        print(f"dipmatte {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"dipmatte {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``salresample <command> ...``.

Exit codes: 0 success, 1 usage error, 2 input/output or format error.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace

from . import tps
from .attention import AttentionSamplerConfig
from .core import SalresampleError, Space
from .fit import saliency_to_grid
from .inverse import grid_is_monotone, invert_detections
from .io import (
    DetectionEntry,
    DetectionFile,
    FormatError,
    RunConfig,
    atomic_write,
    dumps_json,
    read_config,
    read_detection_file,
    read_grid,
    read_image,
    read_saliency,
    write_config,
    write_detection_file,
    write_grid,
    write_image,
    write_saliency,
)
from .pipeline import run_pipeline
from .saliency import generate_saliency, map_composition
from .warp import warp_image

log = logging.getLogger("salresample")

EXIT_USAGE = 1
EXIT_IO = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str):
    """Parse ``WxH`` into ``(height, width)``."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    if w < 2 or h < 2:
        raise argparse.ArgumentTypeError(f"size must be at least 2x2, got {text!r}")
    return (h, w)


def _load_config(path) -> RunConfig:
    return read_config(path) if path else RunConfig()


# ---------------------------------------------------------------------------


def cmd_saliency(args) -> int:
    cfg = _load_config(args.config)
    sal = cfg.saliency
    if args.tau is not None:
        sal = replace(sal, tau=args.tau)
    if args.alpha is not None:
        sal = replace(sal, alpha_pct=args.alpha)
    if args.map_size is not None:
        sal = replace(sal, out_size=args.map_size)
    dfile = read_detection_file(args.detections)
    if args.image_size is not None:
        dims = args.image_size
        image_id = args.image_id if args.image_id is not None else (
            dfile.images[0]["id"] if len(dfile.images) == 1 else None)
    else:
        im = dfile.image(args.image_id)
        image_id = im["id"]
        dims = (int(im["height"]), int(im["width"]))
    dets = dfile.for_image(image_id) if image_id is not None else []
    smap = generate_saliency(dets, dims, sal)
    write_saliency(args.out, smap)
    log.info("wrote %s (%s)", args.out, map_composition(smap, sal).value)
    return 0


def cmd_grid(args) -> int:
    cfg = _load_config(args.config)
    fit_cfg = cfg.fit
    if args.control_points is not None:
        fit_cfg = replace(fit_cfg, control=tps.ControlGrid(args.control_points))
    if args.fit_size is not None:
        fit_cfg = replace(fit_cfg, work_size=args.fit_size)
    if args.ridge is not None:
        fit_cfg = replace(fit_cfg, ridge_lambda=args.ridge)
    sampler = AttentionSamplerConfig(
        args.floor_eps if args.floor_eps is not None else cfg.sampler.floor_eps,
        args.marginal_mode or cfg.sampler.marginal_mode,
        fit_cfg.work_size,
    )
    gamma = args.gamma if args.gamma is not None else cfg.gamma
    smap = read_saliency(args.saliency)
    grid, result = saliency_to_grid(smap, fit_cfg, sampler, args.out_size, gamma, cfg.saliency)
    write_grid(args.out, grid)
    if args.emit_loss:
        report = {
            "loss_grid": result.loss,
            "loss_grid_unsquared": result.loss_unsquared,
            "bending_energy": result.bending_energy,
            "residual_norm": result.residual_norm,
            "control_points": fit_cfg.control.n,
            "fit_size": list(fit_cfg.work_size),
            "composition": map_composition(smap, cfg.saliency).value,
            "marginal_mode": sampler.marginal_mode.value,
            "clamped": grid.clamped,
            "monotone": grid_is_monotone(grid),
        }
        atomic_write(args.emit_loss, dumps_json(report))
    return 0


def cmd_warp(args) -> int:
    image = read_image(args.image)
    grid = read_grid(args.grid)
    write_image(args.out, warp_image(image, grid))
    return 0


def cmd_invert(args) -> int:
    dfile = read_detection_file(args.detections)
    grid = read_grid(args.grid)
    if dfile.space is Space.RESAMPLED and dfile.grid_id is not None:
        grid = grid.with_id(dfile.grid_id)
    dims = args.original_size
    images = []
    entries = []
    dropped = 0
    for im in dfile.images:
        dets = [d.retag(d.bbox, Space.RESAMPLED, grid.grid_id) for d in dfile.for_image(im["id"])]
        back, n_drop = invert_detections(dets, grid, dims, args.mode)
        dropped += n_drop
        entries.extend(DetectionEntry.from_detection(im["id"], d) for d in back)
        images.append({**im, "height": dims[0], "width": dims[1]})
    write_detection_file(args.out, DetectionFile(images, entries))
    if dropped:
        log.warning("dropped %d boxes", dropped)
    return 0


def cmd_overlay(args) -> int:
    from .plotting import overlay_figure

    if args.grid is None and args.detections is None:
        raise UsageError("overlay needs --grid and/or --detections")
    image = read_image(args.image)
    grid = read_grid(args.grid) if args.grid else None
    dets = []
    if args.detections:
        dfile = read_detection_file(args.detections)
        im_id = dfile.images[0]["id"] if len(dfile.images) == 1 else args.image_id
        dets = dfile.for_image(im_id)
    atomic_write(args.out, overlay_figure(image, grid, dets, lines=args.lines))
    return 0


def _frame_paths(directory):
    paths = []
    for ext in ("png", "ppm", "pgm"):
        paths.extend(glob.glob(os.path.join(directory, f"*.{ext}")))
    if not paths:
        raise FormatError(f"no .png/.ppm frames in {directory}")
    return sorted(paths)


def cmd_pipeline(args) -> int:
    from .plotting import cost_figure

    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    base = os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()
    d_key = cfg.key_detector.build(seed, base)
    d_light = cfg.light_detector.build(seed, base)
    paths = _frame_paths(args.frames)
    os.makedirs(args.out_dir, exist_ok=True)

    jsonl = os.path.join(args.out_dir, "frames.jsonl")
    fd, tmp = tempfile.mkstemp(dir=args.out_dir, prefix=".tmp-frames")
    records = []
    with os.fdopen(fd, "w") as fh:
        def on_record(rec):
            d = rec.to_dict()
            records.append(d)
            fh.write(json.dumps(d) + "\n")
            fh.flush()

        result = run_pipeline(
            (read_image(p) for p in paths), d_key, d_light, cfg.schedule, cfg.saliency,
            cfg.sampler, cfg.fit, cfg.gamma, cfg.sampler_gflops, on_record=on_record,
        )
    os.replace(tmp, jsonl)
    summary = dict(result.summary, seed=seed)
    atomic_write(os.path.join(args.out_dir, "summary.json"), dumps_json(summary))
    atomic_write(os.path.join(args.out_dir, "costs.png"), cost_figure(records, summary["mean_gflops"]))
    print(json.dumps({k: summary[k] for k in ("frames", "key_frames", "failed_frames", "mean_gflops")}))
    return 0


def cmd_synth(args) -> int:
    from .synthetic import make_scene

    scene = make_scene(args.frames, args.size, seed=args.seed or 0)
    frames_dir = os.path.join(args.out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    images, entries = [], []
    h, w = scene.size
    for t, frame in enumerate(scene.frames):
        name = f"frame_{t:06d}.png"
        write_image(os.path.join(frames_dir, name), frame)
        images.append({"id": t, "file": name, "width": w, "height": h, "frame": t})
        entries.extend(DetectionEntry.from_detection(t, d) for d in scene.annotations[t])
    write_detection_file(os.path.join(args.out_dir, "annotations.json"), DetectionFile(images, entries))
    cfg = RunConfig()
    cfg.key_detector = replace(cfg.key_detector, kind="playback", path="annotations.json")
    cfg.light_detector = replace(cfg.light_detector, kind="playback", path="annotations.json", jitter_pct=2.0)
    write_config(os.path.join(args.out_dir, "config.toml"), cfg)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="salresample", description="Saliency-guided non-uniform image resampling.")
    p.add_argument("--seed", type=int, default=None, help="seed for every random choice (default 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("saliency", help="rasterize detections into a 16-bit PGM saliency map")
    s.add_argument("--detections", required=True)
    s.add_argument("--image-size", type=_size, help="WIDTHxHEIGHT of the original image")
    s.add_argument("--image-id", type=json.loads, default=None, help="image id (JSON literal)")
    s.add_argument("--map-size", type=_size, help="WIDTHxHEIGHT of the map (default 128x128)")
    s.add_argument("--tau", type=float)
    s.add_argument("--alpha", type=float, help="small-object area threshold, percent")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_saliency)

    g = sub.add_parser("grid", help="fit a TPS sampling grid to a saliency map")
    g.add_argument("--saliency", required=True)
    g.add_argument("--out-size", type=_size, required=True, help="WIDTHxHEIGHT of the resampled image")
    g.add_argument("--control-points", type=int)
    g.add_argument("--fit-size", type=_size, help="WIDTHxHEIGHT of the grid used for the fit (default 64x64)")
    g.add_argument("--marginal-mode", choices=["max", "sum"])
    g.add_argument("--floor-eps", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--ridge", type=float)
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--emit-loss", metavar="JSON")
    g.set_defaults(func=cmd_grid)

    w = sub.add_parser("warp", help="resample an image with a grid")
    w.add_argument("--image", required=True)
    w.add_argument("--grid", required=True)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_warp)

    i = sub.add_parser("invert", help="map resampled-space detections back to the original image")
    i.add_argument("--detections", required=True)
    i.add_argument("--grid", required=True)
    i.add_argument("--original-size", type=_size, required=True)
    i.add_argument("--mode", choices=["bilinear", "per_axis"], default="bilinear")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_invert)

    r = sub.add_parser("pipeline", help="run the keyframe pipeline over a frame directory")
    r.add_argument("--config")
    r.add_argument("--frames", required=True)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_pipeline)

    o = sub.add_parser("overlay", help="draw a grid's sampling lines and/or boxes on an image")
    o.add_argument("--image", required=True)
    o.add_argument("--grid")
    o.add_argument("--detections")
    o.add_argument("--image-id", type=json.loads, default=None)
    o.add_argument("--lines", type=int, default=24)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_overlay)

    y = sub.add_parser("synth", help="write a synthetic frame sequence, annotations and config")
    y.add_argument("--frames", type=int, default=64)
    y.add_argument("--size", type=_size, default=(360, 640))
    y.add_argument("--out-dir", required=True)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"salresample: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, SalresampleError, ValueError) as exc:
        print(f"salresample: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

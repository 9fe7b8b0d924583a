"""Command-line interface.

Subcommands: register (full pipeline), simulate (synthetic plot files),
eval (transform/correspondence metrics), raster-debug (per-stage canopy
raster dumps). Exit codes: 0 success, 2 input/config error, 3 image
match rejected.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import io_formats, pipeline, synthetic
from .canopy_raster import canopy_image_stages
from .config import PlotConfig
from .errors import CanopyAlignError, MatchRejected
from .geometry import Label, apply_points, rotation_angle_between
from .ground_alignment import fit_and_level
from .ground_filter import classify_ground
from .matcher import detect_contours, keypoints


def _load_config(path) -> PlotConfig:
    if path is None:
        return PlotConfig()
    return io_formats.load_config(path)


def _write_json(path, data) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2)
        handle.write("\n")


def _keypoint_overlay(image, cfg):
    """Grayscale overlay: canopy black, background white, keypoints gray."""
    overlay = np.where(image.bits != 0, 0, 255).astype(np.uint8)
    for kp in keypoints(image, detect_contours(image), cfg):
        v0, v1 = max(kp.v - 1, 0), min(kp.v + 2, image.height)
        u0, u1 = max(kp.u - 1, 0), min(kp.u + 2, image.width)
        overlay[v0:v1, u0:u1] = 128
    return overlay


def _write_overlay_pgm(path, overlay) -> None:
    with open(path, "wb") as handle:
        handle.write(
            f"P5\n{overlay.shape[1]} {overlay.shape[0]}\n255\n".encode("ascii"))
        handle.write(overlay[::-1, :].tobytes())


def _dump_debug(debug_dir, report, cfg) -> None:
    debug_dir = Path(debug_dir)
    debug_dir.mkdir(parents=True, exist_ok=True)
    diag = report.diagnostics
    for name, prep in (("reference", diag.reference), ("moving", diag.moving)):
        io_formats.write_pgm(debug_dir / f"{name}_canopy.pgm", prep.image)
        _write_overlay_pgm(debug_dir / f"{name}_keypoints.pgm",
                           _keypoint_overlay(prep.image, cfg))
    if diag.match.candidates is not None:
        with open(debug_dir / "candidates.txt", "w", encoding="utf-8") as handle:
            handle.write("# d_ref d_matched assignment theta_deg overlap\n")
            for row in diag.match.candidates:
                handle.write(f"{row.d_ref:.3f} {row.d_matched:.3f} "
                             f"{row.assignment.value} "
                             f"{math.degrees(row.theta):.4f} "
                             f"{row.overlap:.6f}\n")


def _cmd_register(args) -> int:
    cfg = _load_config(args.config)
    reference = io_formats.read_point_cloud(args.reference)
    moving = io_formats.read_point_cloud(args.moving)
    report = pipeline.register(reference, moving, cfg,
                               coarse_only=args.coarse_only,
                               collect_candidates=args.debug_dir is not None)
    if args.out:
        _write_json(args.out, report.to_dict())
    if args.out_transform:
        _write_json(args.out_transform, pipeline.transform_to_dict(report.fine))
    if args.debug_dir:
        _dump_debug(args.debug_dir, report, cfg)
    print(f"theta_deg = {math.degrees(report.theta):.4f}")
    print(f"overlap = {report.overlap:.4f}")
    for stage, seconds in report.timing.items():
        print(f"time_{stage} = {seconds:.3f}")
    return 0


def _cmd_simulate(args) -> int:
    if args.table1_plot is not None:
        spec = synthetic.table1_suite()[args.table1_plot - 1]
    else:
        with open(args.spec, "r", encoding="utf-8") as handle:
            spec = synthetic.plot_spec_from_dict(json.load(handle))
    if args.seed is not None:
        spec = synthetic.with_seed(spec, args.seed)
    plot = synthetic.generate(spec)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io_formats.write_xyz(out / "uls.xyz", plot.uls)
    io_formats.write_xyz(out / "ground.xyz", plot.ground)
    _write_json(out / "truth.json", pipeline.transform_to_dict(plot.truth))
    with open(out / "labels.txt", "w", encoding="utf-8") as handle:
        handle.write("# uls\n")
        for value in plot.uls_labels:
            handle.write(f"{Label(value).name.lower()}\n")
        handle.write("# ground\n")
        for value in plot.ground_labels:
            handle.write(f"{Label(value).name.lower()}\n")
    print(f"trees = {len(plot.trees)}")
    print(f"uls_points = {len(plot.uls)}")
    print(f"ground_points = {len(plot.ground)}")
    return 0


def _read_correspondences(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) < 6:
                raise CanopyAlignError(
                    f"correspondence line needs 6 values: {stripped!r}")
            rows.append([float(p) for p in parts[:6]])
    if not rows:
        raise CanopyAlignError(f"no correspondences in {path}")
    return np.array(rows).reshape(-1, 2, 3)


def _cmd_eval(args) -> int:
    with open(args.transform, "r", encoding="utf-8") as handle:
        transform = pipeline.transform_from_dict(json.load(handle))
    if args.truth:
        with open(args.truth, "r", encoding="utf-8") as handle:
            truth = pipeline.transform_from_dict(json.load(handle))
        rot_err = rotation_angle_between(transform.rotation, truth.rotation)
        delta = transform.translation - truth.translation
        print(f"rotation_error_deg = {math.degrees(rot_err):.6f}")
        print(f"translation_error_x = {delta[0]:.6f}")
        print(f"translation_error_y = {delta[1]:.6f}")
        print(f"translation_error_z = {delta[2]:.6f}")
        print(f"translation_error_xy = {math.hypot(delta[0], delta[1]):.6f}")
    if args.correspondences:
        pairs = _read_correspondences(args.correspondences)
        moved = apply_points(transform, pairs[:, 1])
        stats = pipeline.evaluate_rmse(np.stack([pairs[:, 0], moved], axis=1))
        print(f"n = {len(pairs)}")
        print(f"min = {stats.minimum:.6f}")
        print(f"max = {stats.maximum:.6f}")
        print(f"avg = {stats.average:.6f}")
        print(f"rmse = {stats.rmse:.6f}")
        print("Min    Max    Avg.   RMSE")
        print(f"{stats.minimum:<6.2f} {stats.maximum:<6.2f} "
              f"{stats.average:<6.2f} {stats.rmse:<6.2f}")
    return 0


def _cmd_raster_debug(args) -> int:
    cfg = _load_config(args.config)
    cloud = io_formats.read_point_cloud(args.input)
    leveled = fit_and_level(classify_ground(cloud, cfg), cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, image in canopy_image_stages(leveled, cfg).items():
        io_formats.write_pgm(out / f"{name}.pgm", image)
        print(f"{name} = {image.width}x{image.height} "
              f"({image.count_set()} canopy px)")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="canopy-align",
        description="Register aerial and ground forest LiDAR point clouds "
                    "via ground leveling and canopy image matching.")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="register a moving cloud onto a "
                                          "reference cloud")
    reg.add_argument("--reference", required=True,
                     help="aerial cloud (.xyz or .ply)")
    reg.add_argument("--moving", required=True,
                     help="ground cloud (.xyz or .ply)")
    reg.add_argument("--config", default=None, help="key = value config file")
    reg.add_argument("--out", default=None, help="report JSON path")
    reg.add_argument("--out-transform", default=None,
                     help="final transform JSON path")
    reg.add_argument("--coarse-only", action="store_true",
                     help="skip ICP refinement")
    reg.add_argument("--debug-dir", default=None,
                     help="dump stage PGMs and the candidate table here")
    reg.set_defaults(func=_cmd_register)

    sim = sub.add_parser("simulate", help="generate a synthetic plot")
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--spec", help="plot spec JSON file")
    group.add_argument("--table1-plot", type=int, choices=range(1, 7),
                       metavar="N", help="benchmark plot number (1-6)")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.set_defaults(func=_cmd_simulate)

    ev = sub.add_parser("eval", help="evaluate a transform")
    ev.add_argument("--transform", required=True, help="transform JSON")
    ev.add_argument("--truth", default=None, help="ground-truth transform JSON")
    ev.add_argument("--correspondences", default=None,
                    help="text file: x1 y1 z1 x2 y2 z2 per line")
    ev.set_defaults(func=_cmd_eval)

    rd = sub.add_parser("raster-debug", help="dump canopy raster stages")
    rd.add_argument("--input", required=True, help="point cloud path")
    rd.add_argument("--out-dir", required=True)
    rd.add_argument("--config", default=None)
    rd.set_defaults(func=_cmd_raster_debug)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "eval" and not (args.truth or args.correspondences):
        parser.error("eval needs --truth and/or --correspondences")
    try:
        return args.func(args)
    except MatchRejected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CanopyAlignError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

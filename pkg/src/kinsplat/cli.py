"""Command-line entry point.

Subcommands: render, replay, compose, align, localize, serve, metrics.
Logs go to stderr; results go to files (or stdout for small reports).
Exit codes: 0 success, 2 configuration/input error, 3 runtime failure.
Inputs are validated before any output file is written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .alignment import (
    AlignmentError,
    LayoutConfig,
    estimate_frame_transform,
    layout_shift,
    load_observation_file,
    localize_camera,
    save_alignment_report,
)
from .editing import load_composition_script, run_composition
from .evaluator import EvaluatorServer, load_episode_file
from .images import load_image, save_depth, save_image
from .metrics import MetricError, compare, compare_sequence
from .rasterizer import load_camera_file, render
from .splats import SplatFormatError, load_splat_file
from .synthesizer import JobError, load_job_file, replay
from .transforms import TransformError, load_transform_file, save_transform_file

log = logging.getLogger("kinsplat")

DEFAULT_SEED = 0

CONFIG_ERRORS = (
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
    json.JSONDecodeError,
    SplatFormatError,
    TransformError,
    JobError,
    AlignmentError,
    MetricError,
    ValueError,
    KeyError,
)


def _parse_rgb(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"background must be r,g,b; got {text!r}")
    return tuple(parts)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_render(args) -> int:
    scene = load_splat_file(args.scene)
    camera = load_camera_file(args.camera)
    background = _parse_rgb(args.background)
    log.info("rendering %d gaussians at %dx%d", len(scene), camera.width,
             camera.height)
    out = render(scene, camera, background=background)
    save_image(out.rgb, args.out)
    if args.depth:
        save_depth(out.depth, args.depth)
    log.info("wrote %s", args.out)
    return 0


def cmd_replay(args) -> int:
    job = load_job_file(args.job)
    manifest = replay(job)
    log.info("wrote %d records under %s", len(manifest.records), job.output_dir)
    print(manifest.job_hash)
    return 0


def cmd_compose(args) -> int:
    steps = load_composition_script(args.script)
    scene = run_composition(steps, base_dir=args.base_dir)
    if scene is not None:
        log.info("composition finished with %d gaussians in memory", len(scene))
    return 0


def cmd_align(args) -> int:
    if args.observations:
        observations = load_observation_file(args.observations)
        estimate = estimate_frame_transform(observations)
        for line in estimate.warnings:
            log.warning("%s", line)
        if args.report:
            save_alignment_report(estimate, args.report)
            log.info("wrote %s", args.report)
        if args.out:
            save_transform_file(estimate.transform, args.out)
            log.info("wrote %s", args.out)
        print(json.dumps(estimate.to_dict()["residuals"]))
        return 0
    if args.gs_mask and args.sim_mask:
        gs_mask = load_image(args.gs_mask).mean(axis=2) > 0.5
        sim_mask = load_image(args.sim_mask).mean(axis=2) > 0.5
        cfg = LayoutConfig(max_shift=args.max_shift)
        shift = layout_shift(gs_mask, sim_mask, cfg)
        print(json.dumps({"dx": shift.dx, "dy": shift.dy, "iou": shift.iou}))
        return 0
    raise ValueError(
        "align needs either --observations or both --gs-mask and --sim-mask")


def cmd_localize(args) -> int:
    scene = load_splat_file(args.scene)
    observed = load_image(args.observed)
    camera = load_camera_file(args.camera)
    init_pose = load_transform_file(args.init_pose) if args.init_pose \
        else camera.pose
    result = localize_camera(scene, observed, init_pose, camera,
                             budget=args.budget)
    save_transform_file(result.pose, args.out)
    log.info("wrote %s", args.out)
    print(json.dumps({"residual": result.residual,
                      "converged": result.converged,
                      "iterations": result.iterations}))
    return 0


def cmd_serve(args) -> int:
    config = load_episode_file(args.config)
    server = EvaluatorServer(config, host=args.host, port=args.port,
                             transcript_dir=args.transcript_dir)
    log.info("serving episodes (budget %d steps); ctrl-c to stop",
             config.step_budget)
    try:
        server.serve_forever(max_episodes=args.max_episodes)
    except KeyboardInterrupt:
        log.info("interrupted")
    return 0


def cmd_metrics(args) -> int:
    import os

    if os.path.isdir(args.a) != os.path.isdir(args.b):
        raise ValueError("metrics inputs must both be files or both directories")
    if os.path.isdir(args.a):
        report = compare_sequence(args.a, args.b, diff_dir=args.diff_dir)
    else:
        report = compare(load_image(args.a), load_image(args.b))
    if args.out:
        report.save(args.out)
        log.info("wrote %s", args.out)
    print(report.table())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinsplat",
        description="Kinematic Gaussian-splat scene engine")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help="render worker threads (default: all cores)")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help="seed for any stochastic steps (default 0)")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render one frame from a splat file")
    p.add_argument("--scene", required=True, help="splat .ply file")
    p.add_argument("--camera", required=True, help="camera .json file")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--depth", default=None, help="optional depth .npy path")
    p.add_argument("--background", default="0,0,0", help="r,g,b in [0,1]")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("replay", help="replay a trajectory into a dataset")
    p.add_argument("--job", required=True, help="synthesis job .json file")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compose", help="run a scene composition script")
    p.add_argument("--script", required=True, help="composition .json script")
    p.add_argument("--base-dir", default=".",
                   help="directory paths in the script resolve against")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("align", help="frame averaging or mask layout shift")
    p.add_argument("--observations", default=None,
                   help="per-joint observation .json file")
    p.add_argument("--report", default=None, help="alignment report .json out")
    p.add_argument("--out", default=None, help="estimated transform file out")
    p.add_argument("--gs-mask", default=None, help="rendered-layout mask PNG")
    p.add_argument("--sim-mask", default=None, help="simulator-layout mask PNG")
    p.add_argument("--max-shift", type=int, default=16,
                   help="layout search radius in pixels")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("localize", help="photometric camera localization")
    p.add_argument("--scene", required=True, help="splat .ply file")
    p.add_argument("--observed", required=True, help="observed PNG image")
    p.add_argument("--camera", required=True, help="camera .json (intrinsics)")
    p.add_argument("--init-pose", default=None,
                   help="initial pose file (default: the camera file's pose)")
    p.add_argument("--budget", type=int, default=12,
                   help="direction-set cycles per pyramid level")
    p.add_argument("--out", required=True, help="recovered pose file out")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("serve", help="host closed-loop policy evaluation")
    p.add_argument("--config", required=True, help="episode config .json")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7446)
    p.add_argument("--transcript-dir", default=None)
    p.add_argument("--max-episodes", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("metrics", help="compare images or image directories")
    p.add_argument("--a", required=True, help="image or directory")
    p.add_argument("--b", required=True, help="image or directory")
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--diff-dir", default=None,
                   help="write per-frame |a-b| images here (directories only)")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=args.log_level,
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed)
    if args.threads is not None:
        import numba

        numba.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except CONFIG_ERRORS as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary
        log.error("unexpected failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""``plk`` command line: pipelines over PFM / PLPC / TNS files.

Exit codes: 0 success, 2 input or parse error, 3 shape or contract error,
4 numerical failure (divergence, failing gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .camera import DEFAULT_MAX_DEPTH, DEFAULT_MIN_DEPTH, CameraIntrinsics, backproject
from .config import RunConfig, load_run_config, parse_section
from .errors import FormatError, InvalidShape, PLKError
from .fit import fit_depth, md_objective, with_dense_lidar
from .io import (
    load_scene,
    read_json,
    read_pfm,
    read_plpc,
    save_scene,
    write_csv_trace,
    write_json,
    write_occupancy,
    write_pfm,
    write_plpc,
    write_plpc_text,
    write_tns,
)
from .losses import smoothness_loss
from .scene import SCENE_KINDS, make_scene
from .softquant import VoxelGridSpec, assign_bins, bev_flatten, soft_quantize

log = logging.getLogger("plk")

EXIT_OK, EXIT_INPUT, EXIT_SHAPE, EXIT_NUMERIC = 0, 2, 3, 4


def _config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_run_config(read_json(path), path)


def cmd_depth_to_cloud(args) -> int:
    depth = read_pfm(args.depth)
    cam = parse_section(CameraIntrinsics, read_json(args.camera), args.camera, "camera")
    if depth.ndim != 2:
        raise InvalidShape(f"{args.depth}: depth map must have one channel")
    cloud = backproject(depth, cam, args.min_depth, args.max_depth)
    write_plpc(args.out, cloud)
    if args.text:
        write_plpc_text(args.text, cloud)
    print(len(cloud))
    return EXIT_OK


def cmd_quantize(args) -> int:
    cloud = read_plpc(args.cloud)
    spec = parse_section(VoxelGridSpec, read_json(args.grid), args.grid, "grid")
    occ = soft_quantize(cloud, spec)
    write_occupancy(args.out, occ, spec)
    if args.bev:
        bev = bev_flatten(occ, args.bev)
        out = Path(args.out)
        bev_path = out.with_name(out.stem + ".bev" + out.suffix)
        write_tns(bev_path, bev, {"dims": list(bev.shape), "mode": args.bev, "reduced_axis": 2,
                                  **{k: v for k, v in spec.to_dict().items() if k != "bins"}})
    inside = int((assign_bins(cloud, spec) >= 0).sum())
    print(f"{inside} {len(cloud)}")
    return EXIT_OK


def _translation_scale(cfg: RunConfig) -> float:
    return cfg.depth.d_prior if cfg.fit.translation_scale == "prior" else 1.0


def cmd_loss(args) -> int:
    cfg = _config(args.config)
    scene = load_scene(args.inputs)
    depth = read_pfm(args.depth) if args.depth else scene.gt_depth
    if depth.shape != scene.gt_depth.shape:
        raise InvalidShape(f"predicted depth {depth.shape} vs scene {scene.gt_depth.shape}")
    if np.any(depth <= 0):
        raise InvalidShape("predicted depth must be positive")
    value, _, parts = md_objective(
        depth, scene, args.mode, cfg.md_weights, cfg.alpha, cfg.ssim, cfg.fit.reduction,
        _translation_scale(cfg),
    )
    if args.with_smoothness:
        value += cfg.fit.smoothness_weight * smoothness_loss(depth, scene.image_t).value
    print(f"{value:.17g}")
    if args.dump:
        for name in ("m_map", "d_map"):
            if name in parts:
                write_pfm(Path(args.dump) / f"{name}.pfm", parts[name])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    names = list(gc.OPS) if args.op == "all" else [args.op]
    if any(n not in gc.OPS for n in names):
        print(f"plk: unknown op {args.op!r}; valid: all, {', '.join(gc.OPS)}", file=sys.stderr)
        return EXIT_INPUT
    failed = []
    for name in names:
        for res in gc.run_gradcheck(name, args.seed, args.trials, gc.worker_count()):
            print(res.line())
            if not res.passed:
                failed.append(res)
    if failed:
        worst = max(failed, key=lambda r: r.max_rel_error)
        print(f"FAILED {len(failed)} trial(s); worst {worst.op} trial={worst.trial} at {worst.worst}")
        return EXIT_NUMERIC
    print(f"passed {len(names)} op(s) x {args.trials} trials")
    return EXIT_OK


def _scene_from_config(kind, cfg: RunConfig, seed):
    sp = cfg.scene
    seed = sp.seed if seed is None else seed
    cam = cfg.camera
    scene = make_scene(kind, sp.height, sp.width, cam, sp.baseline, seed,
                       sp.plane_depth, sp.near_depth, sp.far_depth)
    return with_dense_lidar(scene) if sp.dense_lidar else scene


def cmd_fit(args) -> int:
    cfg = _config(args.config)
    fit_cfg = cfg.fit
    if args.mode:
        fit_cfg = dataclasses.replace(fit_cfg, mode=args.mode)
    if args.seed is not None:
        fit_cfg = dataclasses.replace(fit_cfg, seed=args.seed)
    scene = _scene_from_config(args.scene, cfg, args.seed)
    res = fit_depth(scene, cfg.depth, fit_cfg, cfg.md_weights, cfg.alpha, cfg.ssim)
    out = Path(args.out)
    write_pfm(out / "disparity.pfm", res.disparity)
    write_pfm(out / "depth.pfm", res.depth)
    write_csv_trace(out / "loss_trace.csv", res.loss_trace)
    write_json(out / "metrics.json", res.metrics_dict())
    print(f"abs_rel={res.metrics.abs_rel:.6g} median_abs_rel={res.median_abs_rel:.6g} "
          f"final_loss={res.loss_trace[-1]:.6g}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    sp = cfg.scene
    overrides = {k: v for k, v in (("height", args.height), ("width", args.width),
                                   ("baseline", args.baseline)) if v is not None}
    cfg = dataclasses.replace(cfg, scene=dataclasses.replace(sp, **overrides))
    scene = _scene_from_config(args.kind, cfg, args.seed)
    save_scene(args.out, scene)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plk", description="Differentiable pseudo-LiDAR kernels.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("depth-to-cloud", help="back-project a depth PFM to a PLPC point cloud")
    s.add_argument("--depth", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--min-depth", type=float, default=DEFAULT_MIN_DEPTH)
    s.add_argument("--max-depth", type=float, default=DEFAULT_MAX_DEPTH)
    s.add_argument("--text", metavar="FILE", help="also write 'x y z' lines")
    s.set_defaults(func=cmd_depth_to_cloud)

    s = sub.add_parser("quantize", help="soft-quantize a PLPC cloud into a TNS occupancy tensor")
    s.add_argument("--cloud", required=True)
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--bev", choices=("max", "sum"))
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("loss", help="evaluate the M, D or MD loss on a scene directory")
    s.add_argument("--mode", required=True, choices=("M", "D", "MD"))
    s.add_argument("--config")
    s.add_argument("--inputs", required=True, metavar="SCENE_DIR")
    s.add_argument("--depth", help="predicted depth PFM (default: the scene's ground truth)")
    s.add_argument("--dump", metavar="DIR", help="write per-pixel loss maps as PFM")
    s.add_argument("--with-smoothness", action="store_true")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("gradcheck", help="compare analytic gradients with central differences")
    s.add_argument("--op", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("fit", help="fit a disparity grid on a synthetic scene")
    s.add_argument("--scene", required=True, choices=SCENE_KINDS)
    s.add_argument("--mode", choices=("M", "D", "MD"))
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("synth", help="write a synthetic scene directory")
    s.add_argument("--kind", required=True, choices=SCENE_KINDS)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--baseline", type=float)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        gc.worker_count()
    except ValueError:
        print("plk: PLK_THREADS must be a nonnegative integer", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"plk: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PLKError as exc:
        print(f"plk: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"plk: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

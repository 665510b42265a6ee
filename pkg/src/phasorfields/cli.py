"""Command-line front end.

Subcommands cover the full loop: ``simulate`` renders analytic scenes to
capture datasets, ``fit`` trains fields + poses, ``render``/``depth``
produce images from checkpoints or raw quads, ``eval`` scores a
checkpoint against a hold-out split, and ``calibrate-phase`` recovers
the sensor's constant phase bias from a known-depth target.

All commands accept ``--seed`` and ``--threads``; the ``TORF_THREADS``
environment variable overrides the flag. Failures exit nonzero with a
message naming the offending file or field.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
import torch

from .cameras import Camera, Intrinsics, Pose
from .dataset import Capture, load_dataset, write_dataset
from .fields import (DynamicGridField, RadianceFieldSet, StaticGridField,
                     load_checkpoint, save_checkpoint)
from .metrics import depth_mse, psnr
from .pfm import read_pfm, write_pfm, write_preview_png
from .renderer import render_image
from .sim import scene_from_dict
from .tof import (DEFAULT_AMPLITUDE_FLOOR, CalibrationError, ToFModel,
                  combine_quad, estimate_zero_phase_offset, phase,
                  phasor_to_depth, unwrap_depth)
from .training import PoseParams, TrainConfig, train, write_trace_csv


def _load_json(path: str):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise ValueError(f"{path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from e


def _get(d: dict, key: str, ctx: str):
    if key not in d:
        raise ValueError(f"{ctx}: missing field '{key}'")
    return d[key]


def _read_quad(path: str) -> np.ndarray:
    quad, _ = read_pfm(path)
    if quad.shape[-1] != 4:
        raise ValueError(f"{path}: expected a 4-channel quad image, "
                         f"found {quad.shape[-1]} channels")
    return quad.astype(np.float64)


def cmd_simulate(args) -> int:
    scene_d = _load_json(args.scene)
    cap = _load_json(args.capture)
    try:
        scene = scene_from_dict(scene_d)
    except (ValueError, TypeError, KeyError) as e:
        raise ValueError(f"{args.scene}: {e}") from e

    ctx = args.capture
    try:
        intr = Intrinsics.from_dict(_get(cap, "intrinsics", ctx))
        tof_intr = Intrinsics.from_dict(cap["tof_intrinsics"]) \
            if "tof_intrinsics" in cap else intr
        model = ToFModel(**cap.get("model", {}))
        offset = Pose.from_dict(cap["tof_offset"]) \
            if "tof_offset" in cap else Pose()
    except KeyError as e:
        raise ValueError(f"{ctx}: missing field {e}") from e

    captures = []
    for i, fr in enumerate(_get(cap, "frames", ctx)):
        pose = Pose.from_dict(_get(fr, "pose", f"{ctx}: frames[{i}]"))
        captures.append(Capture(Camera(intr, pose),
                                Camera(tof_intr, pose.compose(offset)),
                                tau=fr.get("tau", 0.0)))
    seed = args.seed if args.seed is not None else cap.get("seed", 0)
    write_dataset(args.out, scene, model, captures,
                  supersampling=cap.get("supersampling", 1),
                  noise_std=cap.get("noise_std", 0.0),
                  n_periods=cap.get("n_periods", 1), seed=seed)
    print(f"wrote {len(captures)} frame(s) to {args.out}")
    return 0


def cmd_fit(args) -> int:
    ds = load_dataset(args.data)
    cfg_d = _load_json(args.config)
    grid = _get(cfg_d, "grid", args.config)
    ctx = f"{args.config}: grid"
    try:
        cfg = TrainConfig.from_dict(cfg_d.get("train", {}))
    except (ValueError, TypeError) as e:
        raise ValueError(f"{args.config}: train: {e}") from e

    static = StaticGridField(_get(grid, "resolution", ctx),
                             _get(grid, "bbox_min", ctx),
                             _get(grid, "bbox_max", ctx),
                             rgb_max=grid.get("rgb_max", 1.0))
    dynamic = None
    if grid.get("time_resolution"):
        dynamic = DynamicGridField(static.resolution, grid["time_resolution"],
                                   static.bbox_min.numpy(),
                                   static.bbox_max.numpy(),
                                   rgb_max=static.rgb_max)
    fields = RadianceFieldSet(static, dynamic)

    relative = ds[0].rgb_pose.inverse().compose(ds[0].tof_pose)
    poses = PoseParams.from_poses([f.rgb_pose for f in ds.frames], relative)
    result = train(ds, fields, poses, ds.model, cfg,
                   seed=args.seed if args.seed is not None else 0)

    extras = {
        "model": dataclasses.asdict(ds.model),
        "rgb_intrinsics": ds.rgb_intrinsics.to_dict(),
        "tof_intrinsics": ds.tof_intrinsics.to_dict(),
        "train_config": cfg.to_dict(),
        "poses": {"rgb": [p.to_dict() for p in result.poses.rgb_poses()],
                  "tof": [p.to_dict() for p in result.poses.tof_poses()],
                  "taus": [f.tau for f in ds.frames]},
    }
    save_checkpoint(args.out, result.fields, extras)
    trace_path = args.trace or args.out + ".csv"
    write_trace_csv(trace_path, result.trace)
    final = result.trace[-1]
    print(f"fit finished: rgb_loss={final['rgb_loss']:.4g} "
          f"tof_loss={final['tof_loss']:.4g}; checkpoint {args.out}, "
          f"trace {trace_path}")
    return 0


def cmd_render(args) -> int:
    fields, extras = load_checkpoint(args.ckpt)
    model = ToFModel(**extras["model"]) if "model" in extras else ToFModel()
    pose = Pose.from_dict(_load_json(args.pose))
    intr_key = "rgb_intrinsics" if args.mode == "rgb" else "tof_intrinsics"
    intr = Intrinsics.from_dict(_get(extras, intr_key, args.ckpt))
    tcfg = extras.get("train_config", {})
    n_samples = args.samples or tcfg.get("n_samples", 64)
    t_near = args.t_near if args.t_near is not None else tcfg.get("t_near", 0.05)
    t_far = args.t_far if args.t_far is not None else tcfg.get("t_far", 10.0)

    imgs = render_image(fields, Camera(intr, pose), model, n_samples,
                        t_near, t_far, tau=args.time, seed=args.seed)
    if args.mode == "rgb":
        out = imgs["rgb"]
    elif args.mode == "tof":
        out = imgs["tof"]
    else:
        out = imgs["depth"][..., None]
    write_pfm(args.out, out.astype(np.float32))
    if args.preview:
        write_preview_png(args.preview, out, signed=args.mode == "tof")
    print(f"wrote {args.mode} image {out.shape[0]}x{out.shape[1]} to {args.out}")
    return 0


def cmd_depth(args) -> int:
    quad = _read_quad(args.quad)
    model = ToFModel(mod_frequency=args.freq)
    _, depth, _ = phasor_to_depth(combine_quad(quad), model)
    if args.unwrap_threshold is not None:
        depth = unwrap_depth(depth, model, args.unwrap_threshold)
    write_pfm(args.out, depth.astype(np.float32)[..., None])
    print(f"wrote depth image to {args.out}")
    return 0


def cmd_eval(args) -> int:
    fields, extras = load_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    tcfg = extras.get("train_config", {})
    n_samples = tcfg.get("n_samples", 64)
    t_near, t_far = tcfg.get("t_near", 0.05), tcfg.get("t_far", 10.0)

    rows = []
    for fr in ds.frames:
        rgb = render_image(fields, Camera(ds.rgb_intrinsics, fr.rgb_pose),
                           ds.model, n_samples, t_near, t_far, tau=fr.tau)["rgb"]
        depth = render_image(fields, Camera(ds.tof_intrinsics, fr.tof_pose),
                             ds.model, n_samples, t_near, t_far,
                             tau=fr.tau)["depth"]
        mask = fr.depth_gt > 0
        rows.append({
            "index": fr.index,
            "psnr": psnr(np.clip(rgb, 0, 1), np.clip(fr.rgb, 0, 1)),
            "depth_mse": depth_mse(depth, fr.depth_gt, mask),
        })
    out = {"schema_version": 1, "frames": rows,
           "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
           "mean_depth_mse": float(np.mean([r["depth_mse"] for r in rows]))}
    with open(args.out, "w") as f:
        json.dump(out, f, indent=1)
    print(f"psnr {out['mean_psnr']:.2f} dB, depth mse {out['mean_depth_mse']:.3e} "
          f"over {len(rows)} frame(s); wrote {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    quad = _read_quad(args.quad)
    model = ToFModel(mod_frequency=args.freq)
    phasor = combine_quad(quad)
    reliable = np.abs(phasor) > DEFAULT_AMPLITUDE_FLOOR
    if not reliable.any():
        raise CalibrationError(f"{args.quad}: no pixels above the amplitude floor")
    offset = estimate_zero_phase_offset(
        phase(phasor[reliable]),
        np.full(int(reliable.sum()), args.target_depth), model)
    print(f"{offset:.12g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="rng seed (default: per-command)")
    common.add_argument("--threads", type=int, default=None,
                        help="compute threads (TORF_THREADS overrides)")

    parser = argparse.ArgumentParser(
        prog="phasorfields",
        description="Simulate, fit, and evaluate ToF + rgb radiance fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="render an analytic scene into a capture dataset")
    p.add_argument("--scene", required=True)
    p.add_argument("--capture", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common],
                       help="train fields and poses on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="loss CSV path (default OUT.csv)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", parents=[common],
                       help="render a checkpoint from a given pose")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--mode", choices=("rgb", "tof", "depth"), default="rgb")
    p.add_argument("--out", required=True)
    p.add_argument("--preview", default=None, help="also write a PNG preview")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--t-near", type=float, default=None)
    p.add_argument("--t-far", type=float, default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("depth", parents=[common],
                       help="depth from a quad-exposure image")
    p.add_argument("--quad", required=True)
    p.add_argument("--freq", type=float, required=True)
    p.add_argument("--unwrap-threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("eval", parents=[common],
                       help="score a checkpoint against a hold-out dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate-phase", parents=[common],
                       help="estimate the zero-phase offset from a known target")
    p.add_argument("--quad", required=True)
    p.add_argument("--target-depth", type=float, required=True)
    p.add_argument("--freq", type=float, required=True)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        env_threads = os.environ.get("TORF_THREADS")
        if env_threads is not None:
            try:
                threads = int(env_threads)
            except ValueError:
                raise ValueError(f"TORF_THREADS: not an integer ({env_threads!r})")
        else:
            threads = args.threads
        if threads is not None:
            if threads < 1:
                raise ValueError("thread count must be >= 1")
            torch.set_num_threads(threads)
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

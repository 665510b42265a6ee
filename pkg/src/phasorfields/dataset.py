"""Capture dataset layout.

A dataset is a directory:

  meta.json                 sensor model, intrinsics, capture settings
  frames/0000/rgb.pfm       (H, W, 3) color image
  frames/0000/tof_quad.pfm  (H, W, 4) phase-shifted exposures
  frames/0000/depth_gt.pfm  (H, W) exact range along tof rays (0 at misses)
  frames/0000/poses.json    camera-to-world poses of both sensors + tau
  frames/0001/...

The rgb and tof sensors may differ in pose and intrinsics; ground-truth
depth always refers to the tof camera. Frame index order is capture
order; tau is the normalized scene time of the capture.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cameras import Camera, Intrinsics, Pose
from .pfm import read_pfm, write_pfm
from .sim import Scene, capture_frame
from .tof import ToFModel, combine_quad

_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Capture:
    """One requested capture when writing a dataset."""

    rgb_camera: Camera
    tof_camera: Camera
    tau: float = 0.0


@dataclass
class Frame:
    index: int
    rgb: np.ndarray
    tof_quad: np.ndarray
    depth_gt: np.ndarray
    rgb_pose: Pose
    tof_pose: Pose
    tau: float

    @property
    def tof_phasor(self) -> np.ndarray:
        return combine_quad(self.tof_quad)


class ToFDataset:
    def __init__(self, root: str, meta: dict, frames: Sequence[Frame]):
        self.root = root
        self.meta = meta
        self.frames = list(frames)
        self.model = ToFModel(**meta["model"])
        self.rgb_intrinsics = Intrinsics.from_dict(meta["rgb_intrinsics"])
        self.tof_intrinsics = Intrinsics.from_dict(meta["tof_intrinsics"])

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> Frame:
        return self.frames[i]


def _frame_dir(root: str, index: int) -> str:
    return os.path.join(root, "frames", f"{index:04d}")


def write_dataset(root: str, scene: Scene, model: ToFModel,
                  captures: Sequence[Capture], supersampling: int = 1,
                  noise_std: float = 0.0, n_periods: int = 1, seed: int = 0):
    """Simulate ``captures`` of ``scene`` and write the directory layout."""
    if not captures:
        raise ValueError("need at least one capture")
    rgb_intr = captures[0].rgb_camera.intrinsics
    tof_intr = captures[0].tof_camera.intrinsics
    for cap in captures:
        if cap.rgb_camera.intrinsics != rgb_intr or cap.tof_camera.intrinsics != tof_intr:
            raise ValueError("all captures must share per-sensor intrinsics")

    meta = {
        "schema_version": _SCHEMA_VERSION,
        "model": dataclasses.asdict(model),
        "n_frames": len(captures),
        "rgb_intrinsics": rgb_intr.to_dict(),
        "tof_intrinsics": tof_intr.to_dict(),
        "capture": {"supersampling": supersampling, "noise_std": noise_std,
                    "n_periods": n_periods, "seed": seed},
    }
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "meta.json"), "w") as f:
        json.dump(meta, f, indent=1)

    for i, cap in enumerate(captures):
        rng = np.random.Generator(np.random.Philox(key=[seed, i]))
        frame = capture_frame(scene, cap.rgb_camera, cap.tof_camera, model,
                              tau=cap.tau, supersampling=supersampling,
                              noise_std=noise_std, n_periods=n_periods, rng=rng)
        fdir = _frame_dir(root, i)
        os.makedirs(fdir, exist_ok=True)
        write_pfm(os.path.join(fdir, "rgb.pfm"), frame.rgb)
        write_pfm(os.path.join(fdir, "tof_quad.pfm"), frame.tof_quad)
        write_pfm(os.path.join(fdir, "depth_gt.pfm"), frame.depth)
        with open(os.path.join(fdir, "poses.json"), "w") as f:
            json.dump({"rgb": frame.rgb_pose.to_dict(),
                       "tof": frame.tof_pose.to_dict(),
                       "tau": frame.tau}, f, indent=1)


def load_dataset(root: str) -> ToFDataset:
    with open(os.path.join(root, "meta.json")) as f:
        meta = json.load(f)
    if meta.get("schema_version") != _SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema {meta.get('schema_version')}")

    frames = []
    for i in range(meta["n_frames"]):
        fdir = _frame_dir(root, i)
        rgb, _ = read_pfm(os.path.join(fdir, "rgb.pfm"))
        quad, _ = read_pfm(os.path.join(fdir, "tof_quad.pfm"))
        depth, _ = read_pfm(os.path.join(fdir, "depth_gt.pfm"))
        with open(os.path.join(fdir, "poses.json")) as f:
            poses = json.load(f)
        if rgb.shape[-1] != 3 or quad.shape[-1] != 4:
            raise ValueError(f"{fdir}: unexpected channel counts "
                             f"rgb={rgb.shape} quad={quad.shape}")
        frames.append(Frame(
            index=i, rgb=rgb.astype(np.float64),
            tof_quad=quad.astype(np.float64),
            depth_gt=depth[..., 0].astype(np.float64),
            rgb_pose=Pose.from_dict(poses["rgb"]),
            tof_pose=Pose.from_dict(poses["tof"]),
            tau=float(poses["tau"])))
    return ToFDataset(root, meta, frames)

"""Joint fitting of fields and camera poses to rgb + phasor captures.

The objective is a plain sum of squared residuals over rays,

  sum ||rgb - rgb_hat||^2 + lambda * sum |tof - tof_hat|^2

with the complex phasor residual counted as squared real plus squared
imaginary part. Training alternates rgb-only and tof-only iterations
(rgb first), halves lambda on a fixed iteration schedule, and runs in
two stages: a static-field warmup with a higher pose learning rate, then
the full (possibly dynamic) model. Poses are optimized as per-frame
axis-angle + translation for the rgb sensor plus one shared rgb-to-tof
relative transform.

Measured phasors are divided by the quad integration gain
(n_periods * T / 2) before use, which puts them in the renderer's
radiant units; each modality's residuals are additionally normalized by
the measurement variance so the default lambda of 1 is meaningful.

Gradients come from reverse accumulation through the renderer;
:func:`gradient_report` checks them against an independent central
finite-difference oracle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
from scipy.spatial.transform import Rotation

from .cameras import Intrinsics, Pose
from .fields import RadianceFieldSet
from .renderer import render_rays, stratified_sample_batch
from .tof import ToFModel, phasor_to_depth

DIVERGENCE_FACTOR = 1e6

# Relative gradient errors are measured against this floor so that
# near-zero gradient pairs do not produce 0/0.
_GRAD_ERROR_FLOOR = 1e-6

_VARIANCE_FLOOR = 1e-6


@dataclass
class TrainConfig:
    """Training hyperparameters; JSON uses the key "lambda" for ``lam``."""

    lam: float = 1.0
    lambda_half_life: int = 2000
    rays_per_batch: int = 1024
    iterations: int = 5000
    lr_fields: float = 1e-2
    lr_pose_initial: float = 1e-3
    lr_pose_late: float = 5e-4
    pose_stage_iters: int = 500
    n_samples: int = 64
    t_near: float = 0.05
    t_far: float = 10.0
    blend_sparsity: float = 1e-3
    optimize_poses: bool = True
    optimize_relative: bool = True
    rgb_only: bool = False
    tof_supervision: str = "phasor"

    def __post_init__(self):
        for name in ("lambda_half_life", "rays_per_batch", "iterations",
                     "pose_stage_iters", "n_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("lr_fields", "lr_pose_initial", "lr_pose_late"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not (0 < self.t_near < self.t_far):
            raise ValueError("require 0 < t_near < t_far")
        if self.tof_supervision not in ("phasor", "depth"):
            raise ValueError(f"unknown tof_supervision {self.tof_supervision!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**d)


def lambda_at(iteration: int, cfg: TrainConfig) -> float:
    """Scheduled lambda: halved every ``lambda_half_life`` iterations."""
    return cfg.lam * 2.0 ** (-(iteration // cfg.lambda_half_life))


def loss(rgb_pred=None, rgb_target=None, tof_pred=None, tof_target=None,
         lam: float = 1.0, rgb_weight: float = 1.0,
         tof_weight: float = 1.0) -> torch.Tensor:
    """Total squared error over a batch; either modality may be absent.

    rgb arrays are (N, 3); tof arrays are (N, C) residual channels (the
    phasor's real/imaginary parts, or a depth channel in the depth
    supervision ablation). Returns a scalar tensor >= 0.
    """
    total = torch.zeros((), dtype=torch.float64)
    if rgb_pred is not None:
        diff = torch.as_tensor(rgb_pred, dtype=torch.float64) \
            - torch.as_tensor(rgb_target, dtype=torch.float64)
        total = total + rgb_weight * (diff * diff).sum()
    if tof_pred is not None:
        diff = torch.as_tensor(tof_pred, dtype=torch.float64) \
            - torch.as_tensor(tof_target, dtype=torch.float64)
        total = total + lam * tof_weight * (diff * diff).sum()
    return total


# ---------------------------------------------------------------------------
# Pose parameterization.

def rodrigues(rotvec: torch.Tensor) -> torch.Tensor:
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3), smooth at 0."""
    theta_sq = (rotvec * rotvec).sum(-1)
    theta = torch.sqrt(theta_sq.clamp(min=1e-24))
    small = theta_sq < 1e-8
    a = torch.where(small, 1.0 - theta_sq / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta_sq / 24.0,
                    (1.0 - torch.cos(theta)) / theta_sq.clamp(min=1e-24))
    vx, vy, vz = rotvec[..., 0], rotvec[..., 1], rotvec[..., 2]
    zero = torch.zeros_like(vx)
    k = torch.stack([zero, -vz, vy, vz, zero, -vx, -vy, vx, zero],
                    dim=-1).reshape(rotvec.shape[:-1] + (3, 3))
    eye = torch.eye(3, dtype=rotvec.dtype)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


class PoseParams(nn.Module):
    """Per-frame rgb camera pose + one shared rgb-to-tof transform.

    The tof camera pose of frame i is rgb_pose_i composed with the
    relative transform, so sensor extrinsics are shared across frames.
    """

    def __init__(self, rotvecs, translations, rel_rotvec=None, rel_trans=None):
        super().__init__()
        rotvecs = torch.as_tensor(np.asarray(rotvecs, float), dtype=torch.float64)
        translations = torch.as_tensor(np.asarray(translations, float),
                                       dtype=torch.float64)
        if rotvecs.shape != translations.shape or rotvecs.ndim != 2 \
                or rotvecs.shape[1] != 3:
            raise ValueError("need matching (F, 3) rotation/translation arrays")
        self.rotvecs = nn.Parameter(rotvecs)
        self.translations = nn.Parameter(translations)
        rel_rotvec = np.zeros(3) if rel_rotvec is None else np.asarray(rel_rotvec)
        rel_trans = np.zeros(3) if rel_trans is None else np.asarray(rel_trans)
        self.rel_rotvec = nn.Parameter(torch.as_tensor(rel_rotvec, dtype=torch.float64))
        self.rel_trans = nn.Parameter(torch.as_tensor(rel_trans, dtype=torch.float64))

    @classmethod
    def from_poses(cls, rgb_poses: Sequence[Pose],
                   relative: Optional[Pose] = None) -> "PoseParams":
        rotvecs = [Rotation.from_matrix(p.rotation).as_rotvec() for p in rgb_poses]
        trans = [p.translation for p in rgb_poses]
        rel = relative or Pose()
        return cls(np.array(rotvecs), np.array(trans),
                   Rotation.from_matrix(rel.rotation).as_rotvec(), rel.translation)

    def __len__(self) -> int:
        return self.rotvecs.shape[0]

    def camera_rays(self, frame_idx: torch.Tensor, d_cam: torch.Tensor,
                    sensor: str = "rgb"):
        """World origins/directions for camera-space unit directions d_cam."""
        rot = rodrigues(self.rotvecs)
        trans = self.translations
        if sensor == "tof":
            trans = (rot @ self.rel_trans) + trans
            rot = rot @ rodrigues(self.rel_rotvec)
        elif sensor != "rgb":
            raise ValueError(f"unknown sensor {sensor!r}")
        rot_f = rot[frame_idx]
        origins = trans[frame_idx]
        dirs = (rot_f @ d_cam[..., None])[..., 0]
        return origins, dirs

    def _pose_from(self, rot: torch.Tensor, trans: torch.Tensor) -> Pose:
        return Pose(rot.detach().numpy(), trans.detach().numpy())

    def rgb_pose(self, i: int) -> Pose:
        return self._pose_from(rodrigues(self.rotvecs[i]), self.translations[i])

    def tof_pose(self, i: int) -> Pose:
        return self.rgb_pose(i).compose(self._pose_from(
            rodrigues(self.rel_rotvec), self.rel_trans))

    def rgb_poses(self):
        return [self.rgb_pose(i) for i in range(len(self))]

    def tof_poses(self):
        return [self.tof_pose(i) for i in range(len(self))]

    @torch.no_grad()
    def renormalize_(self):
        """Wrap axis-angle vectors back to norm < pi (same rotation)."""
        for vec in (self.rotvecs, self.rel_rotvec.unsqueeze(0)):
            theta = torch.linalg.norm(vec, dim=-1, keepdim=True)
            wrap = theta >= math.pi
            if torch.any(wrap):
                factor = torch.where(wrap, (theta - 2.0 * math.pi) / theta,
                                     torch.ones_like(theta))
                vec *= factor


# ---------------------------------------------------------------------------
# Batch construction and the per-iteration objective.

@dataclass
class RayBatch:
    """One modality's worth of rays with fixed sample positions."""

    kind: str                # "rgb" | "tof" | "depth"
    frame_idx: np.ndarray    # (N,) index into the pose set
    d_cam: np.ndarray        # (N, 3) unit camera-space directions
    tau: np.ndarray          # (N,)
    tvals: np.ndarray        # (N, K) sample distances
    target: np.ndarray       # (N, 3) rgb | (N, 2) re/im | (N, 1) depth
    t_far: float = 10.0

    def __post_init__(self):
        if self.kind not in ("rgb", "tof", "depth"):
            raise ValueError(f"unknown batch kind {self.kind!r}")


def batch_loss(fields: RadianceFieldSet, poses: PoseParams, batch: RayBatch,
               model: ToFModel, lam: float = 1.0, weight: float = 1.0,
               blend_weight: float = 0.0, static_only: bool = False):
    """Render a batch under the current parameters and score it.

    Returns (objective tensor, data-term value). The objective adds
    ``blend_weight * mean(T * blend)`` as a visibility-weighted sparsity
    prior on the dynamic blend weights, where T is the transmittance
    reaching each sample: occluded samples carry no data evidence either
    way, so only visible blend is pushed toward zero. The data term is
    the weighted squared error alone.
    """
    frame_idx = torch.as_tensor(batch.frame_idx, dtype=torch.long)
    d_cam = torch.as_tensor(batch.d_cam, dtype=torch.float64)
    sensor = "rgb" if batch.kind == "rgb" else "tof"
    origins, dirs = poses.camera_rays(frame_idx, d_cam, sensor)
    tvals = torch.as_tensor(batch.tvals, dtype=torch.float64)
    out = render_rays(fields, origins, dirs, tvals, batch.t_far, model,
                      tau=torch.as_tensor(batch.tau, dtype=torch.float64),
                      static_only=static_only or fields.dynamic is None)

    if batch.kind == "rgb":
        data = loss(rgb_pred=out.rgb, rgb_target=batch.target, rgb_weight=weight)
    elif batch.kind == "tof":
        pred = torch.stack([out.tof_re, out.tof_im], dim=-1)
        data = loss(tof_pred=pred, tof_target=batch.target, lam=lam,
                    tof_weight=weight)
    else:
        data = loss(tof_pred=out.depth[:, None], tof_target=batch.target,
                    lam=lam, tof_weight=weight)

    total = data
    if blend_weight > 0 and out.aux is not None:
        total = total + blend_weight * (out.transmittance
                                        * out.aux["blend"]).mean()
    return total, float(data.detach())


# ---------------------------------------------------------------------------
# Gradient computation and the finite-difference crosscheck.

class GradientCheck(NamedTuple):
    analytic: np.ndarray           # probed analytic gradient entries
    finite_difference: np.ndarray  # central-difference estimates, same order
    max_rel_error: float
    indices: np.ndarray            # probed flat indices within the block


def parameter_blocks(fields: RadianceFieldSet,
                     poses: Optional[PoseParams] = None) -> dict:
    """Named parameter blocks used for gradient reporting."""
    blocks = {"static_channels": [fields.static.density_pre,
                                  fields.static.rgb_pre, fields.static.ir_pre]}
    if fields.dynamic is not None:
        blocks["dynamic_channels"] = [fields.dynamic.density_pre,
                                      fields.dynamic.rgb_pre,
                                      fields.dynamic.ir_pre]
        blocks["blend_channel"] = [fields.dynamic.blend_pre]
    if poses is not None:
        blocks["pose_rotation"] = [poses.rotvecs]
        blocks["pose_translation"] = [poses.translations]
        blocks["relative_transform"] = [poses.rel_rotvec, poses.rel_trans]
    return blocks


def gradients(loss_fn, blocks: dict) -> dict:
    """Analytic gradients per block as flat arrays; errors on non-finite."""
    params = [p for plist in blocks.values() for p in plist]
    for p in params:
        p.grad = None
    value = loss_fn()
    value.backward()
    out = {}
    for name, plist in blocks.items():
        grads = [p.grad.reshape(-1) if p.grad is not None
                 else torch.zeros(p.numel(), dtype=p.dtype) for p in plist]
        g = torch.cat(grads)
        if not torch.isfinite(g).all():
            raise RuntimeError(f"non-finite gradient in block '{name}'")
        out[name] = g
    return out


def _probe_indices(grad: torch.Tensor, n_probe: int,
                   rng: np.random.Generator) -> np.ndarray:
    n = grad.numel()
    if n <= n_probe:
        return np.arange(n)
    # half the probes chase the largest analytic entries, half are random;
    # the random ones also exercise should-be-zero (untouched) parameters
    n_top = n_probe // 2
    top = torch.argsort(grad.abs(), descending=True)[:n_top].numpy()
    rest = rng.choice(n, size=n_probe - n_top, replace=False)
    return np.unique(np.concatenate([top, rest]))


def gradient_report(loss_fn, blocks: dict, n_probe: int = 32,
                    step: float = 1e-4,
                    rng: Optional[np.random.Generator] = None) -> dict:
    """Check analytic gradients against central finite differences.

    ``loss_fn`` is a zero-argument callable evaluating the objective at
    the current parameter values. For large blocks only ``n_probe``
    coordinates are probed. Returns {block name: GradientCheck}.
    """
    rng = rng or np.random.default_rng(0)
    analytic = gradients(loss_fn, blocks)
    report = {}
    for name, plist in blocks.items():
        grad = analytic[name]
        idx = _probe_indices(grad, n_probe, rng)
        offsets = np.cumsum([0] + [p.numel() for p in plist])
        fd = np.empty(idx.size)
        for j, flat_i in enumerate(idx):
            which = int(np.searchsorted(offsets, flat_i, side="right") - 1)
            p = plist[which]
            local = int(flat_i - offsets[which])
            with torch.no_grad():
                flat = p.reshape(-1)
                orig = float(flat[local])
                flat[local] = orig + step
                hi = float(loss_fn())
                flat[local] = orig - step
                lo = float(loss_fn())
                flat[local] = orig
            fd[j] = (hi - lo) / (2.0 * step)
        a = grad[idx].numpy()
        scale = np.maximum(np.maximum(np.abs(a), np.abs(fd)), _GRAD_ERROR_FLOOR)
        max_rel = float(np.max(np.abs(a - fd) / scale)) if idx.size else 0.0
        report[name] = GradientCheck(a, fd, max_rel, idx)
    return report


# ---------------------------------------------------------------------------
# Pose-set comparison (gauge-aligned).

def rotation_angle_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Geodesic angle between two rotation matrices, in degrees."""
    cos = (np.trace(ra.T @ rb) - 1.0) / 2.0
    return math.degrees(math.acos(np.clip(cos, -1.0, 1.0)))


def align_pose_sets(est: Sequence[Pose], gt: Sequence[Pose]) -> Pose:
    """Global rigid transform g minimizing the misfit of g∘est to gt.

    Jointly estimated poses are only determined up to a world gauge;
    align before measuring errors.
    """
    if len(est) != len(gt) or not est:
        raise ValueError("need equal-length, non-empty pose lists")
    m = sum(g.rotation @ e.rotation.T for e, g in zip(est, gt))
    u, _, vt = np.linalg.svd(m)
    rot = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    trans = np.mean([g.translation - rot @ e.translation
                     for e, g in zip(est, gt)], axis=0)
    return Pose(rot, trans)


def pose_errors(est: Sequence[Pose], gt: Sequence[Pose], align: bool = True):
    """Per-frame (rotation deg, translation m) errors, gauge-aligned by default."""
    if align:
        g = align_pose_sets(est, gt)
        est = [g.compose(p) for p in est]
    rot = np.array([rotation_angle_deg(e.rotation, t.rotation)
                    for e, t in zip(est, gt)])
    trans = np.array([np.linalg.norm(e.translation - t.translation)
                      for e, t in zip(est, gt)])
    return rot, trans


# ---------------------------------------------------------------------------
# The training loop.

@dataclass
class TrainResult:
    fields: RadianceFieldSet
    poses: PoseParams
    trace: list


def _camera_dir_table(intr: Intrinsics) -> np.ndarray:
    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    d = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy,
                  np.ones_like(uu)], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


class _Sampler:
    """Without-replacement ray index stream over (frame, pixel)."""

    def __init__(self, n_frames: int, n_pixels: int, rng: np.random.Generator):
        self.total = n_frames * n_pixels
        self.n_pixels = n_pixels
        self.rng = rng
        self.perm = rng.permutation(self.total)
        self.cursor = 0

    def draw(self, n: int):
        if self.cursor + n > self.total:
            self.perm = self.rng.permutation(self.total)
            self.cursor = 0
        idx = self.perm[self.cursor:self.cursor + min(n, self.total)]
        self.cursor += idx.size
        return idx // self.n_pixels, idx % self.n_pixels


def train(dataset, fields: RadianceFieldSet, poses: PoseParams,
          model: ToFModel, cfg: TrainConfig, seed: int = 0,
          frame_indices: Optional[Sequence[int]] = None,
          gt_poses: Optional[Sequence[Pose]] = None) -> TrainResult:
    """Fit fields (and optionally poses) to a capture dataset.

    ``frame_indices`` restricts training to a subset of frames; ``poses``
    must hold one entry per used frame, in the same order. ``gt_poses``
    (default: the dataset's stored rgb poses) are only used to report
    gauge-aligned pose errors in the trace.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    frames = list(frame_indices) if frame_indices is not None \
        else list(range(len(dataset)))
    if len(poses) != len(frames):
        raise ValueError(f"pose set covers {len(poses)} frames, need {len(frames)}")
    if gt_poses is None:
        gt_poses = [dataset[i].rgb_pose for i in frames]

    rgb_dirs = _camera_dir_table(dataset.rgb_intrinsics)
    tof_dirs = _camera_dir_table(dataset.tof_intrinsics)
    taus = np.array([dataset[i].tau for i in frames])

    rgb_targets = np.stack([dataset[i].rgb.reshape(-1, 3) for i in frames])
    gain = dataset.meta.get("capture", {}).get("n_periods", 1) * model.period / 2.0
    phasors = np.stack([dataset[i].tof_phasor.reshape(-1) for i in frames]) / gain
    tof_targets = np.stack([phasors.real, phasors.imag], axis=-1)
    depth_targets = None
    if cfg.tof_supervision == "depth":
        _, depth, _ = phasor_to_depth(phasors * gain, model)
        depth_targets = depth[..., None]

    rgb_weight = 1.0 / max(float(rgb_targets.var()), _VARIANCE_FLOOR)
    tof_weight = 1.0 / max(float(tof_targets.var()), _VARIANCE_FLOOR)
    if depth_targets is not None:
        tof_weight = 1.0 / max(float(depth_targets.var()), _VARIANCE_FLOOR)

    # optimize_relative=False pins the sensor offset to its calibrated value;
    # with near-collocated sensors a free offset can silently absorb global
    # depth residuals that belong in the field.
    frame_params = [poses.rotvecs, poses.translations]
    rel_params = [poses.rel_rotvec, poses.rel_trans]
    for p in frame_params:
        p.requires_grad_(cfg.optimize_poses)
    for p in rel_params:
        p.requires_grad_(cfg.optimize_poses and cfg.optimize_relative)
    groups = [{"params": list(fields.parameters()), "lr": cfg.lr_fields}]
    if cfg.optimize_poses:
        pose_group = frame_params + (rel_params if cfg.optimize_relative else [])
        groups.append({"params": pose_group, "lr": cfg.lr_pose_initial})
    opt = torch.optim.Adam(groups, betas=(0.9, 0.999))

    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    samplers = {"rgb": _Sampler(len(frames), rgb_dirs.shape[0], rng),
                "tof": _Sampler(len(frames), tof_dirs.shape[0], rng)}

    trace = []
    last = {"rgb": math.nan, "tof": math.nan}
    initial = {}
    for it in range(cfg.iterations):
        if it == cfg.pose_stage_iters and cfg.optimize_poses:
            opt.param_groups[-1]["lr"] = cfg.lr_pose_late
        static_stage = it < cfg.pose_stage_iters
        lam = lambda_at(it, cfg)

        use_rgb = cfg.rgb_only or it % 2 == 0
        modality = "rgb" if use_rgb else "tof"
        f_idx, p_idx = samplers[modality].draw(cfg.rays_per_batch)
        jitter = rng.random((f_idx.size, cfg.n_samples))
        tvals = stratified_sample_batch(cfg.t_near, cfg.t_far, cfg.n_samples,
                                        f_idx.size, jitter)
        if use_rgb:
            batch = RayBatch("rgb", f_idx, rgb_dirs[p_idx], taus[f_idx], tvals,
                             rgb_targets[f_idx, p_idx], cfg.t_far)
            weight = rgb_weight
        else:
            kind = "depth" if depth_targets is not None else "tof"
            target = depth_targets if depth_targets is not None else tof_targets
            batch = RayBatch(kind, f_idx, tof_dirs[p_idx], taus[f_idx], tvals,
                             target[f_idx, p_idx], cfg.t_far)
            weight = tof_weight

        blend_weight = 0.0
        if fields.dynamic is not None and not static_stage:
            blend_weight = cfg.blend_sparsity
        objective, data_val = batch_loss(
            fields, poses, batch, model, lam=lam, weight=weight,
            blend_weight=blend_weight, static_only=static_stage)

        key = "rgb" if use_rgb else "tof"
        initial.setdefault(key, max(data_val, 1e-12))
        if not math.isfinite(data_val) \
                or data_val > DIVERGENCE_FACTOR * initial[key]:
            raise RuntimeError(
                f"training diverged at iteration {it}: {key} loss {data_val:.3e} "
                f"vs initial {initial[key]:.3e}")
        last[key] = data_val

        opt.zero_grad(set_to_none=True)
        objective.backward()
        opt.step()
        if cfg.optimize_poses:
            poses.renormalize_()

        row = {"iteration": it, "rgb_loss": last["rgb"], "tof_loss": last["tof"],
               "lambda": lam, "pose_rot_error_deg": None,
               "pose_trans_error_m": None}
        if cfg.optimize_poses:
            rot_err, trans_err = pose_errors(poses.rgb_poses(), gt_poses)
            row["pose_rot_error_deg"] = float(rot_err.mean())
            row["pose_trans_error_m"] = float(trans_err.mean())
        trace.append(row)

    return TrainResult(fields, poses, trace)


_TRACE_COLUMNS = ("iteration", "rgb_loss", "tof_loss", "lambda",
                  "pose_rot_error_deg", "pose_trans_error_m")


def write_trace_csv(path: str, trace: Sequence[dict]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_TRACE_COLUMNS)
        for row in trace:
            writer.writerow(["" if row.get(c) is None else row.get(c)
                             for c in _TRACE_COLUMNS])

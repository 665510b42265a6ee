"""Analytic test-scene simulator.

Scenes are small collections of geometric primitives (infinite planes,
spheres, axis-aligned boxes) with diffuse albedo, an IR reflectance for
the modulated source, and optional linear keyframe motion over
normalized time tau in [0, 1]. Ray tracing is closed form, so captured
images come with exact ground truth:

  rgb        albedo * ambient at the first hit (view independent)
  IR impulse energy ir_albedo * cos(theta) / d^2 at round-trip delay 2d/c
  mirror     one extra impulse, scaled by the mirror reflectivity, at the
             total unfolded path length

Quad exposures follow the sensor model in :mod:`.tof`; optional
supersampling averages sub-pixel rays (which is what creates mixed
"flying pixel" phasors at silhouettes) and gaussian noise is added to
the four exposures only, never to the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cameras import Camera, Pose
from .tof import ToFModel, quad_exposures_from_impulses

# Intersections closer than this are ignored; also the offset used to
# restart reflected rays off a mirror surface.
MIN_HIT_DISTANCE = 1e-6


@dataclass(frozen=True)
class Motion:
    """Piecewise-linear translation keyframes over tau in [0, 1]."""

    times: np.ndarray     # (K,) strictly increasing
    offsets: np.ndarray   # (K, 3)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1, 3)
        if times.size == 0 or times.size != offsets.shape[0]:
            raise ValueError("need one offset per keyframe time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("keyframe times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "offsets", offsets)

    def offset_at(self, tau: float) -> np.ndarray:
        return np.array([np.interp(tau, self.times, self.offsets[:, i])
                         for i in range(3)])


@dataclass(kw_only=True)
class _Surface:
    albedo: Sequence[float] = (0.5, 0.5, 0.5)
    ir_albedo: float = 0.5
    mirror: bool = False
    reflectivity: float = 0.0
    motion: Optional[Motion] = None

    def _offset(self, tau: float) -> np.ndarray:
        if self.motion is None:
            return np.zeros(3)
        return self.motion.offset_at(tau)


@dataclass
class Plane(_Surface):
    point: Sequence[float] = (0.0, 0.0, 0.0)
    normal: Sequence[float] = (0.0, 0.0, -1.0)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)
        self.point = np.asarray(self.point, dtype=float)

    def intersect(self, origins, dirs, tau):
        point = self.point + self._offset(tau)
        denom = dirs @ self.normal
        safe = np.where(np.abs(denom) < 1e-12, 1.0, denom)
        t = ((point - origins) @ self.normal) / safe
        t = np.where((np.abs(denom) < 1e-12) | (t <= MIN_HIT_DISTANCE), np.inf, t)
        normals = np.broadcast_to(self.normal, dirs.shape)
        return t, normals


@dataclass
class Sphere(_Surface):
    center: Sequence[float] = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")
        self.center = np.asarray(self.center, dtype=float)

    def intersect(self, origins, dirs, tau):
        center = self.center + self._offset(tau)
        oc = origins - center
        b = np.sum(oc * dirs, axis=-1)
        c = np.sum(oc * oc, axis=-1) - self.radius ** 2
        disc = b * b - c
        sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
        t_near, t_far = -b - sqrt_disc, -b + sqrt_disc
        t = np.where(t_near > MIN_HIT_DISTANCE, t_near, t_far)
        t = np.where((disc < 0) | (t <= MIN_HIT_DISTANCE), np.inf, t)
        with np.errstate(invalid="ignore"):
            hitpoint = origins + t[..., None] * dirs
            normals = (hitpoint - center) / self.radius
        return t, np.where(np.isfinite(t)[..., None], normals, 0.0)


@dataclass
class Box(_Surface):
    bbox_min: Sequence[float] = (0.0, 0.0, 0.0)
    bbox_max: Sequence[float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=float)
        self.bbox_max = np.asarray(self.bbox_max, dtype=float)
        if not np.all(self.bbox_max > self.bbox_min):
            raise ValueError("box must have positive extent")

    def intersect(self, origins, dirs, tau):
        offset = self._offset(tau)
        d_safe = np.where(np.abs(dirs) < 1e-30, 1e-30, dirs)
        t0 = (self.bbox_min + offset - origins) / d_safe
        t1 = (self.bbox_max + offset - origins) / d_safe
        t_lo, t_hi = np.minimum(t0, t1), np.maximum(t0, t1)
        tmin, tmax = t_lo.max(axis=-1), t_hi.min(axis=-1)
        enter = tmin > MIN_HIT_DISTANCE
        t = np.where(enter, tmin, tmax)
        t = np.where((tmin > tmax) | (t <= MIN_HIT_DISTANCE), np.inf, t)
        # face normal: the axis that bounds the chosen slab crossing
        axis = np.where(enter, t_lo.argmax(axis=-1), t_hi.argmin(axis=-1))
        normals = np.zeros(dirs.shape)
        sign = np.where(enter, -np.sign(np.take_along_axis(
            dirs, axis[..., None], axis=-1)[..., 0]), np.sign(np.take_along_axis(
                dirs, axis[..., None], axis=-1)[..., 0]))
        np.put_along_axis(normals, axis[..., None], sign[..., None], axis=-1)
        return t, np.where(np.isfinite(t)[..., None], normals, 0.0)


@dataclass
class Scene:
    primitives: list
    ambient: float = 1.0
    background: Sequence[float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=float).reshape(3)
        for p in self.primitives:
            if p.mirror and not (0.0 <= p.reflectivity <= 1.0):
                raise ValueError("mirror reflectivity must be in [0, 1]")


def trace_first_hit(scene: Scene, origins, dirs, tau: float = 0.0):
    """Nearest intersection per ray.

    Returns (t, normals, index): metric hit distance (inf for miss),
    unit normals flipped toward the ray, and primitive index (-1 miss).
    """
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    shape = dirs.shape[:-1]
    best_t = np.full(shape, np.inf)
    best_n = np.zeros(dirs.shape)
    best_i = np.full(shape, -1, dtype=int)
    for i, prim in enumerate(scene.primitives):
        t, n = prim.intersect(origins, dirs, tau)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n = np.where(closer[..., None], n, best_n)
        best_i = np.where(closer, i, best_i)
    facing = np.sum(best_n * dirs, axis=-1) > 0
    best_n = np.where(facing[..., None], -best_n, best_n)
    return best_t, best_n, best_i


def _lambert_energy(ir_albedo, normals, dirs, path_length):
    cos = np.clip(-np.sum(normals * dirs, axis=-1), 0.0, None)
    return ir_albedo * cos / path_length ** 2


def impulse_response(scene: Scene, model: ToFModel, origins, dirs, tau: float = 0.0):
    """Per-ray impulse train (delays (N, 2), energies (N, 2)) plus hit info.

    Column 0 is the direct return, column 1 the one-bounce mirror return
    (zero energy where absent). Also returns (t, normals, index) of the
    direct hit for rgb/depth ground truth.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n_rays = dirs.shape[0]
    t, normals, idx = trace_first_hit(scene, origins, dirs, tau)
    hit = np.isfinite(t)
    delays = np.zeros((n_rays, 2))
    energies = np.zeros((n_rays, 2))
    if not scene.primitives:
        return delays, energies, t, normals, idx

    ir_albedo = np.array([p.ir_albedo for p in scene.primitives])
    t_safe = np.where(hit, t, 1.0)
    energy = np.where(hit, _lambert_energy(ir_albedo[idx], normals, dirs, t_safe), 0.0)
    delays[:, 0] = np.where(hit, 2.0 * t_safe / model.light_speed, 0.0)
    energies[:, 0] = energy * model.source_intensity

    # a mirror with zero reflectivity reflects nothing, skip the trace
    reflective = np.array([p.mirror and p.reflectivity > 0
                           for p in scene.primitives], dtype=bool)
    bounce = hit & reflective[np.clip(idx, 0, None)]
    if np.any(bounce):
        hit_pts = origins[bounce] + t[bounce, None] * dirs[bounce]
        d_in = dirs[bounce]
        n_m = normals[bounce]
        refl = d_in - 2.0 * np.sum(d_in * n_m, axis=-1, keepdims=True) * n_m
        o2 = hit_pts + MIN_HIT_DISTANCE * refl
        t2, n2, idx2 = trace_first_hit(scene, o2, refl, tau)
        hit2 = np.isfinite(t2)
        total = t[bounce] + np.where(hit2, t2, 1.0)
        rho = np.array([p.reflectivity for p in scene.primitives])[idx[bounce]]
        e2 = np.where(hit2, rho * _lambert_energy(
            ir_albedo[np.where(hit2, idx2, 0)], n2, refl, total), 0.0)
        delays[bounce, 1] = np.where(hit2, 2.0 * total / model.light_speed, 0.0)
        energies[bounce, 1] = e2 * model.source_intensity

    return delays, energies, t, normals, idx


def _subpixel_coords(width: int, height: int, supersampling: int):
    """Continuous (u, v) image coords; shape (H, W, k*k, 2)."""
    k = supersampling
    sub = (np.arange(k) + 0.5) / k
    su, sv = np.meshgrid(sub, sub)
    u = np.arange(width)[None, :, None] + su.reshape(-1)[None, None, :]
    v = np.arange(height)[:, None, None] + sv.reshape(-1)[None, None, :]
    u = np.broadcast_to(u, (height, width, k * k))
    v = np.broadcast_to(v, (height, width, k * k))
    return np.stack([u, v], axis=-1)


def _ray_directions(camera: Camera, uv):
    intr = camera.intrinsics
    d_cam = np.stack([(uv[..., 0] - intr.cx) / intr.fx,
                      (uv[..., 1] - intr.cy) / intr.fy,
                      np.ones(uv.shape[:-1])], axis=-1)
    d_world = d_cam @ camera.pose.rotation.T
    return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)


@dataclass
class FrameCapture:
    rgb: np.ndarray        # (H, W, 3)
    tof_quad: np.ndarray   # (H, W, 4)
    depth: np.ndarray      # (H, W) metric range along ToF rays, 0 at misses
    rgb_pose: Pose
    tof_pose: Pose
    tau: float


def capture_frame(scene: Scene, rgb_camera: Camera, tof_camera: Camera,
                  model: ToFModel, tau: float = 0.0, supersampling: int = 1,
                  noise_std: float = 0.0, n_periods: int = 1,
                  rng: Optional[np.random.Generator] = None) -> FrameCapture:
    """Capture one rgb image and one quad-exposure ToF image of the scene.

    Sub-pixel rays are averaged per pixel; depth ground truth is the
    unaveraged central ray of the ToF camera. Gaussian noise of
    ``noise_std`` is added independently to the four averaged exposures.
    """
    if supersampling < 1:
        raise ValueError("supersampling factor must be >= 1")
    if noise_std > 0 and rng is None:
        raise ValueError("noise requested without an rng")

    albedo = np.array([p.albedo for p in scene.primitives], dtype=float)
    if albedo.size == 0:
        albedo = np.zeros((1, 3))

    # rgb sensor
    intr = rgb_camera.intrinsics
    uv = _subpixel_coords(intr.width, intr.height, supersampling)
    dirs = _ray_directions(rgb_camera, uv).reshape(-1, 3)
    origin = np.broadcast_to(rgb_camera.pose.translation, dirs.shape)
    _, _, idx = trace_first_hit(scene, origin, dirs, tau)
    hit = idx >= 0
    rgb = np.where(hit[:, None], albedo[np.clip(idx, 0, None)] * scene.ambient,
                   scene.background)
    rgb = rgb.reshape(intr.height, intr.width, supersampling ** 2, 3).mean(axis=2)

    # tof sensor
    intr = tof_camera.intrinsics
    uv = _subpixel_coords(intr.width, intr.height, supersampling)
    dirs = _ray_directions(tof_camera, uv).reshape(-1, 3)
    origin = np.broadcast_to(tof_camera.pose.translation, dirs.shape)
    delays, energies, _, _, _ = impulse_response(scene, model, origin, dirs, tau)
    quad = quad_exposures_from_impulses(delays, energies, model, n_periods)
    quad = quad.reshape(intr.height, intr.width, supersampling ** 2, 4).mean(axis=2)
    if noise_std > 0:
        quad = quad + rng.normal(0.0, noise_std, quad.shape)

    # exact range of the central tof ray
    centers = np.stack(np.meshgrid(np.arange(intr.width) + 0.5,
                                   np.arange(intr.height) + 0.5), axis=-1)
    dirs_c = _ray_directions(tof_camera, centers).reshape(-1, 3)
    origin_c = np.broadcast_to(tof_camera.pose.translation, dirs_c.shape)
    t, _, _ = trace_first_hit(scene, origin_c, dirs_c, tau)
    depth = np.where(np.isfinite(t), t, 0.0).reshape(intr.height, intr.width)

    return FrameCapture(rgb=rgb, tof_quad=quad, depth=depth,
                        rgb_pose=rgb_camera.pose, tof_pose=tof_camera.pose,
                        tau=float(tau))


# ---------------------------------------------------------------------------
# JSON scene description (used by the command-line simulator).

def _surface_dict(prim) -> dict:
    d = {"albedo": np.asarray(prim.albedo, float).tolist(),
         "ir_albedo": prim.ir_albedo}
    if prim.mirror:
        d["mirror"] = True
        d["reflectivity"] = prim.reflectivity
    if prim.motion is not None:
        d["motion"] = {"times": prim.motion.times.tolist(),
                       "offsets": prim.motion.offsets.tolist()}
    return d


def scene_to_dict(scene: Scene) -> dict:
    prims = []
    for p in scene.primitives:
        if isinstance(p, Plane):
            d = {"type": "plane", "point": p.point.tolist(),
                 "normal": p.normal.tolist()}
        elif isinstance(p, Sphere):
            d = {"type": "sphere", "center": p.center.tolist(), "radius": p.radius}
        elif isinstance(p, Box):
            d = {"type": "box", "bbox_min": p.bbox_min.tolist(),
                 "bbox_max": p.bbox_max.tolist()}
        else:
            raise TypeError(f"unknown primitive {type(p).__name__}")
        d.update(_surface_dict(p))
        prims.append(d)
    return {"ambient": scene.ambient, "background": scene.background.tolist(),
            "primitives": prims}


def scene_from_dict(d: dict) -> Scene:
    prims = []
    for entry in d.get("primitives", []):
        entry = dict(entry)
        kind = entry.pop("type")
        motion = entry.pop("motion", None)
        if motion is not None:
            motion = Motion(np.asarray(motion["times"], float),
                            np.asarray(motion["offsets"], float))
        entry["motion"] = motion
        if kind == "plane":
            prims.append(Plane(**entry))
        elif kind == "sphere":
            prims.append(Sphere(**entry))
        elif kind == "box":
            prims.append(Box(**entry))
        else:
            raise ValueError(f"unknown primitive type {kind!r}")
    return Scene(primitives=prims, ambient=d.get("ambient", 1.0),
                 background=d.get("background", (0.0, 0.0, 0.0)))

"""Pinhole cameras, poses, and ray generation.

Conventions: OpenCV-style camera frame (+x right, +y down, +z forward),
poses stored camera-to-world. Pixel (u, v) are continuous image
coordinates; integer pixel (i, j) maps to its center (i + 0.5, j + 0.5).
Ray directions are unit-length, so the distance t along a ray is metric
range from the camera origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ORTHONORMAL_TOL = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @classmethod
    def centered(cls, width: int, height: int, focal: float) -> "Intrinsics":
        return cls(fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
                   width=width, height=height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   width=int(d["width"]), height=int(d["height"]))


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation must have det +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def compose(self, other: "Pose") -> "Pose":
        """self then other applied in self's frame: world_T_self @ self_T_other."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rot_inv = self.rotation.T
        return Pose(rot_inv, -rot_inv @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(),
                "translation": self.translation.tolist(),
                "convention": "camera-to-world"}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        convention = d.get("convention", "camera-to-world")
        if convention != "camera-to-world":
            raise ValueError(f"unsupported pose convention {convention!r}")
        return cls(np.asarray(d["rotation"], float), np.asarray(d["translation"], float))


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose = field(default_factory=Pose)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        direction = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(direction) - 1.0) > _ORTHONORMAL_TOL:
            raise ValueError("ray direction must be unit length")
        if not (0 < self.t_near < self.t_far):
            raise ValueError("require 0 < t_near < t_far")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)


def generate_ray(camera: Camera, pixel, t_near: float, t_far: float) -> Ray:
    """Backproject a continuous pixel coordinate into a world-space ray."""
    u, v = float(pixel[0]), float(pixel[1])
    intr = camera.intrinsics
    if not (0 <= u <= intr.width and 0 <= v <= intr.height):
        raise ValueError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d_world = camera.pose.rotation @ d_cam
    d_world /= np.linalg.norm(d_world)
    return Ray(camera.pose.translation.copy(), d_world, t_near, t_far)


def camera_ray_grid(camera: Camera, t_near: float, t_far: float):
    """Rays through every pixel center; returns (origins (H,W,3), directions (H,W,3))."""
    intr = camera.intrinsics
    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy,
                      np.ones_like(uu)], axis=-1)
    d_world = d_cam @ camera.pose.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.pose.translation,
                              d_world.shape).copy()
    return origins, d_world


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-to-world pose looking from ``eye`` toward ``target``.

    With the +y-down camera frame the world ``up`` maps to -y in camera
    coordinates.
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=float)
    right = np.cross(forward, up)
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise ValueError("view direction parallel to up vector")
    right /= norm
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    return Pose(rot, eye)

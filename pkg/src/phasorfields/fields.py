"""Explicit volumetric scene representation.

Two grid fields stand in for the usual coordinate networks: a static
field over a 3D bounding box and a dynamic field with an extra time axis
over tau in [0, 1]. Pre-activation values are stored per voxel and
interpolated (tri-/quadrilinearly) before the activation is applied,
which keeps gradients cheap and outputs positive:

  density, IR intensity  -> softplus   (>= 0)
  rgb radiance           -> sigmoid * rgb_max
  blend weight b         -> sigmoid    (in [0, 1])

Sampling outside the bounding box returns vacuum (all zeros); time is
clamped to [0, 1]. Everything is differentiable w.r.t. both the voxel
parameters and the query positions (needed for pose refinement).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

DEFAULT_INIT_SIGMA = 0.05  # m^-1, near-transparent start
DEFAULT_INIT_IR = 0.5

_CHECKPOINT_MAGIC = b"PHFC"
_CHECKPOINT_VERSION = 1


class FieldSample(NamedTuple):
    """Activated per-point field outputs (batched tensors)."""

    sigma: torch.Tensor   # (N,) per-meter density
    rgb: torch.Tensor     # (N, 3) scattered radiance
    ir: torch.Tensor      # (N,) reflected radiant intensity
    blend: torch.Tensor   # (N,) dynamic blend weight; 0 for static samples


def softplus_inv(y: float) -> float:
    """Inverse of softplus for positive y."""
    if y <= 0:
        raise ValueError("softplus output is strictly positive")
    return float(np.log(np.expm1(y)))


def _interp_weights(u: torch.Tensor, size: int):
    """1-D linear interpolation indices/weight for coordinates in [0, size-1]."""
    u = u.clamp(0.0, float(size - 1))
    i0 = u.floor().long().clamp(0, max(size - 2, 0))
    i1 = (i0 + 1).clamp(max=size - 1)
    frac = u - i0.to(u.dtype)
    return i0, i1, frac


def _trilinear(flat_values: torch.Tensor, res, u: torch.Tensor,
               base_index: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Trilinear interpolation on a flattened (nx*ny*nz, C) grid.

    ``u`` holds per-point grid coordinates (N, 3); ``base_index`` offsets
    the flat index (used for the time axis of dynamic grids).
    """
    nx, ny, nz = res
    ix0, ix1, fx = _interp_weights(u[:, 0], nx)
    iy0, iy1, fy = _interp_weights(u[:, 1], ny)
    iz0, iz1, fz = _interp_weights(u[:, 2], nz)

    def flat(ix, iy, iz):
        idx = (ix * ny + iy) * nz + iz
        if base_index is not None:
            idx = idx + base_index
        return flat_values[idx]

    wx0, wy0, wz0 = 1.0 - fx, 1.0 - fy, 1.0 - fz
    out = (flat(ix0, iy0, iz0) * (wx0 * wy0 * wz0)[:, None]
           + flat(ix0, iy0, iz1) * (wx0 * wy0 * fz)[:, None]
           + flat(ix0, iy1, iz0) * (wx0 * fy * wz0)[:, None]
           + flat(ix0, iy1, iz1) * (wx0 * fy * fz)[:, None]
           + flat(ix1, iy0, iz0) * (fx * wy0 * wz0)[:, None]
           + flat(ix1, iy0, iz1) * (fx * wy0 * fz)[:, None]
           + flat(ix1, iy1, iz0) * (fx * fy * wz0)[:, None]
           + flat(ix1, iy1, iz1) * (fx * fy * fz)[:, None])
    return out


class _GridFieldBase(nn.Module):
    def __init__(self, resolution, bbox_min, bbox_max, rgb_max):
        super().__init__()
        resolution = tuple(int(r) for r in resolution)
        if len(resolution) != 3 or any(r < 1 for r in resolution):
            raise ValueError(f"bad grid resolution {resolution}")
        self.resolution = resolution
        bbox_min = torch.as_tensor(bbox_min, dtype=torch.float64)
        bbox_max = torch.as_tensor(bbox_max, dtype=torch.float64)
        if not torch.all(bbox_max > bbox_min):
            raise ValueError("bounding box must have positive extent")
        self.register_buffer("bbox_min", bbox_min)
        self.register_buffer("bbox_max", bbox_max)
        self.rgb_max = float(rgb_max)

    def _grid_coords(self, x: torch.Tensor) -> torch.Tensor:
        res = torch.tensor([r - 1 for r in self.resolution],
                           dtype=x.dtype, device=x.device)
        return (x - self.bbox_min) / (self.bbox_max - self.bbox_min) * res

    def _inside(self, x: torch.Tensor) -> torch.Tensor:
        return ((x >= self.bbox_min) & (x <= self.bbox_max)).all(dim=-1)

    @torch.no_grad()
    def perturb_(self, rng: np.random.Generator, std: float = 1.0):
        """Add gaussian noise to every pre-activation parameter (test helper)."""
        for p in self.parameters():
            p += torch.from_numpy(rng.normal(0.0, std, size=tuple(p.shape)))
        return self


class StaticGridField(_GridFieldBase):
    """Time-independent density / rgb / IR grid."""

    def __init__(self, resolution, bbox_min, bbox_max, rgb_max: float = 1.0,
                 init_sigma: float = DEFAULT_INIT_SIGMA,
                 init_ir: float = DEFAULT_INIT_IR):
        super().__init__(resolution, bbox_min, bbox_max, rgb_max)
        nx, ny, nz = self.resolution
        self.density_pre = nn.Parameter(torch.full(
            (nx, ny, nz), softplus_inv(init_sigma), dtype=torch.float64))
        self.rgb_pre = nn.Parameter(torch.zeros(nx, ny, nz, 3, dtype=torch.float64))
        self.ir_pre = nn.Parameter(torch.full(
            (nx, ny, nz), softplus_inv(init_ir), dtype=torch.float64))

    def sample(self, x: torch.Tensor) -> FieldSample:
        """Sample at world positions x (N, 3)."""
        values = torch.cat([self.density_pre.unsqueeze(-1), self.rgb_pre,
                            self.ir_pre.unsqueeze(-1)], dim=-1)
        flat = values.reshape(-1, values.shape[-1])
        pre = _trilinear(flat, self.resolution, self._grid_coords(x))
        inside = self._inside(x).to(x.dtype)
        sigma = F.softplus(pre[:, 0]) * inside
        rgb = torch.sigmoid(pre[:, 1:4]) * self.rgb_max * inside[:, None]
        ir = F.softplus(pre[:, 4]) * inside
        return FieldSample(sigma, rgb, ir, torch.zeros_like(sigma))


class DynamicGridField(_GridFieldBase):
    """Time-conditioned grid with a per-voxel-per-timestep blend channel."""

    def __init__(self, resolution, time_resolution, bbox_min, bbox_max,
                 rgb_max: float = 1.0, init_sigma: float = DEFAULT_INIT_SIGMA,
                 init_ir: float = DEFAULT_INIT_IR):
        super().__init__(resolution, bbox_min, bbox_max, rgb_max)
        nt = int(time_resolution)
        if nt < 1:
            raise ValueError("time resolution must be >= 1")
        self.time_resolution = nt
        nx, ny, nz = self.resolution
        self.density_pre = nn.Parameter(torch.full(
            (nt, nx, ny, nz), softplus_inv(init_sigma), dtype=torch.float64))
        self.rgb_pre = nn.Parameter(torch.zeros(nt, nx, ny, nz, 3, dtype=torch.float64))
        self.ir_pre = nn.Parameter(torch.full(
            (nt, nx, ny, nz), softplus_inv(init_ir), dtype=torch.float64))
        self.blend_pre = nn.Parameter(torch.zeros(nt, nx, ny, nz, dtype=torch.float64))
        # When set, overrides the activated blend weight everywhere (used to
        # pin b=0 and check the static-endpoint equivalence exactly).
        self.blend_override: Optional[float] = None

    def sample(self, x: torch.Tensor, tau) -> FieldSample:
        """Sample at world positions x (N, 3) and times tau (scalar or (N,))."""
        nt = self.time_resolution
        nx, ny, nz = self.resolution
        tau = torch.as_tensor(tau, dtype=x.dtype, device=x.device)
        tau = tau.clamp(0.0, 1.0).expand(x.shape[0])

        values = torch.cat([self.density_pre.unsqueeze(-1), self.rgb_pre,
                            self.ir_pre.unsqueeze(-1), self.blend_pre.unsqueeze(-1)],
                           dim=-1)
        flat = values.reshape(-1, values.shape[-1])
        u = self._grid_coords(x)
        voxels = nx * ny * nz
        it0, it1, ft = _interp_weights(tau * (nt - 1), nt)
        pre0 = _trilinear(flat, self.resolution, u, base_index=it0 * voxels)
        pre1 = _trilinear(flat, self.resolution, u, base_index=it1 * voxels)
        pre = pre0 * (1.0 - ft)[:, None] + pre1 * ft[:, None]

        inside = self._inside(x).to(x.dtype)
        sigma = F.softplus(pre[:, 0]) * inside
        rgb = torch.sigmoid(pre[:, 1:4]) * self.rgb_max * inside[:, None]
        ir = F.softplus(pre[:, 4]) * inside
        if self.blend_override is not None:
            blend = torch.full_like(sigma, float(self.blend_override))
        else:
            blend = torch.sigmoid(pre[:, 5]) * inside
        return FieldSample(sigma, rgb, ir, blend)


@dataclass
class RadianceFieldSet:
    """Static field plus optional dynamic field rendered with blending."""

    static: StaticGridField
    dynamic: Optional[DynamicGridField] = None

    @property
    def is_dynamic(self) -> bool:
        return self.dynamic is not None

    def parameters(self):
        yield from self.static.parameters()
        if self.dynamic is not None:
            yield from self.dynamic.parameters()


def blend_samples(stat: FieldSample, dyn: FieldSample, delta: torch.Tensor):
    """Blend static/dynamic samples into (alpha, premultiplied rgb, premultiplied ir).

    alpha_blend = (1-b)*alpha_stat + b*alpha_dyn with alpha = 1-exp(-sigma*delta);
    rgb/ir are returned premultiplied by their opacities, blended the same way.
    """
    alpha_stat = opacity_from_density(stat.sigma, delta)
    alpha_dyn = opacity_from_density(dyn.sigma, delta)
    b = dyn.blend
    w_stat, w_dyn = (1.0 - b) * alpha_stat, b * alpha_dyn
    alpha = w_stat + w_dyn
    rgb = w_stat[..., None] * stat.rgb + w_dyn[..., None] * dyn.rgb
    ir = w_stat * stat.ir + w_dyn * dyn.ir
    return alpha, rgb, ir


def opacity_from_density(sigma, delta):
    """alpha = 1 - exp(-sigma * delta) for sigma, delta >= 0."""
    sigma = torch.as_tensor(sigma)
    delta = torch.as_tensor(delta, dtype=sigma.dtype)
    if torch.any(sigma < 0) or torch.any(delta < 0):
        raise ValueError("sigma and delta must be non-negative")
    return -torch.expm1(-sigma * delta)


# ---------------------------------------------------------------------------
# Checkpoints: 4-byte magic, u32 header length, JSON header, then raw
# little-endian float32 parameter blocks in header-declared order.

def _field_header(field) -> dict:
    head = {
        "resolution": list(field.resolution),
        "bbox_min": field.bbox_min.tolist(),
        "bbox_max": field.bbox_max.tolist(),
        "rgb_max": field.rgb_max,
        "activations": {"density": "softplus", "rgb": "scaled_sigmoid",
                        "ir": "softplus", "blend": "sigmoid"},
        "channels": ["density_pre", "rgb_pre", "ir_pre"],
    }
    if isinstance(field, DynamicGridField):
        head["time_resolution"] = field.time_resolution
        head["channels"].append("blend_pre")
    return head


def save_checkpoint(path, fieldset: RadianceFieldSet, extras: Optional[dict] = None):
    """Serialize a field set (plus JSON-serializable extras) to ``path``."""
    header = {
        "schema_version": _CHECKPOINT_VERSION,
        "static": _field_header(fieldset.static),
        "dynamic": _field_header(fieldset.dynamic) if fieldset.dynamic else None,
        "extras": extras or {},
    }
    blocks = []
    for field, key in ((fieldset.static, "static"), (fieldset.dynamic, "dynamic")):
        if field is None:
            continue
        for name in header[key]["channels"]:
            blocks.append(getattr(field, name).detach().numpy().astype("<f4"))
    head_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(head_bytes)))
        f.write(head_bytes)
        for block in blocks:
            f.write(block.tobytes())


def load_checkpoint(path):
    """Load a checkpoint; returns (RadianceFieldSet, extras dict)."""
    with open(path, "rb") as f:
        if f.read(4) != _CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a field checkpoint")
        (head_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(head_len).decode("utf-8"))
        if header.get("schema_version") != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('schema_version')}")

        def read_block(shape):
            count = int(np.prod(shape))
            data = np.fromfile(f, dtype="<f4", count=count)
            if data.size != count:
                raise ValueError("checkpoint payload truncated")
            return torch.from_numpy(data.astype(np.float64)).reshape(shape)

        sh = header["static"]
        static = StaticGridField(sh["resolution"], sh["bbox_min"], sh["bbox_max"],
                                 rgb_max=sh["rgb_max"])
        nx, ny, nz = static.resolution
        with torch.no_grad():
            static.density_pre.copy_(read_block((nx, ny, nz)))
            static.rgb_pre.copy_(read_block((nx, ny, nz, 3)))
            static.ir_pre.copy_(read_block((nx, ny, nz)))

        dynamic = None
        if header["dynamic"] is not None:
            dh = header["dynamic"]
            dynamic = DynamicGridField(dh["resolution"], dh["time_resolution"],
                                       dh["bbox_min"], dh["bbox_max"],
                                       rgb_max=dh["rgb_max"])
            nt = dynamic.time_resolution
            nx, ny, nz = dynamic.resolution
            with torch.no_grad():
                dynamic.density_pre.copy_(read_block((nt, nx, ny, nz)))
                dynamic.rgb_pre.copy_(read_block((nt, nx, ny, nz, 3)))
                dynamic.ir_pre.copy_(read_block((nt, nx, ny, nz)))
                dynamic.blend_pre.copy_(read_block((nt, nx, ny, nz)))

    return RadianceFieldSet(static, dynamic), header.get("extras", {})

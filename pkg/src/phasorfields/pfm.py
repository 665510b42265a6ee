"""PFM float-image reader/writer plus PNG previews.

Standard PFM covers 1 channel (``Pf``) and 3 channels (``PF``). Phasor
images need 2 channels (re, im) and raw ToF quads need 4, so those use
the private header tags ``PF2``/``PF4`` with the otherwise unchanged
layout: dims line, scale line (negative = little-endian), raw float32
rows bottom-up. 1- and 3-channel files stay standard-compatible.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

_TAG_BY_CHANNELS = {1: b"Pf", 2: b"PF2", 3: b"PF", 4: b"PF4"}
_CHANNELS_BY_TAG = {v: k for k, v in _TAG_BY_CHANNELS.items()}


def write_pfm(path, image: np.ndarray, scale: float = 1.0) -> None:
    """Write an (H, W) or (H, W, C) float array as little-endian PFM."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in _TAG_BY_CHANNELS:
        raise ValueError(f"unsupported PFM shape {image.shape}")
    if scale == 0.0:
        # sign of the scale line carries endianness, so zero is unreadable
        raise ValueError("PFM scale must be nonzero")
    height, width, channels = image.shape
    with open(path, "wb") as f:
        f.write(_TAG_BY_CHANNELS[channels] + b"\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(f"{-abs(scale)}\n".encode("ascii"))
        # PFM stores rows bottom-up.
        np.ascontiguousarray(image[::-1], dtype="<f4").tofile(f)


def read_pfm(path) -> tuple[np.ndarray, float]:
    """Read a PFM file; returns ((H, W, C) float32 array, scale)."""
    with open(path, "rb") as f:
        tag = f.readline().rstrip()
        if tag not in _CHANNELS_BY_TAG:
            raise ValueError(f"not a PFM file (header {tag!r})")
        channels = _CHANNELS_BY_TAG[tag]
        dims = f.readline().decode("ascii").split()
        if len(dims) != 2:
            raise ValueError("malformed PFM dimensions line")
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().decode("ascii"))
        endian = "<" if scale < 0 else ">"
        data = np.fromfile(f, dtype=endian + "f4", count=width * height * channels)
    if data.size != width * height * channels:
        raise ValueError("PFM payload truncated")
    image = data.reshape(height, width, channels)[::-1]
    return np.ascontiguousarray(image, dtype=np.float32), abs(scale)


def signed_preview(component: np.ndarray) -> np.ndarray:
    """Map a signed channel to an 8-bit image: positive red, negative blue."""
    component = np.asarray(component, dtype=float)
    peak = np.max(np.abs(component)) or 1.0
    norm = component / peak
    rgb = np.zeros(component.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.clip(np.maximum(norm, 0.0) * 255, 0, 255).astype(np.uint8)
    rgb[..., 2] = np.clip(np.maximum(-norm, 0.0) * 255, 0, 255).astype(np.uint8)
    return rgb


def write_preview_png(path, image: np.ndarray, signed: bool = False) -> None:
    """8-bit preview: signed channels use the red/blue convention,
    otherwise values are clipped to [0, 1] grayscale/RGB."""
    image = np.asarray(image, dtype=float)
    if signed:
        if image.ndim == 3 and image.shape[2] in (1, 2):
            panels = [signed_preview(image[:, :, c]) for c in range(image.shape[2])]
            out = np.concatenate(panels, axis=1)
        else:
            out = signed_preview(np.squeeze(image))
    else:
        if image.ndim == 3 and image.shape[2] == 1:
            image = image[:, :, 0]
        peak = np.max(image)
        if peak > 1.0:
            image = image / peak
        out = np.clip(image * 255, 0, 255).astype(np.uint8)
    Image.fromarray(out).save(path)

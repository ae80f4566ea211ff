"""Orthographic sphere renderer under a single directional light.

The camera looks down ``-z`` so every visible point is seen along
``wo = (0, 0, 1)``.  Radiance is ``f_r * cos(theta_i) * intensity``, scaled by
``exposure``, gamma encoded and clamped to [0, 1].

File formats written here:

* PPM: ``b"P6\\n<width> <height>\\n255\\n"`` followed by 8-bit RGB rows, top row first.
* Float dump: ``b"NMFI"``, then little-endian u32 version (1), width, height,
  channels, then ``height * width * channels`` little-endian float64 values in
  row-major ``(row, column, channel)`` order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .brdf import GRID_SHAPE, DirectionPair, MeasuredBrdf, io_to_halfdiff
from .errors import DataError
from .metrics import Image

FLOAT_MAGIC = b"NMFI"
FLOAT_VERSION = 1


@dataclass(frozen=True)
class RenderConfig:
    width: int = 256
    height: int = 256
    light_dir: tuple = (-1.0 / 6 ** 0.5, 1.0 / 6 ** 0.5, 2.0 / 6 ** 0.5)
    intensity: float = 1.0
    exposure: float = 1.0
    gamma: float = 2.2
    background: float = 0.0

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("image size must be at least 16x16")
        if abs(np.linalg.norm(self.light_dir) - 1.0) > 1e-9:
            raise ValueError("light direction must be unit length")
        if self.gamma <= 0 or self.intensity < 0 or self.exposure < 0:
            raise ValueError("gamma must be positive, intensity and exposure nonnegative")
        if not 0.0 <= self.background <= 1.0:
            raise ValueError("background must lie in [0, 1]")
        object.__setattr__(self, "light_dir", tuple(float(v) for v in self.light_dir))


def _evaluator(brdf):
    if isinstance(brdf, np.ndarray):
        if brdf.shape != GRID_SHAPE + (3,):
            raise ValueError(f"array BRDFs must be full tabulations {GRID_SHAPE + (3,)}")
        brdf = MeasuredBrdf(brdf)
    if hasattr(brdf, "eval"):
        return brdf.eval
    if callable(brdf):
        return brdf
    raise TypeError(f"cannot evaluate {type(brdf).__name__} as a BRDF")


def sphere_geometry(cfg: RenderConfig):
    """Pixel mask and unit normals of the visible hemisphere."""
    x = (np.arange(cfg.width) + 0.5) / cfg.width * 2.0 - 1.0
    y = 1.0 - (np.arange(cfg.height) + 0.5) / cfg.height * 2.0
    X, Y = np.meshgrid(x, y)
    r2 = X * X + Y * Y
    mask = r2 < 1.0
    n = np.stack([X[mask], Y[mask], np.sqrt(1.0 - r2[mask])], axis=-1)
    return mask, n


def _local(v, t, b, n):
    return np.stack([np.sum(v * t, -1), np.sum(v * b, -1), np.sum(v * n, -1)], axis=-1)


def radiance(brdf, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Linear radiance image ``(height, width, 3)`` before exposure and tone mapping."""
    f = _evaluator(brdf)
    mask, n = sphere_geometry(cfg)
    # tangent frame; n_z > 0 inside the disk so t is never degenerate
    t = np.stack([n[:, 2], np.zeros(len(n)), -n[:, 0]], axis=-1)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    b = np.cross(n, t)
    light = np.broadcast_to(np.asarray(cfg.light_dir), n.shape)
    view = np.broadcast_to(np.array([0.0, 0.0, 1.0]), n.shape)
    wi, wo = _local(light, t, b, n), _local(view, t, b, n)
    cos_i = wi[:, 2]
    lit = (cos_i > 0) & (wo[:, 2] > 0) & (np.linalg.norm(wi + wo, axis=-1) > 1e-9)
    out = np.zeros((cfg.height, cfg.width, 3))
    vals = np.zeros((len(n), 3))
    if lit.any():
        ang, _ = io_to_halfdiff(DirectionPair(wi[lit], wo[lit]))
        rgb = np.asarray(f(*ang), dtype=np.float64)
        vals[lit] = rgb * (cos_i[lit, None] * cfg.intensity)
    out[mask] = vals
    return out


def render_sphere(brdf, cfg: RenderConfig = RenderConfig()) -> Image:
    L = radiance(brdf, cfg) * cfg.exposure
    mask, _ = sphere_geometry(cfg)
    px = np.clip(np.power(np.maximum(L, 0.0), 1.0 / cfg.gamma), 0.0, 1.0)
    px[~mask] = cfg.background
    return Image(px)


def _px(img):
    return img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def ppm_bytes(img) -> bytes:
    px = _px(img)
    h, w = px.shape[:2]
    data = np.round(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes()


def save_ppm(path, img) -> Path:
    path = Path(path)
    path.write_bytes(ppm_bytes(img))
    return path


def float_bytes(img) -> bytes:
    px = _px(img)
    h, w, c = px.shape
    return FLOAT_MAGIC + struct.pack("<IIII", FLOAT_VERSION, w, h, c) + px.astype("<f8").tobytes()


def parse_float_image(data: bytes) -> Image:
    if len(data) < 20 or data[:4] != FLOAT_MAGIC:
        raise DataError("not a float image dump (bad magic)")
    version, w, h, c = struct.unpack_from("<IIII", data, 4)
    if version != FLOAT_VERSION:
        raise DataError(f"unsupported float image version {version}")
    if len(data) != 20 + 8 * w * h * c:
        raise DataError("float image payload size does not match header")
    return Image(np.frombuffer(data, dtype="<f8", offset=20).reshape(h, w, c))


def save_float_image(path, img) -> Path:
    path = Path(path)
    path.write_bytes(float_bytes(img))
    return path


def load_float_image(path) -> Image:
    return parse_float_image(Path(path).read_bytes())

"""Tabulated isotropic BRDFs on the MERL half/difference grid.

Angles follow the Rusinkiewicz parametrization: the half vector ``h`` and the
difference vector ``d`` (``wi`` expressed in the frame where ``h`` is the
pole).  Isotropy drops ``phi_h``; reciprocity folds ``phi_d`` into ``[0, pi)``.

Everything here is vectorized: angle and direction fields may be scalars or
arrays of matching shape.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import BelowHorizon, DegenerateHalfVector, HeaderMismatch, MerlFormatError, Truncated

N_THETA_H = 90
N_THETA_D = 90
N_PHI_D = 180
GRID_SHAPE = (N_THETA_H, N_THETA_D, N_PHI_D)
N_CELLS = N_THETA_H * N_THETA_D * N_PHI_D  # 1,458,000

# Per-channel factors applied when reading raw MERL samples.
MERL_SCALE = np.array([1.0 / 1500.0, 1.15 / 1500.0, 1.66 / 1500.0])

HALF_PI = 0.5 * np.pi
HORIZON_TOL = 1e-9

MATERIAL_TYPES = (
    "acrylic", "alum-bronze", "alumina-oxide", "aluminium", "aventurnine", "brass",
    "wood", "chrome-steel", "chrome", "colonial-maple", "color-changing-paint",
    "delrin", "diffuse-ball", "fabric", "felt", "fruitwood", "grease-covered-steel",
    "hematite", "ipswich-pine", "jasper", "latex", "marble", "metallic-paint",
    "natural", "neoprene-rubber", "nickel", "nylon", "obsidian", "oxidized-steel",
    "paint", "phenolic", "pickled-oak", "plastic", "polyethylene",
    "polyurethane-foam", "pvc", "rubber", "silicon-nitrade", "soft-plastic",
    "special-walnut", "specular-fabric", "specular-phenolic", "specular-plastic",
    "stainless-steel", "steel", "teflon", "tungsten-carbide", "two-layer",
)


def infer_type_id(name: str) -> Optional[int]:
    """Best-effort type lookup from a MERL-style name such as ``blue-acrylic``.

    The longest vocabulary entry that ends the name wins, so
    ``specular-blue-phenolic`` resolves to ``phenolic`` while
    ``yellow-specular-phenolic`` resolves to ``specular-phenolic``.
    """
    stem = name.lower().replace("_", "-")
    if stem.endswith(".binary"):
        stem = stem[: -len(".binary")]
    best = None
    for idx, t in enumerate(MATERIAL_TYPES):
        if (stem == t or stem.endswith("-" + t)) and (best is None or len(t) > len(MATERIAL_TYPES[best])):
            best = idx
    return best


class HalfDiffAngles(NamedTuple):
    theta_h: np.ndarray
    theta_d: np.ndarray
    phi_d: np.ndarray


class DirectionPair(NamedTuple):
    wi: np.ndarray
    wo: np.ndarray

    @property
    def cos_theta_i(self):
        return self.wi[..., 2]

    @property
    def theta_i(self):
        wi = np.asarray(self.wi)
        return np.arctan2(np.hypot(wi[..., 0], wi[..., 1]), wi[..., 2])


def _rot_z(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([c * x - s * y, s * x + c * y, z], axis=-1)


def _rot_y(v, angle):
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([c * x + s * z, y, -s * x + c * z], axis=-1)


def _wrap(angle, period):
    out = np.mod(angle, period)
    return np.where(out >= period, out - period, out)


def io_to_halfdiff(pair: DirectionPair, fold: bool = True):
    """Map an incident/outgoing pair to ``(HalfDiffAngles, phi_h)``.

    With ``fold=False`` the difference azimuth stays in ``[0, 2pi)`` so the
    map is exactly invertible by :func:`halfdiff_to_io`; folding identifies a
    pair with its swap ``wi <-> wo``.
    """
    wi = np.asarray(pair.wi, dtype=float)
    wo = np.asarray(pair.wo, dtype=float)
    h = wi + wo
    norm = np.linalg.norm(h, axis=-1)
    if np.any(norm < 1e-9):
        raise DegenerateHalfVector("wi + wo vanishes; the half vector is undefined")
    h = h / norm[..., None]
    theta_h = np.arctan2(np.hypot(h[..., 0], h[..., 1]), h[..., 2])
    phi_h = np.arctan2(h[..., 1], h[..., 0])
    d = _rot_y(_rot_z(wi, -phi_h), -theta_h)
    theta_d = np.arctan2(np.hypot(d[..., 0], d[..., 1]), d[..., 2])
    phi_d = _wrap(np.arctan2(d[..., 1], d[..., 0]), 2 * np.pi)
    if fold:
        phi_d = _wrap(phi_d, np.pi)
    return HalfDiffAngles(theta_h, theta_d, phi_d), phi_h


def _halfdiff_to_io(theta_h, theta_d, phi_d, phi_h=0.0):
    theta_h, theta_d, phi_d, phi_h = np.broadcast_arrays(
        np.asarray(theta_h, float), np.asarray(theta_d, float),
        np.asarray(phi_d, float), np.asarray(phi_h, float))
    sd = np.sin(theta_d)
    d = np.stack([sd * np.cos(phi_d), sd * np.sin(phi_d), np.cos(theta_d)], axis=-1)
    wi = _rot_z(_rot_y(d, theta_h), phi_h)
    h = np.stack([np.sin(theta_h) * np.cos(phi_h), np.sin(theta_h) * np.sin(phi_h), np.cos(theta_h)], axis=-1)
    wo = 2.0 * np.sum(wi * h, axis=-1, keepdims=True) * h - wi
    return wi, wo


def halfdiff_to_io(angles: HalfDiffAngles, phi_h=0.0) -> DirectionPair:
    """Inverse Rusinkiewicz map; ``phi_h`` defaults to the canonical 0."""
    wi, wo = _halfdiff_to_io(*angles, phi_h=phi_h)
    if np.any(wi[..., 2] < -HORIZON_TOL) or np.any(wo[..., 2] < -HORIZON_TOL):
        raise BelowHorizon("configuration places a direction below the horizon")
    return DirectionPair(wi, wo)


def grid_index(angles: HalfDiffAngles):
    """Nearest MERL cell ``(i, j, k)``; theta_h uses the square-root warp."""
    theta_h, theta_d, phi_d = (np.asarray(a, dtype=float) for a in angles)
    i = np.floor(np.sqrt(np.maximum(theta_h, 0.0) / HALF_PI) * N_THETA_H)
    j = np.floor(theta_d / HALF_PI * N_THETA_D)
    k = np.floor(phi_d / np.pi * N_PHI_D)
    i = np.clip(i, 0, N_THETA_H - 1).astype(np.intp)
    j = np.clip(j, 0, N_THETA_D - 1).astype(np.intp)
    k = np.clip(k, 0, N_PHI_D - 1).astype(np.intp)
    return i, j, k


def cell_center_angles(i, j, k) -> HalfDiffAngles:
    i, j, k = (np.asarray(a, dtype=float) for a in (i, j, k))
    theta_h = ((i + 0.5) / N_THETA_H) ** 2 * HALF_PI
    theta_d = (j + 0.5) / N_THETA_D * HALF_PI
    phi_d = (k + 0.5) / N_PHI_D * np.pi
    return HalfDiffAngles(theta_h, theta_d, phi_d)


@lru_cache(maxsize=1)
def grid_centers() -> HalfDiffAngles:
    """Cell-center angles for the whole grid, each of shape ``GRID_SHAPE``."""
    i, j, k = np.meshgrid(np.arange(N_THETA_H), np.arange(N_THETA_D), np.arange(N_PHI_D), indexing="ij")
    out = cell_center_angles(i, j, k)
    for a in out:
        a.flags.writeable = False
    return out


@lru_cache(maxsize=1)
def valid_mask() -> np.ndarray:
    """Cells whose center reconstructs to an above-horizon direction pair."""
    wi, wo = _halfdiff_to_io(*grid_centers())
    mask = (wi[..., 2] >= -HORIZON_TOL) & (wo[..., 2] >= -HORIZON_TOL)
    mask.flags.writeable = False
    return mask


@lru_cache(maxsize=1)
def valid_angles() -> HalfDiffAngles:
    mask = valid_mask()
    out = HalfDiffAngles(*(a[mask] for a in grid_centers()))
    for a in out:
        a.flags.writeable = False
    return out


@lru_cache(maxsize=1)
def cos_theta_i_grid() -> np.ndarray:
    """``max(cos theta_i, 0)`` at each valid cell center (``phi_h = 0``)."""
    wi, _ = _halfdiff_to_io(*valid_angles())
    out = np.maximum(wi[..., 2], 0.0)
    out.flags.writeable = False
    return out


def n_valid_cells() -> int:
    return int(valid_mask().sum())


@dataclass(frozen=True)
class MeasuredBrdf:
    """Dense RGB tabulation over the 90 x 90 x 180 half/diff grid (sr^-1)."""

    values: np.ndarray
    name: str = ""
    type_id: Optional[int] = None
    _valid: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != GRID_SHAPE + (3,):
            raise ValueError(f"expected grid shape {GRID_SHAPE + (3,)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("tabulation contains non-finite values")
        if np.any(values < 0):
            raise ValueError("tabulation contains negative reflectance")
        if self.type_id is not None and not 0 <= self.type_id < len(MATERIAL_TYPES):
            raise ValueError(f"type_id {self.type_id} out of range")
        if values is self.values:
            values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def eval(self, theta_h, theta_d, phi_d):
        return self.values[grid_index((theta_h, theta_d, phi_d))]

    def tabulate(self) -> np.ndarray:
        return self.values

    def valid_values(self) -> np.ndarray:
        if self._valid is None:
            object.__setattr__(self, "_valid", self.values[valid_mask()])
        return self._valid

    def samples(self):
        """Training samples: angles and targets for every valid cell."""
        return valid_angles(), self.valid_values()

    def with_values(self, values, name=None):
        return MeasuredBrdf(values, name=self.name if name is None else name, type_id=self.type_id)


def eval_measured(b: MeasuredBrdf, angles: HalfDiffAngles) -> np.ndarray:
    return b.eval(*angles)


def parse_merl(data: bytes, name: str = "", type_id: Optional[int] = None) -> MeasuredBrdf:
    if len(data) < 12:
        raise Truncated("file shorter than the 12-byte header")
    dims = struct.unpack_from("<3i", data)
    if dims[0] * dims[1] * dims[2] != N_CELLS:
        raise HeaderMismatch(f"header dims {dims} do not describe {N_CELLS} cells")
    n = 3 * N_CELLS
    expected = 12 + 8 * n
    if len(data) < expected:
        raise Truncated(f"payload has {len(data) - 12} bytes, expected {8 * n}")
    if len(data) > expected:
        raise MerlFormatError(f"{len(data) - expected} trailing bytes after payload")
    raw = np.frombuffer(data, dtype="<f8", count=n, offset=12).reshape(3, *GRID_SHAPE)
    if not np.all(np.isfinite(raw)):
        raise MerlFormatError("payload contains non-finite samples")
    values = np.moveaxis(raw, 0, -1) * MERL_SCALE
    values = np.where(values < 0, 0.0, values)
    return MeasuredBrdf(values, name=name, type_id=type_id)


def write_merl(b: MeasuredBrdf) -> bytes:
    raw = np.moveaxis(b.values / MERL_SCALE, -1, 0)
    header = struct.pack("<3i", *GRID_SHAPE)
    return header + np.ascontiguousarray(raw, dtype="<f8").tobytes()


def read_merl(path, type_id: Optional[int] = None) -> MeasuredBrdf:
    path = Path(path)
    name = path.name[: -len(".binary")] if path.name.endswith(".binary") else path.stem
    if type_id is None:
        type_id = infer_type_id(name)
    return parse_merl(path.read_bytes(), name=name, type_id=type_id)


def save_merl(path, b: MeasuredBrdf) -> None:
    Path(path).write_bytes(write_merl(b))


def tabulate_function(fn: Callable, name: str = "", type_id: Optional[int] = None) -> MeasuredBrdf:
    """Sample ``fn(theta_h, theta_d, phi_d) -> (..., 3)`` at every cell center."""
    tab = np.asarray(fn(*grid_centers()), dtype=np.float64)
    tab = np.broadcast_to(tab, GRID_SHAPE + (3,))
    return MeasuredBrdf(np.maximum(tab, 0.0), name=name, type_id=type_id)


@dataclass(frozen=True)
class AnalyticBrdf:
    """Closed-form BRDF ``fn(theta_h, theta_d, phi_d) -> (..., 3)``, evaluated exactly."""

    fn: Callable
    name: str = ""
    type_id: Optional[int] = None

    def eval(self, theta_h, theta_d, phi_d):
        shape = np.broadcast(np.asarray(theta_h), np.asarray(theta_d), np.asarray(phi_d)).shape
        rgb = np.asarray(self.fn(theta_h, theta_d, phi_d), dtype=np.float64)
        if rgb.ndim == 0 or rgb.shape[-1] != 3:
            rgb = rgb[..., None]
        return np.maximum(np.broadcast_to(rgb, shape + (3,)), 0.0)

    def valid_values(self) -> np.ndarray:
        return self.eval(*valid_angles())

    def tabulate(self) -> np.ndarray:
        return self.eval(*grid_centers())

    def to_measured(self) -> MeasuredBrdf:
        return MeasuredBrdf(self.tabulate(), name=self.name, type_id=self.type_id)


def constant_brdf(c, name: str = "") -> MeasuredBrdf:
    rgb = np.broadcast_to(np.asarray(c, dtype=float), (3,))
    return MeasuredBrdf(np.broadcast_to(rgb, GRID_SHAPE + (3,)).copy(), name=name or f"constant-{rgb[0]:g}")


def grid_values(b) -> np.ndarray:
    """``(n_valid, 3)`` reflectance of any evaluable at the valid cell centers."""
    if hasattr(b, "valid_values"):
        return b.valid_values()
    if isinstance(b, np.ndarray) and b.shape == GRID_SHAPE + (3,):
        return b[valid_mask()]
    return np.asarray(b.eval(*valid_angles()))


def tabulation(b) -> np.ndarray:
    if hasattr(b, "tabulate"):
        return b.tabulate()
    if isinstance(b, np.ndarray) and b.shape == GRID_SHAPE + (3,):
        return b
    return np.asarray(b.eval(*grid_centers()))

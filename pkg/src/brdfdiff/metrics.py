"""Image distances, BRDF distances and set-level distributional metrics.

Set metrics take a pluggable distance: either a callable ``d(a, b)`` or one
of the tags in :data:`DISTANCES`.  Nearest-neighbour ties always resolve to
the lowest index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .brdf import cos_theta_i_grid, grid_values
from .errors import DimensionMismatch, EmptySet

K1, K2 = 0.01, 0.03

BRDF_TAGS = ("BRDF-L1", "BRDF-L1-Log", "MSL")
RENDER_TAGS = ("RMSE", "NegPSNR", "NegSSIM")
DISTANCES = BRDF_TAGS + RENDER_TAGS


@dataclass(frozen=True, eq=False)
class Image:
    """RGB image with values in [0, 1], stored ``(height, width, 3)`` in float64."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[-1] != 3:
            raise ValueError(f"expected (height, width, 3) pixels, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        if px.min(initial=0.0) < 0 or px.max(initial=0.0) > 1:
            raise ValueError("pixel values must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return self.pixels.shape[2]


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)


def _pair(a, b):
    a, b = _pixels(a), _pixels(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``+inf``."""
    e = rmse(a, b)
    if e == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / (e * e)))


def neg_psnr(a, b, peak: float = 1.0) -> float:
    return -psnr(a, b, peak)


def _ssim_channel(x, y, c1, c2, c3):
    n = x.size
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx = np.sum(dx * dx) / (n - 1)
    vy = np.sum(dy * dy) / (n - 1)
    cxy = np.sum(dx * dy) / (n - 1)
    sx, sy = np.sqrt(vx), np.sqrt(vy)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    con = (2 * sx * sy + c2) / (vx + vy + c2)
    struct = (cxy + c3) / (sx * sy + c3)
    return lum * con * struct


def ssim(a, b, dynamic_range: float = 1.0) -> float:
    """Whole-image SSIM per channel, averaged over channels (no sliding window)."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] * a.shape[1] < 2:
        raise ValueError("SSIM needs at least two pixels")
    c1 = (K1 * dynamic_range) ** 2
    c2 = (K2 * dynamic_range) ** 2
    c3 = c2 / 2
    vals = [_ssim_channel(a[..., c].ravel(), b[..., c].ravel(), c1, c2, c3) for c in range(a.shape[-1])]
    return float(np.mean(vals))


def neg_ssim(a, b) -> float:
    return -ssim(a, b)


# BRDF-space distances.  Features are the valid-cell reflectances, so the
# expectation is the unweighted mean over valid cells and channels.

def _grid(f) -> np.ndarray:
    return np.asarray(grid_values(f), dtype=np.float64)


def _mean_or_inf(x) -> float:
    with np.errstate(invalid="ignore", over="ignore"):
        v = float(np.mean(x))
    return v if np.isfinite(v) else math.inf


def d_brdf_l1(f, g) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return _mean_or_inf(np.abs(_grid(f) - _grid(g)))


def d_brdf_l1_log(f, g) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return _mean_or_inf(np.abs(np.log1p(_grid(f)) - np.log1p(_grid(g))))


def d_msl(f, g) -> float:
    c = cos_theta_i_grid()[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        return _mean_or_inf((np.log1p(_grid(f) * c) - np.log1p(_grid(g) * c)) ** 2)


def brdf_distance(tag: str, render_cfg=None) -> Callable:
    """Distance callable for ``tag``; render tags compare sphere renders."""
    if tag == "BRDF-L1":
        return d_brdf_l1
    if tag == "BRDF-L1-Log":
        return d_brdf_l1_log
    if tag == "MSL":
        return d_msl
    if tag in RENDER_TAGS:
        from .render import RenderConfig, render_sphere
        cfg = render_cfg or RenderConfig()
        img = {"RMSE": rmse, "NegPSNR": neg_psnr, "NegSSIM": neg_ssim}[tag]
        return lambda f, g: img(render_sphere(f, cfg), render_sphere(g, cfg))
    raise ValueError(f"unknown distance {tag!r}; choose from {DISTANCES}")


class _Features:
    """Precomputed per-item features so a distance matrix costs one pass per item."""

    def __init__(self, tag, render_cfg=None):
        self.tag = tag
        if tag in RENDER_TAGS:
            from .render import RenderConfig, render_sphere
            cfg = render_cfg or RenderConfig()
            self.feat = lambda f: render_sphere(f, cfg).pixels
            self.cmp = {"RMSE": rmse, "NegPSNR": neg_psnr, "NegSSIM": neg_ssim}[tag]
        else:
            c = cos_theta_i_grid()[:, None] if tag == "MSL" else None
            if tag == "BRDF-L1":
                self.feat = lambda f: _grid(f).astype(np.float32)
            elif tag == "BRDF-L1-Log":
                self.feat = lambda f: np.log1p(_grid(f)).astype(np.float32)
            else:
                self.feat = lambda f: np.log1p(_grid(f) * c).astype(np.float32)
            if tag == "MSL":
                self.cmp = lambda a, b: _mean_or_inf(np.square(a - b, dtype=np.float64))
            else:
                self.cmp = lambda a, b: _mean_or_inf(np.abs(a - b, dtype=np.float64))


def distance_matrix(R: Sequence, S: Sequence, d: Union[str, Callable], render_cfg=None) -> np.ndarray:
    """``D[i, j] = d(R[i], S[j])``."""
    if isinstance(d, str):
        fx = _Features(d, render_cfg)
        sf = [fx.feat(s) for s in S]
        D = np.empty((len(R), len(S)))
        for i, r in enumerate(R):
            rf = fx.feat(r)
            for j, s in enumerate(sf):
                D[i, j] = fx.cmp(rf, s)
        return D
    return np.array([[float(d(r, s)) for s in S] for r in R]).reshape(len(R), len(S))


def _check(R, S):
    if len(R) == 0 or len(S) == 0:
        raise EmptySet("reference and synthesized sets must be nonempty")


def mmd_from_matrix(D: np.ndarray) -> float:
    """Mean over references of the distance to the closest synthesized item."""
    if D.size == 0:
        raise EmptySet("empty distance matrix")
    with np.errstate(invalid="ignore"):
        v = float(np.mean(D.min(axis=1)))
    return v if not np.isnan(v) else math.inf


def cov_from_matrix(D: np.ndarray) -> float:
    """Fraction of references that are the nearest reference of some synthesized item."""
    if D.size == 0:
        raise EmptySet("empty distance matrix")
    return len(set(np.argmin(D, axis=0).tolist())) / D.shape[0]


def one_nna_from_matrices(D_rr: np.ndarray, D_rs: np.ndarray, D_ss: np.ndarray) -> float:
    """Leave-one-out 1-NN accuracy over the pooled set ``R + S``."""
    nr, ns = D_rs.shape
    if nr == 0 or ns == 0:
        raise EmptySet("empty distance matrix")
    full = np.block([[D_rr, D_rs], [D_rs.T, D_ss]]).astype(np.float64)
    np.fill_diagonal(full, np.inf)
    nn = np.argmin(full, axis=1)
    label = np.r_[np.zeros(nr, bool), np.ones(ns, bool)]
    return float(np.mean(label[nn] == label))


def mmd(R: Sequence, S: Sequence, d, render_cfg=None) -> float:
    _check(R, S)
    return mmd_from_matrix(distance_matrix(R, S, d, render_cfg))


def cov(R: Sequence, S: Sequence, d, render_cfg=None) -> float:
    _check(R, S)
    return cov_from_matrix(distance_matrix(R, S, d, render_cfg))


def one_nna(R: Sequence, S: Sequence, d, render_cfg=None) -> float:
    _check(R, S)
    return one_nna_from_matrices(distance_matrix(R, R, d, render_cfg), distance_matrix(R, S, d, render_cfg),
                                 distance_matrix(S, S, d, render_cfg))


@dataclass
class MetricReport:
    rows: list
    n_reference: int
    n_synthesized: int
    seed: Optional[int] = None

    def to_dict(self):
        return {"n_reference": self.n_reference, "n_synthesized": self.n_synthesized, "seed": self.seed,
                "metrics": self.rows}

    def table(self) -> str:
        tags = []
        for r in self.rows:
            if r["distance"] not in tags:
                tags.append(r["distance"])
        metrics = ["MMD", "COV", "1-NNA"]
        vals = {(r["metric"], r["distance"]): r["value"] for r in self.rows}
        lines = [f"{'metric':<8}{'distance':<14}{'value':>12}"]
        for m in metrics:
            for t in tags:
                if (m, t) in vals:
                    v = vals[(m, t)]
                    s = f"{100 * v:.1f}%" if m != "MMD" else f"{v:.6g}"
                    lines.append(f"{m:<8}{t:<14}{s:>12}")
        return "\n".join(lines)


def evaluate_sets(R: Sequence, S: Sequence, tags=("BRDF-L1", "RMSE", "NegPSNR", "NegSSIM"),
                  render_cfg=None, seed=None) -> MetricReport:
    """MMD, COV and 1-NNA of ``S`` against ``R`` for each distance tag."""
    _check(R, S)
    rows = []
    for tag in tags:
        D_rs = distance_matrix(R, S, tag, render_cfg)
        D_rr = distance_matrix(R, R, tag, render_cfg)
        D_ss = distance_matrix(S, S, tag, render_cfg)
        rows.append({"metric": "MMD", "distance": tag, "value": mmd_from_matrix(D_rs)})
        rows.append({"metric": "COV", "distance": tag, "value": cov_from_matrix(D_rs)})
        rows.append({"metric": "1-NNA", "distance": tag, "value": one_nna_from_matrices(D_rr, D_rs, D_ss)})
    return MetricReport(rows, len(R), len(S), seed)

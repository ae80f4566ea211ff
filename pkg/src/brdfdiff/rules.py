"""Reflectance statistics, category rules, k-means and rejection sampling.

Directional quantifiers ("in all directions") are evaluated over the valid
cells of the tabulation grid, using the channel maximum of each cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .brdf import N_THETA_H, cell_center_angles, grid_values
from .errors import Exhausted, ZeroPeak

F_DIFFUSE = 1.0 / math.pi        # energy-passivity bound for a constant BRDF
EXCEPTIONS = 80_000
F_SPECULAR_1 = 100.0
F_SPECULAR_2 = 600.0
PLASTIC_TOLERANCE = 0.05         # fraction of the material's maximum reflectance
W_MIRROR = 0.349
KMEANS_K = 3                    # one cluster per specular band


class MaterialCategory(str, Enum):
    DIFFUSE = "diffuse"
    METALLIC = "metallic"
    LOW_SPECULAR = "low-specular"
    MID_SPECULAR = "mid-specular"
    HIGH_SPECULAR = "high-specular"
    PLASTIC = "plastic"
    MIRROR = "mirror"


CATEGORIES = tuple(c.value for c in MaterialCategory)


@dataclass(frozen=True)
class BrdfStats:
    mean: np.ndarray
    max: np.ndarray
    n_cells: int

    def to_dict(self):
        return {"mean": self.mean.tolist(), "max": self.max.tolist(), "n_cells": self.n_cells}


def brdf_stats(b) -> BrdfStats:
    v = np.asarray(grid_values(b), dtype=np.float64)
    return BrdfStats(v.mean(axis=0), v.max(axis=0), v.shape[0])


def _category(cat) -> MaterialCategory:
    try:
        return MaterialCategory(cat)
    except ValueError:
        raise ValueError(f"unknown category {cat!r}; choose from {CATEGORIES}") from None


def lobe_width(b) -> float:
    """θh of the first grid cell along (θd=0, φd=0) at or below half the peak."""
    ang = cell_center_angles(np.arange(N_THETA_H), 0, 0)
    vals = np.asarray(b.eval(*ang) if hasattr(b, "eval") else b[:, 0, 0], dtype=np.float64).max(axis=-1)
    peak = vals[0]
    if peak <= 0:
        raise ZeroPeak("reflectance at the lobe peak is zero")
    below = np.nonzero(vals <= peak / 2)[0]
    return float(ang.theta_h[below[0]]) if below.size else math.pi / 2


def _band_edges(cat: MaterialCategory):
    return {MaterialCategory.LOW_SPECULAR: (F_DIFFUSE, F_SPECULAR_1),
            MaterialCategory.MID_SPECULAR: (F_SPECULAR_1, F_SPECULAR_2),
            MaterialCategory.HIGH_SPECULAR: (F_SPECULAR_2, math.inf)}[cat]


def _satisfies_values(v: np.ndarray, cat: MaterialCategory, b=None) -> bool:
    if cat is MaterialCategory.MIRROR:
        try:
            return lobe_width(b) < W_MIRROR
        except ZeroPeak:
            return False
    cmax = v.max(axis=-1)
    if cat is MaterialCategory.DIFFUSE:
        return int(np.count_nonzero(cmax > F_DIFFUSE)) < EXCEPTIONS
    if cat is MaterialCategory.METALLIC:
        return bool(np.all(cmax > F_DIFFUSE))
    if cat in (MaterialCategory.LOW_SPECULAR, MaterialCategory.MID_SPECULAR, MaterialCategory.HIGH_SPECULAR):
        lo, hi = _band_edges(cat)
        m = float(cmax.max())
        return lo <= m < hi
    if cat is MaterialCategory.PLASTIC:
        bright = cmax > F_DIFFUSE
        if not bright.any():
            return False
        with np.errstate(invalid="ignore"):
            spread = cmax[bright] - v[bright].min(axis=-1)
        return bool(np.all(spread < PLASTIC_TOLERANCE * float(cmax.max())))
    raise AssertionError(cat)


def satisfies(b, cat) -> bool:
    cat = _category(cat)
    if cat is MaterialCategory.MIRROR:
        return _satisfies_values(None, cat, b)
    return _satisfies_values(np.asarray(grid_values(b)), cat, b)


def classify(b) -> dict:
    """Every category predicate for ``b``; categories are not exclusive."""
    v = np.asarray(grid_values(b))
    return {c.value: _satisfies_values(v, c, b) for c in MaterialCategory}


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    objective: float
    history: list = field(default_factory=list)
    n_iter: int = 0


def _sq_dists(X, C):
    return np.maximum((X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None], 0.0)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[[nxt]])[:, 0])
    return X[chosen].copy()


def kmeans(points, k: int = KMEANS_K, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd iterations from a seeded k-means++ start.

    Stops when assignments no longer change or after ``max_iter`` iterations.
    A cluster that loses all its points is re-seeded at the point farthest
    from its current center.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    assign = np.argmin(_sq_dists(X, C), axis=1)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = assign == j
            if members.any():
                C[j] = X[members].mean(axis=0)
            else:
                d = _sq_dists(X, C)[np.arange(n), assign]
                far = int(np.argmax(d))
                C[j] = X[far]
                assign[far] = j
        D = _sq_dists(X, C)
        new = np.argmin(D, axis=1)
        history.append(float(D[np.arange(n), new].sum()))
        if np.array_equal(new, assign):
            break
        assign = new
    D = _sq_dists(X, C)
    return KMeansResult(assign, C, float(D[np.arange(n), assign].sum()), history, it)


def constrained_sample(sampler: Callable[[int], object], cat, max_attempts: int = 100,
                       predicate: Optional[Callable] = None):
    """Draw from ``sampler(attempt)`` until a draw satisfies ``cat``.

    Returns ``(sample, attempts)``; raises :class:`Exhausted` after
    ``max_attempts`` misses.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    cat = _category(cat)
    test = predicate or (lambda s: satisfies(s, cat))
    for attempt in range(1, max_attempts + 1):
        s = sampler(attempt - 1)
        if test(s):
            return s, attempt
    raise Exhausted(max_attempts)

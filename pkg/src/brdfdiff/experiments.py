"""Low-density superresolution: sparse grid, nearest-neighbour baseline vs a fitted field."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .brdf import (GRID_SHAPE, N_PHI_D, N_THETA_D, N_THETA_H, AnalyticBrdf,
                   MeasuredBrdf, cell_center_angles, grid_index, tabulation, valid_mask)
from .field import FitConfig, NeuralFieldWeights, nf_fit
from .metrics import ssim
from .render import RenderConfig, render_sphere

log = logging.getLogger(__name__)

FACTORS = (1, 2, 4, 8, 16, 24, 32)
SPARSE_EPOCH_FACTOR = 4
SPARSE_FROM = 16
# a few hundred kept cells make a single 512-batch per epoch; smaller batches
# give the optimizer enough steps to fit the sparse set
SPARSE_BATCH = 64


def sample_counts(x: int):
    return (1 + (N_THETA_H - 1) // x, 1 + (N_THETA_D - 1) // x, 1 + (N_PHI_D - 1) // x)


@dataclass(frozen=True, eq=False)
class SparseTabulation:
    """Every ``x``-th cell of a tabulation in each grid dimension, starting at 0."""

    values: np.ndarray
    x: int

    @property
    def shape(self):
        return self.values.shape[:3]

    def kept_indices(self):
        return tuple(np.arange(0, n, self.x) for n in GRID_SHAPE)

    def samples(self):
        """Angles and values of the kept cells that are above the horizon."""
        ii, jj, kk = np.meshgrid(*self.kept_indices(), indexing="ij")
        keep = valid_mask()[ii, jj, kk]
        ang = cell_center_angles(ii[keep], jj[keep], kk[keep])
        return ang, self.values[keep]

    def n_valid(self) -> int:
        ii, jj, kk = np.meshgrid(*self.kept_indices(), indexing="ij")
        return int(valid_mask()[ii, jj, kk].sum())


def downsample_grid(b, x: int) -> SparseTabulation:
    if int(x) != x or x < 1:
        raise ValueError("downsampling factor must be a positive integer")
    tab = tabulation(b)
    return SparseTabulation(np.array(tab[::x, ::x, ::x]), int(x))


class NearestBaseline:
    """Evaluates the kept sample at the index rounded down to the sparse grid."""

    def __init__(self, sparse: SparseTabulation):
        self.sparse = sparse

    def eval(self, theta_h, theta_d, phi_d):
        i, j, k = grid_index((theta_h, theta_d, phi_d))
        x = self.sparse.x
        return self.sparse.values[i // x, j // x, k // x]

    def tabulate(self):
        x = self.sparse.x
        i, j, k = (np.arange(n) // x for n in GRID_SHAPE)
        return self.sparse.values[np.ix_(i, j, k)]

    def valid_values(self):
        return self.tabulate()[valid_mask()]


def nn_baseline(sparse: SparseTabulation) -> NearestBaseline:
    return NearestBaseline(sparse)


@dataclass
class SuperresReport:
    x: int
    counts: tuple
    ssim_baseline: float
    ssim_field: float
    seed: int
    material: str = ""
    final_loss: Optional[float] = None

    @property
    def n_samples(self) -> int:
        return int(np.prod(self.counts))

    def to_dict(self):
        d = asdict(self)
        d["counts"] = list(self.counts)
        return d


def sparse_fit_config(cfg: FitConfig, x: int) -> FitConfig:
    """Epochs x4 from ``x = 16`` on; batches capped at :data:`SPARSE_BATCH` when ``x > 1``."""
    if x >= SPARSE_FROM:
        cfg = replace(cfg, epochs=cfg.epochs * SPARSE_EPOCH_FACTOR)
    if x > 1:
        cfg = replace(cfg, batch_size=min(cfg.batch_size, SPARSE_BATCH))
    return cfg


def superres_experiment(b, x: int, fit_cfg: FitConfig = FitConfig(), render_cfg: RenderConfig = RenderConfig(),
                        init: Optional[NeuralFieldWeights] = None):
    """Fit a field on the ``x``-sparse samples only and compare renders to ground truth.

    Ground truth is the full-density tabulation of ``b``.  Returns
    ``(report, fitted_weights)``.
    """
    if not isinstance(b, MeasuredBrdf):
        b = MeasuredBrdf(tabulation(b), name=getattr(b, "name", ""))
    sparse = downsample_grid(b, x)
    cfg = sparse_fit_config(fit_cfg, x)
    hist = []
    w = nf_fit(sparse, cfg, init, history=hist)
    truth = render_sphere(b, render_cfg)
    base = render_sphere(nn_baseline(sparse), render_cfg)
    fit = render_sphere(w, render_cfg)
    rep = SuperresReport(int(x), sample_counts(x), ssim(truth, base), ssim(truth, fit), cfg.seed,
                         getattr(b, "name", ""), hist[-1] if hist else None)
    log.info("x=%d baseline %.4f field %.4f", x, rep.ssim_baseline, rep.ssim_field)
    return rep, w


def format_table(reports: Sequence[SuperresReport]) -> str:
    """Aligned table with one row per factor; values are mean ± std over materials."""
    by_x = {}
    for r in reports:
        by_x.setdefault(r.x, []).append(r)
    lines = [f"{'x':>4}  {'samples':<14}{'nearest neighbour':>22}{'neural field':>22}"]
    for x in sorted(by_x):
        rs = by_x[x]
        ni, nj, nk = rs[0].counts
        b = np.array([r.ssim_baseline for r in rs])
        f = np.array([r.ssim_field for r in rs])
        cells = f"{ni}^2 x {nk}" if ni == nj else f"{ni} x {nj} x {nk}"
        lines.append(f"{x:>4}  {cells:<14}{b.mean():>13.4f} ± {b.std():<6.2g}{f.mean():>13.4f} ± {f.std():<6.2g}")
    return "\n".join(lines)


def glossy_material(kd=(0.08, 0.06, 0.05), ks=(4.0, 4.0, 4.0), width: float = 0.12, name: str = "synthetic-glossy"):
    """Diffuse base plus a Gaussian highlight in θh."""
    kd, ks = np.asarray(kd, dtype=float), np.asarray(ks, dtype=float)

    def fn(theta_h, theta_d, phi_d):
        lobe = np.exp(-(np.asarray(theta_h) / width) ** 2)[..., None]
        return kd + ks * lobe

    return AnalyticBrdf(fn, name=name)

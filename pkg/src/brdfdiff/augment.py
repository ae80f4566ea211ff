"""Dataset augmentation: RGB channel permutation and PCA-space interpolation.

PCA runs on ``log(1 + f_r)`` flattened per channel.  The augmented dataset is
materialized lazily because 2400 full tabulations do not fit in memory; items
are produced on access and streamed to disk by :meth:`AugMERL.save`.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .brdf import GRID_SHAPE, MATERIAL_TYPES, MeasuredBrdf, read_merl, save_merl
from .errors import DimensionMismatch, RankDeficient

log = logging.getLogger(__name__)

PERMUTATIONS = {
    "RGB": (0, 1, 2),
    "RBG": (0, 2, 1),
    "GRB": (1, 0, 2),
    "GBR": (1, 2, 0),
    "BRG": (2, 0, 1),
    "BGR": (2, 1, 0),
}


def _values(item) -> np.ndarray:
    return item.values if isinstance(item, MeasuredBrdf) else np.asarray(item)


def _like(values, template, name=None):
    if isinstance(template, MeasuredBrdf):
        return MeasuredBrdf(values, name=template.name if name is None else name, type_id=template.type_id)
    return values


def permute_channels(item, perm: str):
    values = _values(item)[..., list(PERMUTATIONS[perm])]
    return _like(values, item)


def rgb_permutations(item) -> list:
    """The six channel orderings, identity first."""
    out = []
    for perm in PERMUTATIONS:
        p = permute_channels(item, perm)
        if isinstance(item, MeasuredBrdf):
            suffix = "" if perm == "RGB" else "-" + perm.lower()
            p = MeasuredBrdf(p.values, name=item.name + suffix, type_id=item.type_id)
        out.append(p)
    return out


def encode(item) -> np.ndarray:
    """Log-mapped flat vector used as the PCA feature space."""
    return np.log1p(_values(item)).ravel()


def decode(vec, shape=GRID_SHAPE + (3,), name: str = "", type_id=None):
    values = np.maximum(np.expm1(np.asarray(vec, dtype=np.float64)), 0.0).reshape(shape)
    if tuple(shape) == GRID_SHAPE + (3,):
        return MeasuredBrdf(values, name=name, type_id=type_id)
    return values


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, D), orthonormal rows
    variances: np.ndarray   # (k,), nonincreasing

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _as_matrix(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray) and dataset.ndim == 2:
        return dataset
    return np.stack([np.asarray(x).ravel() for x in dataset])


def pca_fit(dataset, k: int, chunk: int = 1 << 18) -> PcaModel:
    """Principal components of ``dataset`` (n vectors of length D).

    The eigenproblem is solved on whichever of the Gram (n x n) or covariance
    (D x D) matrix is smaller; tabulated BRDFs have n << D.
    """
    X = _as_matrix(dataset)
    n, D = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    if not 1 <= k <= min(n - 1, D):
        raise ValueError(f"k={k} outside [1, min(n-1, D)] = [1, {min(n - 1, D)}]")
    mean = X.mean(axis=0, dtype=np.float64)

    if D <= n:
        Xc = X - mean
        evals, evecs = np.linalg.eigh(Xc.T @ Xc)
        order = np.argsort(evals)[::-1][:k]
        evals = np.maximum(evals[order], 0.0)
        if evals[0] <= 0:
            raise RankDeficient("all samples are identical")
        return PcaModel(mean, np.ascontiguousarray(evecs[:, order].T), evals / (n - 1))

    G = np.zeros((n, n))
    for s in range(0, D, chunk):
        blk = X[:, s:s + chunk] - mean[s:s + chunk]
        G += blk @ blk.T
    evals, U = np.linalg.eigh(G)
    order = np.argsort(evals)[::-1][:k]
    evals, U = np.maximum(evals[order], 0.0), U[:, order]
    if evals[0] <= 0:
        raise RankDeficient("all samples are identical")
    # eigenvalues below this are rounding noise of the Gram matrix
    good = evals > evals[0] * 1e-12
    sv = np.sqrt(evals)
    comps = np.empty((k, D))
    for s in range(0, D, chunk):
        blk = X[:, s:s + chunk] - mean[s:s + chunk]
        comps[good, s:s + chunk] = (U[:, good].T @ blk) / sv[good, None]
    if not good.all():
        # complete the basis; these directions carry no variance
        m = int(good.sum())
        R = np.random.default_rng(0).standard_normal((k - m, D))
        R -= (R @ comps[:m].T) @ comps[:m]
        Q, _ = np.linalg.qr(R.T)
        comps[m:] = Q.T
        evals[m:] = 0.0
    return PcaModel(mean, comps, evals / (n - 1))


def pca_project(m: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.dim:
        raise DimensionMismatch(f"vector length {x.shape[-1]} != model dimension {m.dim}")
    return (x - m.mean) @ m.components.T


def pca_reconstruct(m: PcaModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != m.k:
        raise DimensionMismatch(f"code length {z.shape[-1]} != k={m.k}")
    return m.mean + z @ m.components


def pca_interpolate(m: PcaModel, a, b, t: float):
    """Blend two materials linearly in PCA space and map back to reflectance."""
    za, zb = pca_project(m, encode(a)), pca_project(m, encode(b))
    z = (1.0 - t) * za + t * zb
    return decode(pca_reconstruct(m, z), shape=_values(a).shape)


def pca_sample_latent(m: PcaModel, seed, n: Optional[int] = None) -> np.ndarray:
    """Gaussian draws in the feature space with the fitted per-component variance."""
    rng = np.random.default_rng(seed)
    shape = (m.k,) if n is None else (n, m.k)
    z = rng.standard_normal(shape) * np.sqrt(m.variances)
    return pca_reconstruct(m, z)


def pca_sample(m: PcaModel, seed, shape=GRID_SHAPE + (3,), name: str = ""):
    return decode(pca_sample_latent(m, seed), shape=shape, name=name or f"pca-sample-{seed}")


class AugMERL:
    """Augmented dataset: permuted materials followed by PCA interpolations.

    ``records[i]`` holds the metadata of item ``i``; ``self[i]`` materializes
    it.  Items are never cached.
    """

    def __init__(self, records: list, materialize: Callable[[int], object], pca: Optional[PcaModel] = None):
        self.records = records
        self._materialize = materialize
        self.pca = pca

    def __len__(self):
        return len(self.records)

    def __getitem__(self, idx):
        if not -len(self) <= idx < len(self):
            raise IndexError(idx)
        return self._materialize(idx % len(self))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def counts(self) -> dict:
        out = {}
        for r in self.records:
            kind = r["provenance"]["kind"]
            out[kind] = out.get(kind, 0) + 1
        return out

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        items = []
        for i, rec in enumerate(self.records):
            fname = rec["name"] + ".binary"
            save_merl(directory / fname, self[i])
            items.append(dict(rec, file=fname))
        meta = {"format": "augmerl", "version": 1, "items": items}
        path = directory / "metadata.json"
        path.write_text(json.dumps(meta, indent=2))
        return path


def load_augmerl(directory) -> AugMERL:
    directory = Path(directory)
    meta = json.loads((directory / "metadata.json").read_text())
    records = meta["items"]

    def materialize(i):
        rec = records[i]
        b = read_merl(directory / rec["file"], type_id=rec.get("type_id"))
        return MeasuredBrdf(b.values, name=rec["name"], type_id=rec.get("type_id"))

    return AugMERL(records, materialize)


def _type_name(type_id):
    return MATERIAL_TYPES[type_id] if type_id is not None else "material"


def build_augmerl(base: Sequence, pair_count: int = 1800, k: int = 300, seed: int = 0) -> AugMERL:
    """Six channel permutations per base material plus ``pair_count`` PCA blends.

    Interpolation pairs are sampled without replacement among permuted items
    that come from different base materials; ``t`` is uniform on (0, 1).
    """
    base = list(base)
    names = [getattr(b, "name", "") or f"base{i:03d}" for i, b in enumerate(base)]
    type_ids = [getattr(b, "type_id", None) for b in base]
    perms = list(PERMUTATIONS)

    records = []
    for i in range(len(base)):
        for perm in perms:
            suffix = "" if perm == "RGB" else "-" + perm.lower()
            records.append({
                "name": names[i] + suffix,
                "type_id": type_ids[i],
                "description": f"{_type_name(type_ids[i])} ({names[i]}) with colour channels ordered {perm}",
                "provenance": {"kind": "permutation", "source": i, "source_name": names[i], "permutation": perm},
            })
    n_perm = len(records)
    source = np.repeat(np.arange(len(base)), len(perms))

    def permuted(idx):
        return permute_channels(base[idx // len(perms)], perms[idx % len(perms)])

    rng = np.random.default_rng(seed)
    a_idx, b_idx = np.triu_indices(n_perm, k=1)
    distinct = source[a_idx] != source[b_idx]
    a_idx, b_idx = a_idx[distinct], b_idx[distinct]
    n_pairs = min(pair_count, len(a_idx))
    if n_pairs < pair_count:
        log.warning("only %d distinct-source pairs available; requested %d", len(a_idx), pair_count)

    pca, codes = None, None
    if n_pairs:
        chosen = np.sort(rng.choice(len(a_idx), size=n_pairs, replace=False))
        ts = rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=n_pairs)
        order = rng.permutation(n_pairs)
        X = np.stack([encode(permuted(i)) for i in range(n_perm)])
        pca = pca_fit(X, min(k, n_perm - 1, X.shape[1]))
        codes = pca_project(pca, X)
        del X
        for n, c in enumerate(order):
            ia, ib, t = int(a_idx[chosen[c]]), int(b_idx[chosen[c]]), float(ts[c])
            dominant = ia if t < 0.5 else ib
            ra, rb = records[ia], records[ib]
            records.append({
                "name": f"interp-{n:04d}",
                "type_id": records[dominant]["type_id"],
                "description": f"blend of {ra['name']} and {rb['name']}, {100 * t:.0f}% towards the latter",
                "provenance": {"kind": "interpolation", "parents": [ia, ib],
                               "parent_names": [ra["name"], rb["name"]], "t": t},
            })

    shape = _values(base[0]).shape if base else GRID_SHAPE + (3,)

    def materialize(idx):
        rec = records[idx]
        if idx < n_perm:
            item = permuted(idx)
            if isinstance(item, MeasuredBrdf):
                item = MeasuredBrdf(item.values, name=rec["name"], type_id=rec["type_id"])
            return item
        prov = rec["provenance"]
        ia, ib = prov["parents"]
        t = prov["t"]
        z = (1.0 - t) * codes[ia] + t * codes[ib]
        return decode(pca_reconstruct(pca, z), shape=shape, name=rec["name"], type_id=rec["type_id"])

    return AugMERL(records, materialize, pca=pca)

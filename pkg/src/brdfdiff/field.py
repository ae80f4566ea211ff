"""Compact neural BRDF field with 675 parameters.

Architecture: 6 inputs (the half vector ``h`` and difference vector ``d`` in
Cartesian form, reconstructed at ``phi_h = 0``), two ReLU hidden layers of
width 21 and an exponential RGB output.  Weight matrices use the
``(out, in)`` layout and the flat vector is ordered
``W1, b1, W2, b2, W3, b3``.

Forward and backward passes are written out by hand in float64 so the
gradient can be checked against finite differences.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .brdf import HalfDiffAngles, MeasuredBrdf, grid_centers, valid_angles
from .errors import DataError, NonFinite

log = logging.getLogger(__name__)

LAYER_SIZES = (6, 21, 21, 3)
_SHAPES = []
for _fan_in, _fan_out in zip(LAYER_SIZES[:-1], LAYER_SIZES[1:]):
    _SHAPES += [(_fan_out, _fan_in), (_fan_out,)]
_SIZES = [int(np.prod(s)) for s in _SHAPES]
_OFFSETS = np.concatenate([[0], np.cumsum(_SIZES)])
N_PARAMS = int(_OFFSETS[-1])
assert N_PARAMS == 675, N_PARAMS

NEUMERL_MAGIC = b"NMRL"
NEUMERL_VERSION = 1


def unpack(flat: np.ndarray):
    """Views ``(W1, b1, W2, b2, W3, b3)`` into a flat parameter vector."""
    return tuple(flat[_OFFSETS[i]:_OFFSETS[i + 1]].reshape(s) for i, s in enumerate(_SHAPES))


def layer_bounds() -> np.ndarray:
    """Per-parameter Glorot-uniform bound used by :func:`nf_init`."""
    out = np.zeros(N_PARAMS)
    for layer, (fan_in, fan_out) in enumerate(zip(LAYER_SIZES[:-1], LAYER_SIZES[1:])):
        w = 2 * layer
        out[_OFFSETS[w]:_OFFSETS[w + 1]] = np.sqrt(6.0 / (fan_in + fan_out))
    return out


def field_inputs(theta_h, theta_d, phi_d) -> np.ndarray:
    theta_h, theta_d, phi_d = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in (theta_h, theta_d, phi_d)))
    sd = np.sin(theta_d)
    return np.stack([np.sin(theta_h), np.zeros_like(theta_h), np.cos(theta_h),
                     sd * np.cos(phi_d), sd * np.sin(phi_d), np.cos(theta_d)], axis=-1)


def cos_theta_i(theta_h, theta_d, phi_d) -> np.ndarray:
    """z component of ``wi`` for the canonical ``phi_h = 0`` configuration."""
    return -np.sin(theta_h) * np.sin(theta_d) * np.cos(phi_d) + np.cos(theta_h) * np.cos(theta_d)


@dataclass(frozen=True)
class NeuralFieldWeights:
    flat: np.ndarray

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64).reshape(-1)
        if flat.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} parameters, got {flat.size}")
        if not np.all(np.isfinite(flat)):
            raise ValueError("weights contain non-finite values")
        flat.flags.writeable = False
        object.__setattr__(self, "flat", flat)

    def eval(self, theta_h, theta_d, phi_d):
        return nf_eval(self, HalfDiffAngles(theta_h, theta_d, phi_d))

    def valid_values(self):
        return nf_eval(self, valid_angles())

    def tabulate(self):
        return nf_export_tabulated(self).values

    @classmethod
    def constant(cls, c):
        """Field that outputs ``c`` everywhere (all weights zero except the output bias)."""
        flat = np.zeros(N_PARAMS)
        flat[_OFFSETS[5]:] = np.log(np.broadcast_to(np.asarray(c, dtype=float), (3,)))
        return cls(flat)


@dataclass(frozen=True)
class FitConfig:
    batch_size: int = 512
    epochs: int = 100
    learning_rate: float = 5e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size <= 0 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("batch_size and learning_rate must be positive, epochs nonnegative")


@dataclass(frozen=True)
class FieldBatch:
    """Inputs, targets and ``cos(theta_i)`` weights for a set of grid samples."""

    inputs: np.ndarray
    targets: np.ndarray
    cos_i: np.ndarray
    log_targets: np.ndarray = field(repr=False)

    @classmethod
    def from_samples(cls, angles: HalfDiffAngles, targets) -> "FieldBatch":
        targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
        if np.any(targets < 0):
            raise DataError("targets must be nonnegative")
        cos_i = np.maximum(cos_theta_i(*angles), 0.0).reshape(-1)
        return cls(field_inputs(*angles).reshape(-1, 6), targets, cos_i, np.log1p(targets * cos_i[:, None]))

    def __len__(self):
        return self.targets.shape[0]

    def subset(self, idx) -> "FieldBatch":
        return FieldBatch(self.inputs[idx], self.targets[idx], self.cos_i[idx], self.log_targets[idx])


def nf_init(template: Optional[NeuralFieldWeights] = None, seed=0) -> NeuralFieldWeights:
    if template is not None:
        return NeuralFieldWeights(template.flat.copy())
    rng = np.random.default_rng(seed)
    bounds = layer_bounds()
    return NeuralFieldWeights(rng.uniform(-1.0, 1.0, N_PARAMS) * bounds)


def _forward(flat, X):
    W1, b1, W2, b2, W3, b3 = unpack(flat)
    z1 = X @ W1.T
    z1 += b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ W2.T
    z2 += b2
    a2 = np.maximum(z2, 0.0)
    o = a2 @ W3.T
    o += b3
    return z1, a1, z2, a2, o


def nf_eval(w: NeuralFieldWeights, angles: HalfDiffAngles, chunk: int = 1 << 17) -> np.ndarray:
    X = field_inputs(*angles)
    shape = X.shape[:-1]
    X = X.reshape(-1, 6)
    flat = w.flat if isinstance(w, NeuralFieldWeights) else np.asarray(w, dtype=np.float64)
    out = np.empty((X.shape[0], 3))
    # wild weight vectors may overflow; they evaluate to +inf reflectance
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(0, X.shape[0], chunk):
            out[s:s + chunk] = np.exp(_forward(flat, X[s:s + chunk])[-1])
    return out.reshape(shape + (3,))


def _loss_and_grad(flat, X, log_t, cos_i, want_grad=True):
    z1, a1, z2, a2, o = _forward(flat, X)
    with np.errstate(over="ignore", invalid="ignore"):
        pc = np.exp(o) * cos_i[:, None]
        r = log_t - np.log1p(pc)
    n = r.size
    loss = float(np.abs(r).sum() / n)
    if not want_grad:
        return loss, None
    W1, b1, W2, b2, W3, b3 = unpack(flat)
    # d|r|/do with sign(0) = 0 and dr/do = -pc / (1 + pc)
    with np.errstate(invalid="ignore"):
        go = -np.sign(r) * pc / (1.0 + pc) / n
    g2 = go @ W3
    g2 *= z2 > 0
    g1 = g2 @ W2
    g1 *= z1 > 0
    return loss, np.concatenate([
        (g1.T @ X).ravel(), g1.sum(0),
        (g2.T @ a1).ravel(), g2.sum(0),
        (go.T @ a2).ravel(), go.sum(0),
    ])


def _flat(w):
    return w.flat if isinstance(w, NeuralFieldWeights) else np.asarray(w, dtype=np.float64)


def nf_loss(w, batch: FieldBatch) -> float:
    """Mean absolute log error of ``f cos(theta_i)`` over samples and channels."""
    return _loss_and_grad(_flat(w), batch.inputs, batch.log_targets, batch.cos_i, want_grad=False)[0]


def nf_grad(w, batch: FieldBatch) -> np.ndarray:
    return _loss_and_grad(_flat(w), batch.inputs, batch.log_targets, batch.cos_i)[1]


def nf_fit(target, cfg: FitConfig = FitConfig(), init: Optional[NeuralFieldWeights] = None,
           history: Optional[list] = None) -> NeuralFieldWeights:
    """Fit a field to ``target`` with minibatch Adam.

    ``target`` is a :class:`FieldBatch` or anything exposing ``samples()``
    (angles and RGB targets of the cells to train on).  Each epoch visits
    every sample once in a seeded shuffled order.  Mean training loss per
    epoch is appended to ``history`` when given.
    """
    batch = target if isinstance(target, FieldBatch) else FieldBatch.from_samples(*target.samples())
    if init is None:
        init = nf_init(seed=cfg.seed)
    flat = init.flat.copy()
    if cfg.epochs == 0:
        return NeuralFieldWeights(flat)
    rng = np.random.default_rng(cfg.seed)
    m = np.zeros(N_PARAMS)
    v = np.zeros(N_PARAMS)
    step = 0
    n = len(batch)
    bs = cfg.batch_size
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        X, lt, c = batch.inputs[perm], batch.log_targets[perm], batch.cos_i[perm]
        total = 0.0
        for s in range(0, n, bs):
            loss, g = _loss_and_grad(flat, X[s:s + bs], lt[s:s + bs], c[s:s + bs])
            # an overflowing exp() surfaces as a non-finite loss
            if not np.isfinite(loss):
                raise NonFinite(f"loss diverged at epoch {epoch}, step {step}")
            total += loss * min(bs, n - s)
            step += 1
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            g *= g
            v += (1.0 - cfg.beta2) * g
            # bias-corrected Adam update in its folded form
            c2 = np.sqrt(1.0 - cfg.beta2 ** step)
            denom = np.sqrt(v)
            denom += cfg.eps * c2
            flat -= (cfg.learning_rate * c2 / (1.0 - cfg.beta1 ** step)) * (m / denom)
        if history is not None:
            history.append(total / n)
    if not np.all(np.isfinite(flat)):
        raise NonFinite("weights became non-finite")
    return NeuralFieldWeights(flat)


def nf_export_tabulated(w: NeuralFieldWeights, name: str = "", type_id=None) -> MeasuredBrdf:
    return MeasuredBrdf(nf_eval(w, grid_centers()), name=name, type_id=type_id)


@dataclass
class NeuMERL:
    """Fitted weight vectors (one row per material) plus their metadata."""

    weights: np.ndarray
    records: list
    split: Optional[dict] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1, N_PARAMS)
        if len(self.records) != len(self.weights):
            raise ValueError("one metadata record per weight vector required")

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, idx) -> NeuralFieldWeights:
        return NeuralFieldWeights(self.weights[idx])

    def type_ids(self) -> np.ndarray:
        return np.array([-1 if r.get("type_id") is None else r["type_id"] for r in self.records])

    def save(self, path) -> Path:
        path = Path(path)
        header = NEUMERL_MAGIC + struct.pack("<III", NEUMERL_VERSION, len(self), N_PARAMS)
        path.write_bytes(header + self.weights.astype("<f4").tobytes())
        meta = {"format": "neumerl", "version": NEUMERL_VERSION, "items": self.records}
        if self.split is not None:
            meta["split"] = self.split
        sidecar_path(path).write_text(json.dumps(meta, indent=2))
        return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def parse_neumerl(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != NEUMERL_MAGIC:
        raise DataError("not a NeuMERL file (bad magic)")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != NEUMERL_VERSION:
        raise DataError(f"unsupported NeuMERL version {version}")
    if dim != N_PARAMS:
        raise DataError(f"NeuMERL dim {dim} != {N_PARAMS}")
    if len(data) != 16 + 4 * count * dim:
        raise DataError("NeuMERL payload size does not match header")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(count, dim).astype(np.float64)


def load_neumerl(path) -> NeuMERL:
    path = Path(path)
    weights = parse_neumerl(path.read_bytes())
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        records, split = meta["items"], meta.get("split")
    else:
        records, split = [{"name": f"item-{i:04d}"} for i in range(len(weights))], None
    return NeuMERL(weights, records, split)


def train_validation_split(n: int, validation_fraction: float = 0.05, seed: int = 0) -> dict:
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * validation_fraction))
    return {"train": sorted(int(i) for i in perm[n_val:]), "validation": sorted(int(i) for i in perm[:n_val])}


def build_neumerl(aug: Sequence, cfg: FitConfig = FitConfig(), records: Optional[list] = None,
                  validation_fraction: float = 0.05) -> NeuMERL:
    """Fit every material; all fits after the first start from the first's result."""
    if records is None:
        records = list(getattr(aug, "records", None) or
                       [{"name": getattr(b, "name", f"item-{i:04d}")} for i, b in enumerate(aug)])
    out = np.empty((len(records), N_PARAMS))
    shared_init = None
    for i in range(len(records)):
        item = aug[i]
        try:
            if shared_init is None:
                w = nf_fit(item, cfg, nf_init(seed=cfg.seed))
                shared_init = w
            else:
                w = nf_fit(item, cfg, nf_init(shared_init))
        except NonFinite as exc:
            raise NonFinite(f"material {i} ({records[i].get('name')}): {exc}", index=i) from exc
        out[i] = w.flat
        log.info("fitted %d/%d %s", i + 1, len(records), records[i].get("name"))
    return NeuMERL(out, records, train_validation_split(len(records), validation_fraction, cfg.seed))

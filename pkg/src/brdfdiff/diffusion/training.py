"""Score-matching training of the denoiser on standardized weight vectors."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch

from ..errors import EmptySet, NonFinite
from .denoiser import CondBatch, Denoiser, DenoiserConfig, build_denoiser
from .schedule import NoiseSchedule, make_schedule

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 700
    cond_epochs: int = 200
    batch_size: int = 512
    lr_start: float = 5e-4
    lr_end: float = 5e-6
    cond_dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.cond_epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be nonnegative and batch_size positive")
        if not 0 <= self.cond_dropout <= 1:
            raise ValueError("cond_dropout must be a probability")
        if not (self.lr_start > 0 and self.lr_end > 0):
            raise ValueError("learning rates must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class DenoiserParams:
    model: Denoiser
    schedule: NoiseSchedule
    mean: np.ndarray
    std: np.ndarray
    history: list = field(default_factory=list)
    train_config: Optional[dict] = None

    @property
    def config(self) -> DenoiserConfig:
        return self.model.cfg

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def standardization(data: np.ndarray):
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std = np.where(std > STD_FLOOR, std, 1.0)
    return mean, std


def lr_at(cfg: TrainConfig, step: int, total: int) -> float:
    """Cosine decay from ``lr_start`` to ``lr_end`` over ``total`` steps."""
    if total <= 1:
        return cfg.lr_start
    frac = step / (total - 1)
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + math.cos(math.pi * frac))


def train(data, cfg: TrainConfig = TrainConfig(), model_cfg: Optional[DenoiserConfig] = None,
          schedule: Optional[NoiseSchedule] = None, conditions: Optional[Sequence] = None) -> DenoiserParams:
    """Fit a denoiser to the rows of ``data``.

    Runs ``cfg.epochs`` unconditional epochs and then, when ``conditions``
    (one per row) are given, ``cfg.cond_epochs`` conditional epochs in which
    each condition is replaced by null with probability ``cfg.cond_dropout``.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise EmptySet("training data must be a nonempty (n, dim) array")
    n, dim = data.shape
    if model_cfg is None:
        model_cfg = DenoiserConfig(dim=dim)
    if model_cfg.dim != dim:
        raise ValueError(f"data dim {dim} != model dim {model_cfg.dim}")
    schedule = schedule or make_schedule()
    mean, std = standardization(data)
    X = torch.from_numpy((data - mean) / std).float()

    cond_all = None
    if conditions is not None:
        if len(conditions) != n:
            raise ValueError("one condition per training row required")
        cond_all = CondBatch.from_conditions(conditions, model_cfg)

    model = build_denoiser(model_cfg, cfg.seed).train()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_start)
    gen = torch.Generator().manual_seed(cfg.seed)
    ab = torch.tensor(schedule.alpha_bar, dtype=torch.float32)
    phases = [False] * cfg.epochs + ([True] * cfg.cond_epochs if cond_all is not None else [])
    steps_per_epoch = -(-n // cfg.batch_size)
    total = len(phases) * steps_per_epoch
    history = []
    step = 0
    for epoch, conditional in enumerate(phases):
        perm = torch.randperm(n, generator=gen)
        running = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            x0 = X[idx]
            B = x0.shape[0]
            t = torch.randint(1, schedule.T + 1, (B,), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            a = ab[t - 1][:, None]
            xt = a.sqrt() * x0 + (1 - a).sqrt() * eps
            if conditional:
                drop = torch.rand(B, generator=gen) < cfg.cond_dropout
                cond = cond_all.index(idx).drop(drop)
            else:
                cond = CondBatch.null(B)
            for g in opt.param_groups:
                g["lr"] = lr_at(cfg, step, total)
            loss = torch.mean((model(xt, t, cond) - eps) ** 2)
            if not torch.isfinite(loss):
                raise NonFinite(f"diffusion loss diverged at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            running += loss.item() * B
            step += 1
        history.append(running / n)
        if epoch % 50 == 0 or epoch == len(phases) - 1:
            log.info("epoch %d/%d loss %.5f%s", epoch + 1, len(phases), history[-1],
                     " (conditional)" if conditional else "")
    model.eval()
    return DenoiserParams(model, schedule, mean, std, history, cfg.to_dict())

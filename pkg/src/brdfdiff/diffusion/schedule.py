"""Variance schedule and the forward (noising) process."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

BETA_START = 1e-4
BETA_END = 0.02
# endpoints above are tuned for 1000 steps; scale them so short chains still
# end near the prior
REFERENCE_STEPS = 1000
MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=np.float64).reshape(-1)
        if b.size < 1:
            raise ValueError("schedule needs at least one step")
        if not np.all((b > 0) & (b < 1)):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValueError("betas must be nondecreasing")
        b.flags.writeable = False
        object.__setattr__(self, "betas", b)
        ab = np.cumprod(1.0 - b)
        ab.flags.writeable = False
        object.__setattr__(self, "_alpha_bar", ab)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alpha_bar(self) -> np.ndarray:
        """``alpha_bar[t-1]`` is the product of ``1 - beta_i`` for ``i <= t``."""
        return self._alpha_bar

    def alpha_bar_at(self, t):
        """Cumulative product at step ``t`` with the convention ``alpha_bar_0 = 1``."""
        t = np.asarray(t)
        if np.any((t < 0) | (t > self.T)):
            raise ValueError(f"t must be in 0..{self.T}")
        return np.where(t == 0, 1.0, self._alpha_bar[np.maximum(t, 1) - 1])


def make_schedule(T: int = 100, betas: Optional[np.ndarray] = None,
                  beta_start: float = BETA_START, beta_end: float = BETA_END) -> NoiseSchedule:
    """Linear schedule between ``beta_start`` and ``beta_end`` (rescaled to ``T`` steps).

    Pass ``betas`` to use an explicit schedule instead.
    """
    if betas is not None:
        return NoiseSchedule(betas)
    if T < 1:
        raise ValueError("T must be >= 1")
    scale = REFERENCE_STEPS / T
    lo = min(beta_start * scale, MAX_BETA)
    hi = min(beta_end * scale, MAX_BETA)
    return NoiseSchedule(np.linspace(lo, hi, T))


def forward_marginal(s: NoiseSchedule, x0, t: int, eps):
    """Closed-form sample of ``x_t`` given ``x_0``."""
    if t == 0:
        return np.asarray(x0, dtype=np.float64).copy()
    ab = float(s.alpha_bar_at(t))
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps)


def forward_step(s: NoiseSchedule, x_prev, t: int, eps):
    """One transition ``q(x_t | x_{t-1})``."""
    b = s.betas[t - 1]
    return np.sqrt(1.0 - b) * np.asarray(x_prev, dtype=np.float64) + np.sqrt(b) * np.asarray(eps)

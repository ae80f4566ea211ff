"""Deterministic DDIM sampling with classifier-free guidance."""
from __future__ import annotations

from typing import Optional, Sequence, Union

import numpy as np
import torch

from ..errors import GuidanceOutOfRange
from ..field import NeuralFieldWeights
from .condition import NULL, Condition
from .denoiser import CondBatch
from .schedule import NoiseSchedule


def sample_cfg(params, cond: Union[Condition, Sequence, None] = NULL, omega: float = 0.0, seed: int = 0,
               n: Optional[int] = None, schedule: Optional[NoiseSchedule] = None):
    """Guided sample(s) from the learned weight distribution.

    The noise estimate is ``(1 + omega) * eps(x, y) - omega * eps(x, null)``.
    With a null condition or ``omega == -1`` only the unconditional branch is
    evaluated, so the trajectory is exactly the unconditional one.  Returns a
    :class:`NeuralFieldWeights` when ``n`` is None, else an ``(n, dim)`` array.
    """
    omega = float(omega)
    if not omega >= -1.0:
        raise GuidanceOutOfRange(f"guidance scale {omega} < -1")
    s = schedule or params.schedule
    model = params.model
    cfg = model.cfg
    count = 1 if n is None else int(n)
    conds = [cond] * count if cond is None or isinstance(cond, Condition) else list(cond)
    if len(conds) != count:
        raise ValueError("need one condition per sample")
    cb = CondBatch.from_conditions(conds, cfg)
    null = CondBatch.null(count)
    unconditional = cb.is_all_null() or 1.0 + omega == 0.0

    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn(count, cfg.dim, generator=gen, dtype=torch.float64)
    ab = s.alpha_bar
    with torch.no_grad():
        for t in range(s.T, 0, -1):
            tt = torch.full((count,), t, dtype=torch.long)
            xf = x.float()
            if unconditional:
                eps = model(xf, tt, null).double()
            else:
                eps = model(xf, tt, cb).double()
                if omega != 0.0:
                    eps = (1.0 + omega) * eps - omega * model(xf, tt, null).double()
            a_t = float(ab[t - 1])
            a_prev = float(ab[t - 2]) if t > 1 else 1.0
            x0 = (x - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
            x = np.sqrt(a_prev) * x0 + np.sqrt(1.0 - a_prev) * eps
    out = params.denormalize(x.numpy())
    if n is None:
        return NeuralFieldWeights(out[0])
    return out


def sample_uncond(params, seed: int = 0, n: Optional[int] = None, schedule: Optional[NoiseSchedule] = None):
    return sample_cfg(params, NULL, 0.0, seed, n=n, schedule=schedule)

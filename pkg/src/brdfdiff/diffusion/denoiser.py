"""Transformer noise predictor over tokenized weight vectors."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from ..brdf import MATERIAL_TYPES
from ..errors import DimensionMismatch
from .condition import EmbeddingVector, TypeId, as_conditions, is_null

KIND_NULL, KIND_TYPE, KIND_TEXT, KIND_IMAGE = range(4)


@dataclass(frozen=True)
class DenoiserConfig:
    dim: int = 675
    token_size: int = 27
    width: int = 256
    depth: int = 6
    heads: int = 8
    ff_width: int = 1024
    n_types: int = len(MATERIAL_TYPES)
    text_dim: Optional[int] = None
    image_dim: Optional[int] = None

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if min(self.dim, self.token_size, self.width, self.depth, self.heads, self.ff_width) < 1:
            raise ValueError("denoiser sizes must be positive")

    @property
    def n_tokens(self) -> int:
        return -(-self.dim // self.token_size)

    @property
    def padded_dim(self) -> int:
        return self.n_tokens * self.token_size

    def to_dict(self):
        return asdict(self)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.to(torch.float32)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


@dataclass
class CondBatch:
    kind: torch.Tensor                  # (B,) long, one of KIND_*
    type_ids: torch.Tensor              # (B,) long, 0 where unused
    text: Optional[torch.Tensor] = None
    image: Optional[torch.Tensor] = None

    @classmethod
    def null(cls, n: int) -> "CondBatch":
        z = torch.zeros(n, dtype=torch.long)
        return cls(z, z.clone())

    @classmethod
    def from_conditions(cls, conds: Sequence, cfg: DenoiserConfig) -> "CondBatch":
        conds = as_conditions(conds)
        kind = torch.zeros(len(conds), dtype=torch.long)
        ids = torch.zeros(len(conds), dtype=torch.long)
        text = image = None
        for i, c in enumerate(conds):
            if is_null(c):
                continue
            if isinstance(c, TypeId):
                if c.value >= cfg.n_types:
                    raise ValueError(f"type id {c.value} outside the model's {cfg.n_types} types")
                kind[i], ids[i] = KIND_TYPE, c.value
            elif isinstance(c, EmbeddingVector):
                want = cfg.text_dim if c.source == "text" else cfg.image_dim
                if want is None:
                    raise DimensionMismatch(f"model has no {c.source} adapter")
                if c.dim != want:
                    raise DimensionMismatch(f"{c.source} embedding has dim {c.dim}, model expects {want}")
                buf = torch.zeros(len(conds), want)
                if c.source == "text":
                    text = buf if text is None else text
                    text[i] = torch.from_numpy(c.vector.copy())
                    kind[i] = KIND_TEXT
                else:
                    image = buf if image is None else image
                    image[i] = torch.from_numpy(c.vector.copy())
                    kind[i] = KIND_IMAGE
            else:
                raise TypeError(f"unsupported condition {c!r}")
        return cls(kind, ids, text, image)

    def __len__(self):
        return self.kind.shape[0]

    def index(self, idx) -> "CondBatch":
        return CondBatch(self.kind[idx], self.type_ids[idx],
                         None if self.text is None else self.text[idx],
                         None if self.image is None else self.image[idx])

    def drop(self, mask: torch.Tensor) -> "CondBatch":
        """Copy with entries where ``mask`` is true replaced by the null condition."""
        kind = self.kind.clone()
        kind[mask] = KIND_NULL
        return CondBatch(kind, self.type_ids, self.text, self.image)

    def is_all_null(self) -> bool:
        return bool((self.kind == KIND_NULL).all())


class Denoiser(nn.Module):
    """Encoder-only transformer predicting the noise in a weight vector.

    Sequence layout: ``[time, condition, w_1 .. w_n]``; the output projection
    is applied to the weight tokens only.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        W = cfg.width
        self.token_in = nn.Linear(cfg.token_size, W)
        self.pos = nn.Parameter(torch.randn(cfg.n_tokens + 2, W) * 0.02)
        self.time_mlp = nn.Sequential(nn.Linear(W, W), nn.ReLU(), nn.Linear(W, W))
        self.type_embed = nn.Embedding(cfg.n_types, W)
        self.null_embed = nn.Parameter(torch.zeros(W))
        self.text_adapter = nn.Linear(cfg.text_dim, W) if cfg.text_dim else None
        self.image_adapter = nn.Linear(cfg.image_dim, W) if cfg.image_dim else None
        self.blocks = nn.ModuleList([
            nn.TransformerEncoderLayer(W, cfg.heads, cfg.ff_width, dropout=0.0, activation="relu",
                                       batch_first=True, norm_first=False)
            for _ in range(cfg.depth)
        ])
        self.token_out = nn.Linear(W, cfg.token_size)
        nn.init.zeros_(self.token_out.weight)
        nn.init.zeros_(self.token_out.bias)

    def cond_token(self, cond: CondBatch) -> torch.Tensor:
        B = len(cond)
        tok = self.null_embed.expand(B, -1)
        tok = torch.where((cond.kind == KIND_TYPE)[:, None], self.type_embed(cond.type_ids), tok)
        if cond.text is not None and self.text_adapter is not None:
            tok = torch.where((cond.kind == KIND_TEXT)[:, None], self.text_adapter(cond.text), tok)
        if cond.image is not None and self.image_adapter is not None:
            tok = torch.where((cond.kind == KIND_IMAGE)[:, None], self.image_adapter(cond.image), tok)
        return tok

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: Optional[CondBatch] = None) -> torch.Tensor:
        cfg = self.cfg
        B = x.shape[0]
        if x.shape[1] != cfg.dim:
            raise DimensionMismatch(f"input dim {x.shape[1]} != {cfg.dim}")
        if cfg.padded_dim != cfg.dim:
            x = torch.cat([x, x.new_zeros(B, cfg.padded_dim - cfg.dim)], dim=1)
        tokens = self.token_in(x.view(B, cfg.n_tokens, cfg.token_size))
        if cond is None:
            cond = CondBatch.null(B)
        t_tok = self.time_mlp(timestep_embedding(t, cfg.width))
        h = torch.cat([t_tok[:, None], self.cond_token(cond)[:, None], tokens], dim=1) + self.pos
        for blk in self.blocks:
            h = blk(h)
        out = self.token_out(h[:, 2:]).reshape(B, cfg.padded_dim)
        return out[:, :cfg.dim]


def build_denoiser(cfg: DenoiserConfig, seed: int = 0) -> Denoiser:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Denoiser(cfg)
    return model.eval()

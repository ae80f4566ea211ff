"""Conditioning inputs: material type, external embedding vectors, or none."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..brdf import MATERIAL_TYPES
from ..errors import DataError

SOURCES = ("text", "image")


class Condition:
    """Base class; see :class:`TypeId`, :class:`EmbeddingVector` and :data:`NULL`."""


@dataclass(frozen=True)
class TypeId(Condition):
    value: int

    def __post_init__(self):
        if not 0 <= int(self.value) < len(MATERIAL_TYPES):
            raise ValueError(f"type id {self.value} outside 0..{len(MATERIAL_TYPES) - 1}")
        object.__setattr__(self, "value", int(self.value))


@dataclass(frozen=True, eq=False)
class EmbeddingVector(Condition):
    vector: np.ndarray
    source: str = "text"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"embedding source must be one of {SOURCES}")
        v = np.array(self.vector, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.size


class _Null(Condition):
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "NULL"

    def __reduce__(self):
        return (_Null, ())


NULL = _Null()


def is_null(c) -> bool:
    return c is None or c is NULL


def as_conditions(conds) -> list:
    """Normalize a sequence of conditions; ints are type ids and ``-1``/``None`` mean null."""
    out = []
    for c in conds:
        if isinstance(c, Condition):
            out.append(c)
        elif c is None or int(c) < 0:
            out.append(NULL)
        else:
            out.append(TypeId(int(c)))
    return out


def write_embedding(path, e: EmbeddingVector) -> Path:
    """One text line ``"<dim> <source>"`` followed by little-endian float32 values."""
    path = Path(path)
    path.write_bytes(f"{e.dim} {e.source}\n".encode("ascii") + e.vector.astype("<f4").tobytes())
    return path


def read_embedding(path) -> EmbeddingVector:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise DataError("embedding file has no header line")
    try:
        dim_s, source = data[:nl].decode("ascii").split()
        dim = int(dim_s)
    except ValueError as exc:
        raise DataError(f"bad embedding header {data[:nl]!r}") from exc
    payload = data[nl + 1:]
    if len(payload) != 4 * dim:
        raise DataError(f"embedding payload has {len(payload)} bytes, expected {4 * dim}")
    return EmbeddingVector(np.frombuffer(payload, dtype="<f4"), source)


def stack_embeddings(conds: Sequence[Condition], source: str, dim: int) -> np.ndarray:
    out = np.zeros((len(conds), dim), dtype=np.float32)
    for i, c in enumerate(conds):
        if isinstance(c, EmbeddingVector) and c.source == source:
            out[i] = c.vector
    return out

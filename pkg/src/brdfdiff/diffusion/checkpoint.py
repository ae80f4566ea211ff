"""Versioned binary checkpoint for trained denoisers.

Layout: ``b"NMDF"``, u32 version, u32 header length, UTF-8 JSON header, then
the raw little-endian arrays listed in the header (offsets relative to the
end of the header).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError
from .denoiser import DenoiserConfig, build_denoiser
from .schedule import NoiseSchedule
from .training import DenoiserParams

MAGIC = b"NMDF"
VERSION = 1


def _arrays(params: DenoiserParams) -> dict:
    arrays = {"schedule.betas": params.schedule.betas.astype("<f8"),
              "norm.mean": params.mean.astype("<f8"),
              "norm.std": params.std.astype("<f8")}
    for k, v in params.model.state_dict().items():
        arrays["model." + k] = v.detach().cpu().numpy().astype("<f4")
    return arrays


def dumps_checkpoint(params: DenoiserParams) -> bytes:
    arrays = _arrays(params)
    index, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr).tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": params.config.to_dict(), "train_config": params.train_config,
                         "history": params.history, "arrays": index}, sort_keys=True).encode()
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)


def loads_checkpoint(data: bytes) -> DenoiserParams:
    if len(data) < 12 or data[:4] != MAGIC:
        raise DataError("not a denoiser checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[12:12 + hlen])
    except ValueError as exc:
        raise DataError("corrupt checkpoint header") from exc
    base = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = base + entry["offset"]
        if start + count * dt.itemsize > len(data):
            raise DataError(f"checkpoint truncated in array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, dtype=dt, count=count, offset=start).reshape(entry["shape"])
    model = build_denoiser(DenoiserConfig(**header["config"]))
    state = {k[len("model."):]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("model.")}
    model.load_state_dict(state)
    model.eval()
    return DenoiserParams(model, NoiseSchedule(arrays["schedule.betas"].copy()),
                          arrays["norm.mean"].astype(np.float64), arrays["norm.std"].astype(np.float64),
                          list(header.get("history") or []), header.get("train_config"))


def save_checkpoint(params: DenoiserParams, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps_checkpoint(params))
    return path


def load_checkpoint(path) -> DenoiserParams:
    return loads_checkpoint(Path(path).read_bytes())

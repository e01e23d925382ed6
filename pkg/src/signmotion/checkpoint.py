"""Versioned float32 checkpoint blobs shared by the VAE and decoder.

Layout: magic "SMCK", u32 version, u32 header length, UTF-8 JSON header
(tensor names, shapes, optional metadata), then the concatenated
little-endian float32 data.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

MAGIC = b"SMCK"
VERSION = 1


def save_checkpoint(
    state: Mapping[str, torch.Tensor], path: str | Path, extra: dict[str, Any] | None = None
) -> None:
    names = list(state.keys())
    arrays = [state[n].detach().cpu().numpy().astype("<f4") for n in names]
    header = {
        "names": names,
        "shapes": [list(a.shape) for a in arrays],
        "extra": extra or {},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(a.tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        out: dict[str, np.ndarray] = {}
        for name, shape in zip(header["names"], header["shapes"]):
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            out[name] = data.reshape(shape).copy()
    return out, header.get("extra", {})


def load_into_module(module: torch.nn.Module, path: str | Path) -> dict[str, Any]:
    """Load a checkpoint into a module, casting to its parameter dtype."""
    arrays, extra = load_checkpoint(path)
    state = module.state_dict()
    cast = {}
    for name, arr in arrays.items():
        if name not in state:
            raise KeyError(f"checkpoint tensor {name!r} not in module")
        cast[name] = torch.from_numpy(arr).to(state[name].dtype).reshape(state[name].shape)
    module.load_state_dict(cast)
    return extra

"""Single-file checkpoint container.

Layout::

    b"PVCKPT" | u16 version | u64 header length | header (UTF-8 JSON)
    | tensor payloads (little endian, in table order) | sha256 of all preceding bytes

The header holds ``meta`` (free-form JSON: stage, step, config snapshot,
config hash, loss history) and ``tensors``: a list of
``{name, shape, dtype, offset, nbytes}``. Floating tensors are stored as
float32; integer buffers as int64.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError

MAGIC = b"PVCKPT"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "i64": np.dtype("<i8")}


@dataclass
class Checkpoint:
    meta: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)  # name -> np.ndarray

    def add_module(self, prefix: str, module: torch.nn.Module):
        for name, t in module.state_dict().items():
            self.tensors[f"{prefix}/{name}"] = t.detach().cpu().numpy().copy()

    def load_module(self, prefix: str, module: torch.nn.Module):
        sd = module.state_dict()
        want = {k[len(prefix) + 1:]: v for k, v in self.tensors.items() if k.startswith(prefix + "/")}
        missing = sorted(set(sd) - set(want))
        if missing:
            raise FormatError(f"checkpoint lacks {prefix} tensors: {', '.join(missing[:5])}")
        with torch.no_grad():
            for name, arr in want.items():
                if name not in sd:
                    raise FormatError(f"unexpected tensor {prefix}/{name}")
                target = sd[name]
                src = torch.as_tensor(np.array(arr), dtype=target.dtype)
                if src.shape != target.shape:
                    # buffers such as the retained-code index change size after filtering
                    _assign_buffer(module, name, src)
                else:
                    target.copy_(src)

    def torch_table(self, prefix: str) -> dict:
        return {k: torch.as_tensor(np.array(v)) for k, v in self.tensors.items() if k.startswith(prefix + "/")}

    # --------------------------------------------------------------- bytes

    def to_bytes(self) -> bytes:
        table, payloads, offset = [], [], 0
        for name, arr in self.tensors.items():
            arr = np.asarray(arr)
            code = "i64" if np.issubdtype(arr.dtype, np.integer) else "f32"
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
            table.append({"name": name, "shape": list(arr.shape), "dtype": code,
                          "offset": offset, "nbytes": len(raw)})
            payloads.append(raw)
            offset += len(raw)
        header = json.dumps({"meta": self.meta, "tensors": table}, sort_keys=True,
                            separators=(",", ":"), ensure_ascii=True).encode()
        body = MAGIC + struct.pack("<HQ", VERSION, len(header)) + header + b"".join(payloads)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, raw: bytes, source: str = "<bytes>") -> "Checkpoint":
        if raw[:len(MAGIC)] != MAGIC:
            raise FormatError(f"{source}: not a polyvox checkpoint")
        if len(raw) < len(MAGIC) + 10 + 32:
            raise FormatError(f"{source}: truncated checkpoint")
        body, digest = raw[:-32], raw[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise FormatError(f"{source}: checksum mismatch")
        version, hlen = struct.unpack("<HQ", body[len(MAGIC):len(MAGIC) + 10])
        if version != VERSION:
            raise FormatError(f"{source}: unsupported checkpoint version {version}")
        start = len(MAGIC) + 10
        header = json.loads(body[start:start + hlen].decode())
        data = body[start + hlen:]
        tensors = {}
        for entry in header["tensors"]:
            dt = _DTYPES[entry["dtype"]]
            chunk = data[entry["offset"]:entry["offset"] + entry["nbytes"]]
            tensors[entry["name"]] = np.frombuffer(chunk, dtype=dt).reshape(entry["shape"]).copy()
        return cls(header["meta"], tensors)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        return cls.from_bytes(path.read_bytes(), str(path))


def _assign_buffer(module: torch.nn.Module, dotted: str, value: torch.Tensor):
    *parents, leaf = dotted.split(".")
    owner = module
    for p in parents:
        owner = getattr(owner, p)
    if leaf not in owner._buffers:
        raise FormatError(f"shape mismatch for parameter {dotted}")
    owner._buffers[leaf] = value.clone()


def save_checkpoint(path, meta: dict, tensors: dict) -> Path:
    return Checkpoint(meta, tensors).save(path)


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.load(path)

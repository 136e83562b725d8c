"""Speaker-embedding backends and the SECS metric.

Real encoders run out of process and hand over embeddings as files; the toy
backend is a seeded random projection of log-mel statistics.

Embedding file layout (little endian)::

    b"PVEMB" | u8 version (1) | u32 dim | dim x f32
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import torch

from .dsp import MelConfig, TorchMel, Waveform, mel_spectrogram
from .errors import ArgumentError, BackendError, FormatError

EMB_MAGIC = b"PVEMB"
EMB_VERSION = 1


@dataclass
class SpeakerEmbedding:
    vector: np.ndarray
    source: str = "toy"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


class SpeakerBackend(Protocol):
    name: str
    dim: int

    def embed(self, w: Waveform) -> SpeakerEmbedding: ...


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise BackendError("cannot normalise a zero or non-finite embedding")
    return v / n


class ToyBackend:
    """Unit-normalised fixed projection of per-bin log-mel mean and std.

    The clip's global log-mel mean is removed first, which makes the
    embedding insensitive to overall gain (up to the log floor).
    """

    name = "toy"

    def __init__(self, dim: int = 64, seed: int = 1234, mel: MelConfig = MelConfig()):
        self.dim = dim
        self.seed = seed
        self.mel = mel
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((2 * mel.n_mels, dim)) / np.sqrt(2 * mel.n_mels)

    def stats(self, w: Waveform) -> np.ndarray:
        if len(w) == 0:
            raise ArgumentError("empty waveform")
        m = mel_spectrogram(w, self.mel.with_rate(w.sample_rate_hz)).frames.astype(np.float64)
        m = m - m.mean()
        return np.concatenate([m.mean(axis=0), m.std(axis=0)])

    def embed(self, w: Waveform) -> SpeakerEmbedding:
        return SpeakerEmbedding(_unit(self.stats(w) @ self.projection), self.name)

    def torch_embedder(self, sample_rate_hz: int) -> "TorchToyEmbed":
        return TorchToyEmbed(self, sample_rate_hz)


class TorchToyEmbed(torch.nn.Module):
    """Differentiable copy of :class:`ToyBackend` (frozen), used by the SCL term."""

    def __init__(self, backend: ToyBackend, sample_rate_hz: int):
        super().__init__()
        self.mel = TorchMel(backend.mel.with_rate(sample_rate_hz))
        self.register_buffer("projection", torch.tensor(backend.projection, dtype=torch.float32),
                             persistent=False)

    def forward(self, wav):
        """[B, N] -> [B, dim] unit vectors."""
        m = self.mel(wav)
        m = m - m.mean(dim=(1, 2), keepdim=True)
        stats = torch.cat([m.mean(dim=1), m.std(dim=1, unbiased=False)], dim=-1)
        e = stats @ self.projection.to(wav.dtype)
        return e / e.norm(dim=-1, keepdim=True)


def write_embedding(path, vector):
    v = np.asarray(vector, dtype="<f4").reshape(-1)
    Path(path).write_bytes(EMB_MAGIC + struct.pack("<BI", EMB_VERSION, v.size) + v.tobytes())


def read_embedding(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:5] != EMB_MAGIC or len(raw) < 10:
        raise FormatError(f"{path}: not an embedding file")
    version, dim = struct.unpack("<BI", raw[5:10])
    if version != EMB_VERSION:
        raise FormatError(f"{path}: unsupported embedding version {version}")
    if len(raw) != 10 + 4 * dim:
        raise FormatError(f"{path}: expected {dim} floats")
    return np.frombuffer(raw[10:], dtype="<f4").astype(np.float64)


class FileBackend:
    """Looks up ``<audio path><suffix>`` written by an external encoder."""

    name = "file"

    def __init__(self, suffix: str = ".emb", dim: int = 0):
        self.suffix = suffix
        self.dim = dim

    def embed(self, w: Waveform) -> SpeakerEmbedding:
        if not w.path:
            raise BackendError("file backend needs waveforms loaded from disk")
        path = Path(str(w.path) + self.suffix)
        if not path.exists():
            raise BackendError(f"missing embedding file {path}")
        v = read_embedding(path)
        if self.dim and v.size != self.dim:
            raise BackendError(f"{path}: dim {v.size}, expected {self.dim}")
        return SpeakerEmbedding(_unit(v), self.name)


def get_backend(name: str, **kwargs) -> SpeakerBackend:
    if name == "toy":
        return ToyBackend(**kwargs)
    if name == "file":
        return FileBackend(**kwargs)
    raise ArgumentError(f"unknown speaker backend {name!r}")


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(np.clip(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)), -1.0, 1.0))


def secs(a: Waveform, b: Waveform, backend: SpeakerBackend) -> float:
    """Speaker-encoder cosine similarity."""
    if len(a) == 0 or len(b) == 0:
        raise ArgumentError("empty waveform")
    ea, eb = backend.embed(a).vector, backend.embed(b).vector
    if np.array_equal(ea, eb):
        return 1.0  # exact self-similarity; the dot product may round to 1 - ulp
    return float(np.clip(np.dot(ea, eb), -1.0, 1.0))

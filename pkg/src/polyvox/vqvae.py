"""Single-codebook mel VQ-VAE with post-training codebook filtering."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import kernels
from .dsp import CODEC_RATE, MelSpectrogram
from .errors import ArgumentError, InputTooShortError, NumericError

SAMPLES_PER_CODE = 1024
CODE_RATE_HZ = CODEC_RATE / SAMPLES_PER_CODE  # 21.533...


@dataclass
class VqVaeConfig:
    n_mels: int = 80
    hidden: int = 128
    dim: int = 32
    codebook_size: int = 64
    strides: tuple = (2, 2)
    beta: float = 0.25
    keep: int = 48
    mel_mean: float = -5.0
    mel_std: float = 2.5
    seed: int = 0

    @property
    def time_stride(self) -> int:
        return math.prod(self.strides)


@dataclass
class CodeSequence:
    codes: np.ndarray
    frame_rate_hz: float = CODE_RATE_HZ

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64).reshape(-1)

    def __len__(self):
        return self.codes.shape[0]


@dataclass
class Codebook:
    vectors: np.ndarray
    retained: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


def codes_for_samples(num_samples: int, hop: int = 256, stride: int = 4) -> int:
    """Code count for ``num_samples`` of codec-rate audio under centre-padded framing."""
    return (num_samples // hop + 1) // stride


def _conv_stack(channels: Sequence[int], strides, transpose: bool) -> nn.Sequential:
    layers = []
    for i, s in enumerate(strides):
        conv = nn.ConvTranspose1d if transpose else nn.Conv1d
        layers.append(conv(channels[i], channels[i + 1], 2 * s, stride=s, padding=s // 2))
        if i < len(strides) - 1:
            layers.append(nn.GELU())
    return nn.Sequential(*layers)


class VqVae(nn.Module):
    def __init__(self, cfg: VqVaeConfig = VqVaeConfig()):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            hid = [cfg.hidden] * (len(cfg.strides) - 1)
            self.encoder = _conv_stack([cfg.n_mels, *hid, cfg.dim], cfg.strides, transpose=False)
            self.decoder = _conv_stack([cfg.dim, *hid, cfg.n_mels], cfg.strides, transpose=True)
        self.codebook = nn.Parameter(torch.randn(cfg.codebook_size, cfg.dim, generator=gen))
        self.register_buffer("retained", torch.zeros(0, dtype=torch.int64))

    # -------------------------------------------------------------- plumbing

    @property
    def allowed(self) -> np.ndarray:
        if self.retained.numel():
            return self.retained.numpy()
        return np.arange(self.cfg.codebook_size)

    @property
    def n_codes(self) -> int:
        return len(self.allowed)

    def dense_remap(self) -> np.ndarray:
        """Original index -> dense 0..n_codes-1 (``-1`` for filtered-out codes)."""
        table = np.full(self.cfg.codebook_size, -1, dtype=np.int64)
        table[self.allowed] = np.arange(self.n_codes)
        return table

    def get_codebook(self) -> Codebook:
        ret = self.retained.numpy().copy() if self.retained.numel() else None
        return Codebook(self.codebook.detach().numpy().copy(), ret)

    def _norm(self, mel):
        return (mel - self.cfg.mel_mean) / self.cfg.mel_std

    def _denorm(self, x):
        return x * self.cfg.mel_std + self.cfg.mel_mean

    def encode_latents(self, mel: torch.Tensor) -> torch.Tensor:
        """[B, T_mel, n_mels] -> [B, T_mel // stride, dim]."""
        return self.encoder(self._norm(mel).transpose(1, 2)).transpose(1, 2)

    def decode_latents(self, z: torch.Tensor) -> torch.Tensor:
        return self._denorm(self.decoder(z.transpose(1, 2)).transpose(1, 2))

    def quantize(self, z_e: torch.Tensor, codes: Optional[torch.Tensor] = None):
        """Nearest allowed row for every latent frame, straight-through output."""
        if codes is None:
            allowed = torch.as_tensor(self.allowed)
            dist = ((z_e.detach()[..., None, :] - self.codebook[allowed]) ** 2).sum(-1)
            codes = allowed[dist.argmin(-1)]
        z_q_raw = self.codebook[codes]
        z_q = z_e + (z_q_raw - z_e).detach()
        return z_q, z_q_raw, codes

    def losses(self, mel: torch.Tensor, codes: Optional[torch.Tensor] = None):
        """Returns (recon, commit, codebook, codes) for a [B, T, n_mels] batch."""
        t_codes = mel.shape[1] // self.cfg.time_stride
        target = mel[:, :t_codes * self.cfg.time_stride]
        z_e = self.encode_latents(target)
        z_q, z_q_raw, codes = self.quantize(z_e, codes)
        recon = F.mse_loss(self.decode_latents(z_q), target)
        commit = F.mse_loss(z_e, z_q_raw.detach())
        cb = F.mse_loss(z_q_raw, z_e.detach())
        return recon, commit, cb, codes


def _check_mel(mel: MelSpectrogram, model: VqVae):
    if mel.n_mels != model.cfg.n_mels:
        raise ArgumentError(f"mel has {mel.n_mels} bins, model expects {model.cfg.n_mels}")
    if len(mel) < model.cfg.time_stride:
        raise InputTooShortError(f"need at least {model.cfg.time_stride} mel frames, got {len(mel)}")


@torch.no_grad()
def latents_of(mel: MelSpectrogram, model: VqVae) -> np.ndarray:
    _check_mel(mel, model)
    t = len(mel) // model.cfg.time_stride * model.cfg.time_stride
    x = torch.as_tensor(mel.frames[None, :t], dtype=model.codebook.dtype)
    return model.encode_latents(x)[0].double().numpy()


def vq_encode(mel: MelSpectrogram, model: VqVae) -> CodeSequence:
    z = latents_of(mel, model)
    cb = model.codebook.detach().double().numpy()
    return CodeSequence(kernels.nearest_codes(z, cb, model.allowed))


@torch.no_grad()
def vq_decode(codes: CodeSequence, model: VqVae) -> MelSpectrogram:
    c = np.asarray(codes.codes if isinstance(codes, CodeSequence) else codes, dtype=np.int64)
    if c.size == 0:
        raise ArgumentError("empty code sequence")
    if c.min() < 0 or c.max() >= model.cfg.codebook_size:
        raise ArgumentError("code index outside codebook")
    if model.retained.numel() and not np.isin(c, model.allowed).all():
        raise ArgumentError("code not in retained set")
    z = model.codebook[torch.as_tensor(c)][None]
    mel = model.decode_latents(z)[0].float().numpy()
    return MelSpectrogram(mel, hop_length=SAMPLES_PER_CODE // model.cfg.time_stride, sample_rate_hz=CODEC_RATE)


def stack_crop(mels: Sequence[MelSpectrogram], stride: int) -> torch.Tensor:
    """Crop a batch to its shortest member (multiple of ``stride``) and stack."""
    t = min(len(m) for m in mels) // stride * stride
    if t == 0:
        raise InputTooShortError("batch member shorter than one code frame")
    return torch.as_tensor(np.stack([m.frames[:t] for m in mels]))


def vq_train_step(batch: Sequence[MelSpectrogram], model: VqVae, optimizer) -> tuple[float, float, float]:
    """One optimizer step on recon + codebook + beta * commitment."""
    if not batch:
        raise ArgumentError("empty batch")
    x = stack_crop(batch, model.cfg.time_stride).to(model.codebook.dtype)
    recon, commit, cb, _ = model.losses(x)
    total = recon + cb + model.cfg.beta * commit
    if not torch.isfinite(total):
        raise NumericError(f"non-finite VQ loss: recon={recon.item()} commit={commit.item()} codebook={cb.item()}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return recon.item(), commit.item(), cb.item()


@torch.no_grad()
def init_codebook(model: VqVae, mels: Sequence[MelSpectrogram], seed: int = 0):
    """Seed codebook rows from encoder outputs so early training has few dead codes."""
    z = np.concatenate([latents_of(m, model) for m in mels])
    rng = np.random.default_rng(seed)
    k = model.cfg.codebook_size
    idx = rng.choice(len(z), size=k, replace=len(z) < k)
    rows = z[idx] + 0.01 * rng.standard_normal((k, z.shape[1]))
    model.codebook.copy_(torch.as_tensor(rows, dtype=model.codebook.dtype))


@torch.no_grad()
def restart_dead_codes(model: VqVae, mels: Sequence[MelSpectrogram], rng: np.random.Generator,
                       min_count: int = 1) -> int:
    """Re-seed rows used fewer than ``min_count`` times from random encoder outputs."""
    counts = count_codes(model, mels)
    dead = np.flatnonzero(counts < min_count)
    if dead.size == 0:
        return 0
    z = np.concatenate([latents_of(m, model) for m in mels])
    rows = z[rng.choice(len(z), size=dead.size, replace=len(z) < dead.size)]
    rows = rows + 0.01 * rng.standard_normal(rows.shape)
    model.codebook[torch.as_tensor(dead)] = torch.as_tensor(rows, dtype=model.codebook.dtype)
    return int(dead.size)


def count_codes(model: VqVae, corpus: Sequence[MelSpectrogram]) -> np.ndarray:
    counts = np.zeros(model.cfg.codebook_size, dtype=np.int64)
    for mel in corpus:
        counts += np.bincount(vq_encode(mel, model).codes, minlength=model.cfg.codebook_size)
    return counts


def rank_codes(counts: np.ndarray) -> np.ndarray:
    """Descending count, ties (including dead codes) by ascending index."""
    return np.lexsort((np.arange(len(counts)), -counts))


def filter_codebook(model: VqVae, corpus: Sequence[MelSpectrogram], keep: int) -> VqVae:
    if keep <= 0:
        raise ArgumentError("keep must be positive")
    if keep > model.cfg.codebook_size:
        raise ArgumentError(f"keep={keep} exceeds codebook size {model.cfg.codebook_size}")
    if not corpus:
        raise ArgumentError("empty counting corpus")
    counts = count_codes(model, corpus)
    out = copy.deepcopy(model)
    out.retained = torch.as_tensor(rank_codes(counts)[:keep].copy())
    return out

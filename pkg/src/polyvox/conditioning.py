"""Reference-audio conditioning: self-attention stack plus a Perceiver-style resampler.

The resampler cross-attends a fixed set of learned queries over all reference
frames, so the output always has ``num_latents`` rows no matter how long the
reference is.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .dsp import MelSpectrogram
from .errors import ArgumentError
from .layers import Block, FeedForward, MultiHeadAttention


@dataclass
class ConditioningConfig:
    n_mels: int = 80
    dim: int = 64
    layers: int = 2
    heads: int = 4
    num_latents: int = 4
    mel_mean: float = -5.0
    mel_std: float = 2.5
    seed: int = 0


@dataclass
class ConditioningLatents:
    latents: np.ndarray  # [L, D]

    @property
    def shape(self):
        return self.latents.shape


class PerceiverResampler(nn.Module):
    """One pre-LN cross-attention + feed-forward block over learned queries."""

    def __init__(self, dim: int, heads: int, num_latents: int):
        super().__init__()
        self.latents = nn.Parameter(torch.randn(num_latents, dim) * 0.02)
        self.ln_q = nn.LayerNorm(dim)
        self.ln_kv = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.ln_ff = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)
        self.ln_out = nn.LayerNorm(dim)

    def forward(self, x, key_mask=None, queries=None, return_weights=False):
        q = self.latents if queries is None else queries
        q = q.expand(x.shape[0], -1, -1) if q.dim() == 2 else q
        attended, weights = self.attn(self.ln_q(q), context=self.ln_kv(x), key_mask=key_mask,
                                      return_weights=True)
        h = q + attended
        h = h + self.ff(self.ln_ff(h))
        out = self.ln_out(h)
        return (out, weights) if return_weights else out


def resampler_forward(keys: torch.Tensor, queries: torch.Tensor, resampler: PerceiverResampler):
    """Cross-attend ``queries`` [L, D] over ``keys`` [T, D]; returns ([L, D], weights [H, L, T])."""
    if keys.dim() != 2 or queries.dim() != 2:
        raise ArgumentError("keys and queries must be 2-D matrices")
    if keys.shape[0] < 1:
        raise ArgumentError("need at least one key frame")
    if keys.shape[1] != queries.shape[1] or keys.shape[1] != resampler.attn.dim:
        raise ArgumentError(f"dimension mismatch: keys {tuple(keys.shape)}, queries {tuple(queries.shape)}")
    out, w = resampler(keys[None], queries=queries[None], return_weights=True)
    return out[0], w[0]


class ConditioningEncoder(nn.Module):
    def __init__(self, cfg: ConditioningConfig = ConditioningConfig()):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.in_conv = nn.Conv1d(cfg.n_mels, cfg.dim, 3, padding=1)
            self.blocks = nn.ModuleList(Block(cfg.dim, cfg.heads, causal=False) for _ in range(cfg.layers))
            self.resampler = PerceiverResampler(cfg.dim, cfg.heads, cfg.num_latents)

    def forward(self, mel: torch.Tensor, key_mask=None, return_weights=False):
        """[B, T, n_mels] -> [B, L, dim]."""
        x = (mel - self.cfg.mel_mean) / self.cfg.mel_std
        if key_mask is not None:
            # padded frames look like the conv's own zero padding
            x = x * key_mask[..., None].to(x.dtype)
        x = self.in_conv(x.transpose(1, 2)).transpose(1, 2)
        for blk in self.blocks:
            x = blk(x, key_mask=key_mask)
        return self.resampler(x, key_mask=key_mask, return_weights=return_weights)


def pad_mels(mels: Sequence[np.ndarray]):
    """Stack variable-length [T, n_mels] arrays into a padded batch and validity mask."""
    t = max(m.shape[0] for m in mels)
    x = np.zeros((len(mels), t, mels[0].shape[1]), dtype=np.float32)
    mask = np.zeros((len(mels), t), dtype=bool)
    for i, m in enumerate(mels):
        x[i, :len(m)] = m
        mask[i, :len(m)] = True
    return torch.as_tensor(x), torch.as_tensor(mask)


@torch.no_grad()
def condition(mels: Sequence[MelSpectrogram], enc: ConditioningEncoder) -> ConditioningLatents:
    """Concatenate the reference clips along time and summarise them."""
    if not mels:
        raise ArgumentError("no reference mels")
    if any(len(m) < 1 for m in mels):
        raise ArgumentError("reference mel with no frames")
    frames = np.concatenate([m.frames for m in mels], axis=0)
    if frames.shape[1] != enc.cfg.n_mels:
        raise ArgumentError(f"reference has {frames.shape[1]} mel bins, encoder expects {enc.cfg.n_mels}")
    x = torch.as_tensor(frames[None], dtype=enc.in_conv.weight.dtype)
    return ConditioningLatents(enc(x)[0].numpy())

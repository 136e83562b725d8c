"""Attention building blocks shared by the conditioning encoder and the AR model."""
from __future__ import annotations

import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArgumentError


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with explicit weights, masks and a KV cache.

    ``key_mask`` is [B, T_k] with True on valid keys. ``cache`` is a dict that
    accumulates keys/values across calls (self-attention decoding only).
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ArgumentError(f"{heads} heads do not divide width {dim}")
        self.dim, self.heads = dim, heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.dim // self.heads).transpose(1, 2)

    def forward(self, x, context=None, causal=False, key_mask=None, cache=None, return_weights=False):
        if x.shape[-1] != self.dim or (context is not None and context.shape[-1] != self.dim):
            raise ArgumentError(f"attention width mismatch, expected {self.dim}")
        src = x if context is None else context
        q = self._split(self.q_proj(x))
        k = self._split(self.k_proj(src))
        v = self._split(self.v_proj(src))
        offset = 0
        if cache is not None:
            if "k" in cache:
                offset = cache["k"].shape[2]
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.dim // self.heads)
        t_q, t_k = q.shape[2], k.shape[2]
        if causal:
            allowed = torch.arange(t_k)[None, :] <= (torch.arange(t_q)[:, None] + offset)
            scores = scores.masked_fill(~allowed, float("-inf"))
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(x.shape[0], t_q, self.dim)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * mult)
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-LN transformer block."""

    def __init__(self, dim: int, heads: int, causal: bool):
        super().__init__()
        self.causal = causal
        self.ln1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim)

    def forward(self, x, key_mask: Optional[torch.Tensor] = None, cache=None):
        x = x + self.attn(self.ln1(x), causal=self.causal, key_mask=key_mask, cache=cache)
        return x + self.ff(self.ln2(x))

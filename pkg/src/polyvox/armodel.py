"""Decoder-only transformer over [conditioning | text | audio codes].

Sequence layout::

    cond_0 .. cond_{L-1}  BOS_TEXT t_1 .. t_n EOS_TEXT  START_AUDIO c_1 .. c_m STOP_AUDIO

Conditioning latents enter as prefix embeddings and carry no loss. Audio codes
are dense indices into the retained codebook; ``START``/``STOP`` sit just above
them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArgumentError, SequenceLengthError
from .layers import Block


@dataclass
class ArConfig:
    text_vocab: int = 256
    n_codes: int = 48
    cond_dim: int = 64
    num_latents: int = 4
    dim: int = 128
    layers: int = 4
    heads: int = 4
    max_text_positions: int = 128
    max_audio_positions: int = 380
    text_weight: float = 0.25
    audio_weight: float = 1.0
    seed: int = 0

    @property
    def start_audio(self) -> int:
        return self.n_codes

    @property
    def stop_audio(self) -> int:
        return self.n_codes + 1

    @property
    def audio_vocab(self) -> int:
        return self.n_codes + 2

    @property
    def max_positions(self) -> int:
        return self.num_latents + self.max_text_positions + self.max_audio_positions


@dataclass
class SequenceLayout:
    """A padded batch in the layout above.

    ``text`` rows are the tokenizer ids (language tag first) without BOS/EOS;
    ``codes`` rows are dense audio ids without START/STOP (may be empty lists
    when only the prompt is wanted).
    """

    cond: torch.Tensor  # [B, L, cond_dim]
    text: list
    codes: list

    def __post_init__(self):
        if len(self.text) != self.cond.shape[0] or len(self.codes) != self.cond.shape[0]:
            raise ArgumentError("layout rows disagree on batch size")


class ArModel(nn.Module):
    def __init__(self, cfg: ArConfig, bos_id: int = 1, eos_id: int = 2, pad_id: int = 0):
        super().__init__()
        self.cfg = cfg
        self.bos_id, self.eos_id, self.pad_id = bos_id, eos_id, pad_id
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.cond_proj = nn.Linear(cfg.cond_dim, cfg.dim)
            self.cond_pos = nn.Embedding(cfg.num_latents, cfg.dim)
            self.text_embed = nn.Embedding(cfg.text_vocab, cfg.dim)
            self.text_pos = nn.Embedding(cfg.max_text_positions, cfg.dim)
            self.code_embed = nn.Embedding(cfg.audio_vocab, cfg.dim)
            self.audio_pos = nn.Embedding(cfg.max_audio_positions, cfg.dim)
            self.blocks = nn.ModuleList(Block(cfg.dim, cfg.heads, causal=True) for _ in range(cfg.layers))
            self.ln_f = nn.LayerNorm(cfg.dim)
            self.text_head = nn.Linear(cfg.dim, cfg.text_vocab)
            self.audio_head = nn.Linear(cfg.dim, cfg.audio_vocab)
            for emb in (self.cond_pos, self.text_embed, self.text_pos, self.code_embed, self.audio_pos):
                nn.init.normal_(emb.weight, std=0.02)

    # ------------------------------------------------------------ embedding

    def embed_cond(self, cond):
        return self.cond_proj(cond) + self.cond_pos.weight[:cond.shape[1]]

    def embed_text(self, ids, start: int = 0):
        pos = torch.arange(start, start + ids.shape[1])
        return self.text_embed(ids) + self.text_pos(pos)

    def embed_audio(self, ids, start: int = 0):
        pos = torch.arange(start, start + ids.shape[1])
        if start + ids.shape[1] > self.cfg.max_audio_positions:
            raise SequenceLengthError(f"audio segment exceeds {self.cfg.max_audio_positions} positions")
        return self.code_embed(ids) + self.audio_pos(pos)

    def backbone(self, h, key_mask=None, caches=None):
        for i, blk in enumerate(self.blocks):
            h = blk(h, key_mask=key_mask, cache=None if caches is None else caches[i])
        return self.ln_f(h)

    # -------------------------------------------------------------- batches

    def _tensors(self, layout: SequenceLayout):
        b = len(layout.text)
        text_rows = [[self.bos_id, *t, self.eos_id] for t in layout.text]
        audio_rows = [[self.cfg.start_audio, *c, self.cfg.stop_audio] for c in layout.codes]
        t_len = max(len(r) for r in text_rows)
        a_len = max(len(r) for r in audio_rows)
        if t_len > self.cfg.max_text_positions:
            raise SequenceLengthError(f"text segment of {t_len} exceeds {self.cfg.max_text_positions} positions")
        if a_len > self.cfg.max_audio_positions:
            raise SequenceLengthError(f"audio segment of {a_len} exceeds {self.cfg.max_audio_positions} positions")
        text = torch.full((b, t_len), self.pad_id, dtype=torch.long)
        audio = torch.full((b, a_len), self.cfg.stop_audio, dtype=torch.long)
        text_mask = torch.zeros((b, t_len), dtype=torch.bool)
        audio_mask = torch.zeros((b, a_len), dtype=torch.bool)
        for i, (tr, ar) in enumerate(zip(text_rows, audio_rows)):
            text[i, :len(tr)] = torch.as_tensor(tr)
            audio[i, :len(ar)] = torch.as_tensor(ar)
            text_mask[i, :len(tr)] = True
            audio_mask[i, :len(ar)] = True
        return text, audio, text_mask, audio_mask

    def forward(self, layout: SequenceLayout):
        """Returns dict with hidden states, text/audio logits and index bookkeeping."""
        text, audio, text_mask, audio_mask = self._tensors(layout)
        cond = layout.cond.to(self.cond_proj.weight.dtype)
        n_cond = cond.shape[1]
        h = torch.cat([self.embed_cond(cond), self.embed_text(text), self.embed_audio(audio)], dim=1)
        key_mask = torch.cat([torch.ones(cond.shape[:2], dtype=torch.bool), text_mask, audio_mask], dim=1)
        hidden = self.backbone(h, key_mask=key_mask)
        t0 = n_cond
        a0 = n_cond + text.shape[1]
        return {
            "hidden": hidden,
            "text_logits": self.text_head(hidden[:, t0:a0]),
            "audio_logits": self.audio_head(hidden[:, a0:]),
            "text": text, "audio": audio, "text_mask": text_mask, "audio_mask": audio_mask,
            "audio_offset": a0,
        }

    # ------------------------------------------------------------- decoding

    def start_session(self, cond: torch.Tensor, text_ids: Sequence[int]) -> "DecodingSession":
        return DecodingSession(self, cond, text_ids)


class DecodingSession:
    """Incremental decoding state for one utterance. Single-owner, not thread-shared."""

    def __init__(self, model: ArModel, cond: torch.Tensor, text_ids: Sequence[int]):
        self.model = model
        self.caches = [dict() for _ in model.blocks]
        self.n_audio = 0
        if cond.dim() == 2:
            cond = cond[None]
        text = torch.as_tensor([[model.bos_id, *text_ids, model.eos_id]])
        if text.shape[1] > model.cfg.max_text_positions:
            raise SequenceLengthError("text prompt too long")
        with torch.no_grad():
            h = torch.cat([model.embed_cond(cond.to(model.cond_proj.weight.dtype)), model.embed_text(text),
                           model.embed_audio(torch.tensor([[model.cfg.start_audio]]))], dim=1)
            out = model.backbone(h, caches=self.caches)
        self.n_audio = 1
        self.last_hidden = out[0, -1]
        self.logits = model.audio_head(self.last_hidden).detach()

    @property
    def remaining(self) -> int:
        return self.model.cfg.max_audio_positions - self.n_audio

    @torch.no_grad()
    def step(self, code: int) -> torch.Tensor:
        h = self.model.embed_audio(torch.tensor([[code]]), start=self.n_audio)
        out = self.model.backbone(h, caches=self.caches)
        self.n_audio += 1
        self.last_hidden = out[0, -1]
        self.logits = self.model.audio_head(self.last_hidden)
        return self.logits


def _masked_ce(logits, targets, mask):
    if mask.sum() == 0:
        raise ArgumentError("no unmasked positions for the loss")
    ce = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
    m = mask.reshape(-1).to(ce.dtype)
    return (ce * m).sum() / m.sum()


def ar_loss(layout: SequenceLayout, model: ArModel, out=None):
    """Mean next-token cross-entropy over text and audio positions: (text_ce, audio_ce)."""
    out = out if out is not None else model(layout)
    # position i predicts token i+1 within the same segment
    text_mask = out["text_mask"][:, 1:]
    audio_mask = out["audio_mask"][:, 1:]
    if not any(len(c) for c in layout.codes):
        raise ArgumentError("layout has no ground-truth codes")
    text_ce = _masked_ce(out["text_logits"][:, :-1], out["text"][:, 1:], text_mask)
    audio_ce = _masked_ce(out["audio_logits"][:, :-1], out["audio"][:, 1:], audio_mask)
    return text_ce, audio_ce


def total_loss(text_ce, audio_ce, cfg: ArConfig):
    return cfg.text_weight * text_ce + cfg.audio_weight * audio_ce


def latents_for_vocoder(layout: SequenceLayout, model: ArModel, out=None) -> list[np.ndarray]:
    """Final hidden states at the audio-code positions, one [T_codes, D] array per row."""
    if not all(len(c) for c in layout.codes):
        raise ArgumentError("layout row lacks an audio segment")
    with torch.no_grad():
        out = out if out is not None else model(layout)
    a0 = out["audio_offset"]
    return [out["hidden"][i, a0 + 1:a0 + 1 + len(c)].double().numpy() for i, c in enumerate(layout.codes)]


def greedy_decode(model: ArModel, cond: torch.Tensor, text_ids: Sequence[int], max_codes: int = 256) -> list[int]:
    """Argmax decoding until STOP (START/STOP never emitted as codes)."""
    sess = model.start_session(cond, text_ids)
    out: list[int] = []
    for _ in range(min(max_codes, sess.remaining)):
        logits = sess.logits.clone()
        logits[model.cfg.start_audio] = float("-inf")
        if not out:
            logits[model.cfg.stop_audio] = float("-inf")
        nxt = int(torch.argmax(logits))
        if nxt == model.cfg.stop_audio:
            break
        out.append(nxt)
        sess.step(nxt)
    return out

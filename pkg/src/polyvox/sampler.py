"""Constrained stochastic decoding over audio-code logits.

Per step the order is fixed: repetition penalty, temperature, top-k, softmax,
top-p, categorical draw. Transforms work on float64 numpy vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import torch

from .errors import ArgumentError, NumericError

PIPELINE_STAGES = ("repetition_penalty", "temperature", "top_k", "softmax", "top_p", "draw")


@dataclass
class SamplingConfig:
    temperature: float = 0.75
    top_k: int = 50
    top_p: float = 0.85
    repetition_penalty: float = 10.0
    length_penalty: float = 1.0
    max_codes: int = 256
    seed: int = 0
    greedy: bool = False
    best_of: int = 1
    penalty_window: int = 0  # 0 = whole utterance

    def __post_init__(self):
        if not self.temperature > 0:
            raise ArgumentError("temperature must be > 0")
        if not 0 < self.top_p <= 1:
            raise ArgumentError("top_p must lie in (0, 1]")
        if self.repetition_penalty < 1:
            raise ArgumentError("repetition penalty must be >= 1")
        if self.top_k < 0:
            raise ArgumentError("top_k must be >= 0")
        if self.best_of < 1 or self.max_codes < 1:
            raise ArgumentError("best_of and max_codes must be >= 1")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator owned by one decoding session."""
    return np.random.Generator(np.random.Philox(seed))


def apply_repetition_penalty(logits, history: Iterable[int], p: float) -> np.ndarray:
    if p < 1:
        raise ArgumentError("repetition penalty must be >= 1")
    out = np.array(logits, dtype=np.float64)
    idx = np.fromiter(set(history), dtype=np.int64)
    if p == 1 or idx.size == 0:
        return out
    sel = out[idx]
    out[idx] = np.where(sel > 0, sel / p, sel * p)
    return out


def apply_temperature(logits, t: float) -> np.ndarray:
    if not t > 0:
        raise ArgumentError("temperature must be > 0")
    return np.asarray(logits, dtype=np.float64) / t


def apply_top_k(logits, k: int) -> np.ndarray:
    out = np.array(logits, dtype=np.float64)
    if k <= 0 or k >= out.size:
        return out
    # stable sort on -logits keeps the lower index first among ties
    keep = np.argsort(-out, kind="stable")[:k]
    mask = np.ones(out.size, dtype=bool)
    mask[keep] = False
    out[mask] = -np.inf
    return out


def softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - np.max(x))
    return e / e.sum()


def apply_top_p(probs, p: float) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if p >= 1.0:
        return probs.copy()
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    # smallest prefix whose mass reaches p; tolerance absorbs summation rounding
    n_keep = int(np.searchsorted(csum, p - 1e-12, side="left")) + 1
    out = np.zeros_like(probs)
    kept = order[:n_keep]
    out[kept] = probs[kept]
    # reciprocal scaling: [0.5, 0.3] / 0.8 lands exactly on [0.625, 0.375]
    return out * (1.0 / out.sum())


def next_distribution(logits, history, cfg: SamplingConfig, trace: Optional[list] = None) -> np.ndarray:
    """Probability vector after every transform except the draw."""
    note = trace.append if trace is not None else (lambda _: None)
    x = apply_repetition_penalty(logits, history, cfg.repetition_penalty)
    note("repetition_penalty")
    x = apply_temperature(x, cfg.temperature)
    note("temperature")
    x = apply_top_k(x, cfg.top_k)
    note("top_k")
    probs = softmax(x)
    note("softmax")
    probs = apply_top_p(probs, cfg.top_p)
    note("top_p")
    return probs


def draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    # guard against u*sum landing past the last nonzero due to rounding
    nz = np.flatnonzero(probs)
    return int(min(max(idx, nz[0]), nz[-1]))


def sample_next(logits, history, cfg: SamplingConfig, rng, trace: Optional[list] = None) -> int:
    logits = np.asarray(logits, dtype=np.float64)
    if cfg.greedy:
        if trace is not None:
            trace.append("greedy")
        return int(np.argmax(logits))
    probs = next_distribution(logits, history, cfg, trace)
    tok = draw(probs, rng)
    if trace is not None:
        trace.append("draw")
    return tok


def sequence_score(logprob_sum: float, length: int, length_penalty: float) -> float:
    """Length-normalised score used only when reranking best-of-n candidates."""
    return logprob_sum / max(length, 1) ** length_penalty


def _sample_once(model, cond, text_ids, cfg: SamplingConfig, rng) -> tuple[list[int], float]:
    sess = model.start_session(cond, text_ids)
    codes: list[int] = []
    logprob = 0.0
    start, stop = model.cfg.start_audio, model.cfg.stop_audio
    limit = min(cfg.max_codes, sess.remaining)
    for step in range(limit):
        logits = sess.logits.double().numpy().copy()
        if not np.all(np.isfinite(logits)):
            raise NumericError(f"non-finite logits at decoding step {step}")
        logits[start] = -np.inf
        if not codes:
            logits[stop] = -np.inf  # at least one code
        history = codes[-cfg.penalty_window:] if cfg.penalty_window else codes
        tok = sample_next(logits, history, cfg, rng)
        logprob += float(np.log(softmax(logits)[tok]))
        if tok == stop:
            break
        codes.append(tok)
        if step < limit - 1:
            sess.step(tok)
    return codes, logprob


def sample_codes(model, cond, text_ids, cfg: SamplingConfig, rng: Optional[np.random.Generator] = None) -> list[int]:
    """Dense audio ids, STOP stripped. Deterministic for a fixed seed."""
    rng = rng if rng is not None else make_rng(cfg.seed)
    cond = torch.as_tensor(np.asarray(cond), dtype=torch.float32) if not torch.is_tensor(cond) else cond
    best, best_score = None, -np.inf
    for _ in range(cfg.best_of):
        codes, lp = _sample_once(model, cond, text_ids, cfg, rng)
        score = sequence_score(lp, len(codes) + 1, cfg.length_penalty)
        if best is None or score > best_score:
            best, best_score = codes, score
    return best

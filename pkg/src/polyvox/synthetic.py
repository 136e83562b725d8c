"""Synthetic speakers and corpora for smoke tests.

Each character of the text becomes a short harmonic segment whose two formant
peaks depend on the character and are scaled by the speaker; the speaker also
sets pitch, spectral tilt and breath noise. That gives audio that is tied to
the text and carries a measurable speaker identity.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import CODEC_RATE, Waveform, save_wav
from .eval import Manifest, ManifestRecord, save_manifest

SEGMENT_S = 0.07
_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]


@dataclass(frozen=True)
class SyntheticSpeaker:
    id: str
    f0: float
    formant_scale: float
    tilt: float
    breath: float


def speaker_pool(n: int, seed: int = 0) -> list[SyntheticSpeaker]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        out.append(SyntheticSpeaker(f"spk{i:02d}", float(rng.uniform(95, 260)), float(rng.uniform(0.8, 1.25)),
                                    float(rng.uniform(0.55, 0.9)), float(rng.uniform(0.002, 0.02))))
    return out


def random_text(rng: np.random.Generator, words=(2, 3)) -> str:
    n = int(rng.integers(words[0], words[1] + 1))
    return " ".join("".join(rng.choice(_SYLLABLES, size=int(rng.integers(1, 3)))) for _ in range(n))


def render(text: str, spk: SyntheticSpeaker, seed: int = 0, sample_rate_hz: int = CODEC_RATE) -> Waveform:
    rng = np.random.default_rng(seed)
    n_seg = int(SEGMENT_S * sample_rate_hz)
    t = np.arange(n_seg) / sample_rate_hz
    fade = np.minimum(1.0, np.minimum(np.arange(n_seg), np.arange(n_seg)[::-1]) / (0.005 * sample_rate_hz))
    n_harm = int(7000 // spk.f0)
    h = np.arange(1, n_harm + 1)
    pieces = [np.zeros(n_seg // 2)]
    for ch in text.lower():
        if ch == " " or not ch.isalpha():
            pieces.append(np.zeros(n_seg // 2))
            continue
        o = ord(ch)
        f1 = (250 + 70 * (o % 9)) * spk.formant_scale
        f2 = (900 + 160 * ((o // 3) % 11)) * spk.formant_scale
        freqs = h * spk.f0
        amp = (np.exp(-((freqs - f1) / 120) ** 2) + 0.6 * np.exp(-((freqs - f2) / 200) ** 2)) * spk.tilt ** h
        phase = rng.uniform(0, 2 * np.pi, n_harm)
        seg = (amp[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phase[:, None])).sum(0)
        pieces.append(seg * fade)
    pieces.append(np.zeros(n_seg // 2))
    y = np.concatenate(pieces)
    y = y / (np.abs(y).max() + 1e-9) * 0.5
    y = y + spk.breath * rng.standard_normal(len(y))
    return Waveform(np.clip(y, -1, 1).astype(np.float32), sample_rate_hz)


def write_corpus(out_dir, speakers, utts_per_speaker: int, seed: int = 0,
                 languages=("en", "es"), name: str = "manifest.jsonl") -> Manifest:
    """Render ``utts_per_speaker`` utterances for each speaker and write WAVs plus a manifest."""
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    k = 0
    for spk in speakers:
        for j in range(utts_per_speaker):
            text = random_text(rng)
            lang = languages[k % len(languages)]
            w = render(text, spk, seed=seed * 1000 + k)
            rel = f"wavs/{spk.id}_{j:03d}.wav"
            save_wav(out_dir / rel, w)
            records.append(ManifestRecord(rel, text, lang, spk.id, w.duration_s))
            k += 1
    m = Manifest(records, out_dir)
    save_manifest(m, out_dir / name)
    return m


def smoke_corpus(out_dir, seed: int = 0) -> tuple[Manifest, Manifest, SyntheticSpeaker]:
    """20 training utterances (4 speakers x 5) plus an adaptation set for a held-out speaker."""
    pool = speaker_pool(5, seed)
    train = write_corpus(out_dir, pool[:4], 5, seed=seed, name="manifest.jsonl")
    held = write_corpus(out_dir, pool[4:], 8, seed=seed + 1, name="heldout.jsonl")
    return train, held, pool[4]


@dataclass
class SmokeRun:
    root: Path
    ckpt_dir: Path
    train: Manifest
    heldout: Manifest
    speaker: SyntheticSpeaker
    seconds: float


def smoke_pipeline(root, cfg=None, seed: int = 0) -> SmokeRun:
    """Render the smoke corpus and train every stage with the smoke preset."""
    import time

    from .config import smoke_config
    from .training import train_all

    root = Path(root)
    cfg = cfg or smoke_config()
    t0 = time.perf_counter()
    train_m, held, spk = smoke_corpus(root / "data", seed)
    train_all(cfg, train_m, root / "ckpt")
    return SmokeRun(root, root / "ckpt", train_m, held, spk, time.perf_counter() - t0)

"""End-to-end inference: text + reference clips -> 24 kHz waveform."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .armodel import SequenceLayout, latents_for_vocoder
from .conditioning import condition
from .dsp import Waveform, mel_spectrogram, resample
from .errors import ArgumentError, DependencyError
from .frontend import check_language, encode
from .sampler import SamplingConfig, sample_codes
from .speaker import SpeakerEmbedding
from .training.loop import cfg_from_meta, load_armodel, load_vocoder, speaker_backend, stage_path
from .vocoder import vocode
from .vqvae import CODE_RATE_HZ


@dataclass
class SynthesisResult:
    audio: Waveform
    codes: list
    seed: int

    @property
    def code_count(self) -> int:
        return len(self.codes)


class Pipeline:
    def __init__(self, ckpt_dir):
        ckpt_dir = Path(ckpt_dir)
        for stage in ("vqvae", "armodel", "vocoder"):
            if not stage_path(ckpt_dir, stage).exists():
                raise DependencyError(f"missing checkpoint {stage_path(ckpt_dir, stage)}")
        self.stack, self.vocab, ck = load_armodel(stage_path(ckpt_dir, "armodel"))
        self.cfg = cfg_from_meta(ck.meta)
        self.gen, _ = load_vocoder(stage_path(ckpt_dir, "vocoder"))
        self.backend = speaker_backend(self.cfg)
        self.mel_cfg = self.cfg.dsp.mel()

    def _codec_rate(self, w: Waveform) -> Waveform:
        if w.sample_rate_hz == self.mel_cfg.sample_rate_hz:
            return w
        return resample(w, self.mel_cfg.sample_rate_hz, self.cfg.dsp.resample_mode)

    def reference(self, refs: Sequence[Waveform]) -> tuple[torch.Tensor, SpeakerEmbedding]:
        if not refs:
            raise ArgumentError("need at least one reference clip")
        refs = [self._codec_rate(w) for w in refs]
        mels = [mel_spectrogram(w, self.mel_cfg) for w in refs]
        cond = torch.as_tensor(condition(mels, self.stack.cond).latents)
        joined = Waveform(np.concatenate([w.samples for w in refs]), self.mel_cfg.sample_rate_hz)
        return cond, self.backend.embed(joined)

    def codes_to_audio(self, cond: torch.Tensor, text_ids, codes, spk: SpeakerEmbedding) -> Waveform:
        layout = SequenceLayout(cond[None], [list(text_ids)], [list(codes)])
        lat = latents_for_vocoder(layout, self.stack.ar)[0]
        return vocode(lat, spk, self.gen)

    def synthesize(self, text: str, lang: str, refs: Sequence[Waveform],
                   sampling: Optional[SamplingConfig] = None) -> SynthesisResult:
        check_language(lang)
        sampling = sampling or self.cfg.sampler
        ids = encode(text, lang, self.vocab).ids
        cond, spk = self.reference(refs)
        codes = sample_codes(self.stack.ar, cond, ids, sampling)
        return SynthesisResult(self.codes_to_audio(cond, ids, codes, spk), codes, sampling.seed)


def expected_duration_s(code_count: int) -> float:
    return code_count / CODE_RATE_HZ


def sampling_with(cfg: SamplingConfig, **overrides) -> SamplingConfig:
    return dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})

"""Audio I/O, resampling and log-mel features."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from . import kernels
from .errors import ArgumentError, FormatError, UnsupportedError

CODEC_RATE = 22050
VOCODER_RATE = 24000


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int
    path: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate_hz <= 0:
            raise ArgumentError(f"sample rate must be positive, got {self.sample_rate_hz}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class MelConfig:
    sample_rate_hz: int = CODEC_RATE
    n_fft: int = 1024
    hop_length: int = 256
    win_length: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5

    def with_rate(self, rate: int) -> "MelConfig":
        return MelConfig(rate, self.n_fft, self.hop_length, self.win_length,
                         self.n_mels, self.fmin, self.fmax, self.log_floor)


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # [T_mel, n_mels]
    hop_length: int
    sample_rate_hz: int

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


# ------------------------------------------------------------------------ I/O


def _check_riff(raw: bytes):
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    pos = 12
    while pos + 8 <= len(raw):
        tag, size = raw[pos:pos + 4], struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        if tag == b"fmt ":
            if size < 16 or pos + 8 + size > len(raw):
                raise FormatError("truncated fmt chunk")
            fmt_code = struct.unpack("<H", raw[pos + 8:pos + 10])[0]
            if fmt_code == 0xFFFE and size >= 26:  # WAVE_FORMAT_EXTENSIBLE
                fmt_code = struct.unpack("<H", raw[pos + 32:pos + 34])[0]
            bits = struct.unpack("<H", raw[pos + 22:pos + 24])[0]
            if (fmt_code, bits) not in ((1, 16), (3, 32)):
                raise UnsupportedError(f"unsupported WAV encoding (format {fmt_code}, {bits} bit)")
            return
        pos += 8 + size + (size & 1)
    raise FormatError("missing fmt chunk")


def load_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV as mono float samples in [-1, 1]."""
    raw = Path(path).read_bytes()
    _check_riff(raw)
    try:
        rate, data = wavfile.read(io.BytesIO(raw))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        x = np.clip(data, -1.0, 1.0)
    else:  # pragma: no cover - header check catches these first
        raise UnsupportedError(f"unsupported sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return Waveform(x, int(rate), path=str(path))


def save_wav(path, w: Waveform):
    """Write PCM16."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    wavfile.write(str(path), w.sample_rate_hz, pcm)


def resample(w: Waveform, target_hz: int, mode: str = "linear") -> Waveform:
    if target_hz <= 0:
        raise ArgumentError("target_hz must be positive")
    if target_hz == w.sample_rate_hz:
        return Waveform(w.samples.copy(), target_hz, path=w.path)
    n_out = int(round(len(w) * target_hz / w.sample_rate_hz))
    if len(w) == 0 or n_out == 0:
        return Waveform(np.zeros(n_out, np.float32), target_hz)
    if mode == "linear":
        y = kernels.interp_rows(w.samples[:, None], n_out)[:, 0]
    elif mode == "bandlimited":
        g = math.gcd(target_hz, w.sample_rate_hz)
        y = resample_poly(w.samples.astype(np.float64), target_hz // g, w.sample_rate_hz // g)
        y = np.pad(y, (0, max(0, n_out - len(y))))[:n_out]
    else:
        raise ArgumentError(f"unknown resample mode {mode!r}")
    return Waveform(y, target_hz)


# ------------------------------------------------------------------------ mel


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    mels = f / f_sp
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep, mels)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate_hz: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Slaney-style triangular filters with area normalisation, shape [n_mels, n_fft//2+1]."""
    fft_freqs = np.linspace(0, sample_rate_hz / 2, n_fft // 2 + 1)
    mel_pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(mel_pts)
    ramps = mel_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0, np.minimum(lower, upper))
    weights *= (2.0 / (mel_pts[2:n_mels + 2] - mel_pts[:n_mels]))[:, None]
    weights.flags.writeable = False
    return weights


@lru_cache(maxsize=16)
def _window(n_fft: int, win_length: int) -> np.ndarray:
    win = get_window("hann", win_length, fftbins=True)
    left = (n_fft - win_length) // 2
    out = np.zeros(n_fft)
    out[left:left + win_length] = win
    out.flags.writeable = False
    return out


def num_frames(num_samples: int, hop_length: int) -> int:
    return num_samples // hop_length + 1


def mel_spectrogram(w: Waveform, cfg: MelConfig = MelConfig()) -> MelSpectrogram:
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ArgumentError(f"waveform at {w.sample_rate_hz} Hz, mel config expects {cfg.sample_rate_hz} Hz")
    if len(w) == 0:
        raise ArgumentError("empty waveform")
    x = np.pad(w.samples.astype(np.float64), (cfg.n_fft // 2, cfg.n_fft // 2))
    n = num_frames(len(w), cfg.hop_length)
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop_length * np.arange(n)[:, None]
    need = idx[-1, -1] + 1
    if need > len(x):
        x = np.pad(x, (0, need - len(x)))
    frames = x[idx] * _window(cfg.n_fft, cfg.win_length)
    mag = np.abs(np.fft.rfft(frames, axis=1))
    fb = mel_filterbank(cfg.sample_rate_hz, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
    mel = np.log(np.maximum(mag @ fb.T, cfg.log_floor))
    return MelSpectrogram(mel.astype(np.float32), cfg.hop_length, cfg.sample_rate_hz)


class TorchMel(torch.nn.Module):
    """Differentiable twin of :func:`mel_spectrogram` for training losses.

    Input [B, N] -> [B, T_mel, n_mels]. Uses the same filterbank, window and
    zero centre padding, so frame counts match the numpy path.
    """

    def __init__(self, cfg: MelConfig):
        super().__init__()
        self.cfg = cfg
        fb = mel_filterbank(cfg.sample_rate_hz, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
        self.register_buffer("fb", torch.tensor(fb.T.copy(), dtype=torch.float32), persistent=False)
        self.register_buffer("window", torch.tensor(_window(cfg.n_fft, cfg.win_length).copy(),
                                                    dtype=torch.float32), persistent=False)

    def forward(self, x):
        cfg = self.cfg
        n = x.shape[-1] // cfg.hop_length + 1
        x = torch.nn.functional.pad(x, (cfg.n_fft // 2, cfg.n_fft // 2))
        need = (n - 1) * cfg.hop_length + cfg.n_fft
        if need > x.shape[-1]:
            x = torch.nn.functional.pad(x, (0, need - x.shape[-1]))
        frames = x.unfold(-1, cfg.n_fft, cfg.hop_length)[..., :n, :] * self.window.to(x.dtype)
        spec = torch.fft.rfft(frames, dim=-1)
        # eps keeps the magnitude gradient finite at exact zeros
        mag = torch.sqrt(spec.real ** 2 + spec.imag ** 2 + 1e-12)
        mel = mag @ self.fb.to(x.dtype)
        return torch.log(torch.clamp(mel, min=cfg.log_floor))

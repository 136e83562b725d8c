"""Pipeline configuration tree: YAML load/dump, strict keys, stable hash."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .armodel import ArConfig
from .conditioning import ConditioningConfig
from .dsp import MelConfig
from .errors import ConfigError
from .sampler import SamplingConfig
from .vocoder import VocoderConfig
from .vqvae import VqVaeConfig

CONFIG_ENV = "POLYVOX_CONFIG"


@dataclass
class DspConfig:
    sample_rate_hz: int = 22050
    n_fft: int = 1024
    hop_length: int = 256
    win_length: int = 1024
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5
    vocoder_rate_hz: int = 24000
    resample_mode: str = "linear"

    def mel(self) -> MelConfig:
        return MelConfig(self.sample_rate_hz, self.n_fft, self.hop_length, self.win_length,
                         self.n_mels, self.fmin, self.fmax, self.log_floor)


@dataclass
class TokenizerConfig:
    vocab_size: int = 6681
    fallback: str = "_"


@dataclass
class TrainingConfig:
    lr: float = 5e-5
    betas: tuple = (0.9, 0.96)
    weight_decay: float = 0.01
    eps: float = 1e-8
    grad_accum: int = 16
    batch_size: int = 4
    milestones: tuple = (5000, 150000, 300000)
    gamma: float = 0.5
    grad_clip: float = 1.0
    armodel_steps: int = 1000
    cond_frames: int = 132
    vqvae_steps: int = 1000
    vqvae_lr: float = 3e-4
    vqvae_batch: int = 8
    vqvae_segment: int = 64
    vqvae_restart_every: int = 100
    vocoder_steps: int = 1000
    vocoder_lr: float = 2e-4
    vocoder_betas: tuple = (0.8, 0.99)
    vocoder_lr_decay: float = 0.999875
    vocoder_batch: int = 4
    vocoder_segment: int = 8
    checkpoint_every: int = 500
    finetune_lr_scale: float = 0.1
    finetune_vocoder: bool = False
    language_weights: dict = field(default_factory=dict)


@dataclass
class EvalConfig:
    nfc: bool = True
    lowercase: bool = True
    strip_punct: bool = True
    collapse_ws: bool = True
    speaker_backend: str = "toy"
    speaker_dim: int = 64
    speaker_seed: int = 1234


@dataclass
class PipelineConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    vqvae: VqVaeConfig = field(default_factory=VqVaeConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    armodel: ArConfig = field(default_factory=ArConfig)
    sampler: SamplingConfig = field(default_factory=SamplingConfig)
    vocoder: VocoderConfig = field(default_factory=VocoderConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0


# ---------------------------------------------------------------- coercion


def _coerce(value: Any, default: Any, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected bool, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected list, got {value!r}")
        proto = default[0] if default else value[0] if value else 0
        return tuple(_coerce(v, proto, f"{where}[{i}]") for i, v in enumerate(value))
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected mapping, got {value!r}")
        return {str(k): _coerce(v, 1.0, f"{where}.{k}") for k, v in value.items()}
    raise ConfigError(f"{where}: unsupported field type {type(default).__name__}")


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected mapping")
    proto = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(proto, name)
        key = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, key)
        else:
            kwargs[name] = _coerce(value, default, key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data or {}, "")


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in sorted(obj.items())}
    return obj


def to_dict(cfg: PipelineConfig) -> dict:
    return _plain(cfg)


def dump(cfg: PipelineConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def loads(text: str) -> PipelineConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML: {e}") from e
    return from_dict(data or {})


def load(path=None) -> PipelineConfig:
    """Read ``path``, else the file named by $POLYVOX_CONFIG, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    return loads(p.read_text(encoding="utf-8"))


def config_hash(cfg: PipelineConfig) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def smoke_config() -> PipelineConfig:
    """Toy preset for the 20-utterance synthetic corpus; runs in minutes on one CPU."""
    cfg = PipelineConfig()
    cfg.tokenizer.vocab_size = 96
    cfg.vqvae = dataclasses.replace(cfg.vqvae, codebook_size=64, keep=48)
    cfg.armodel = dataclasses.replace(cfg.armodel, dim=128, layers=2, heads=4)
    cfg.sampler = dataclasses.replace(cfg.sampler, max_codes=120)
    t = cfg.training
    t.lr, t.grad_accum, t.batch_size, t.armodel_steps = 2e-3, 1, 20, 300
    t.vqvae_steps, t.vqvae_lr, t.vqvae_batch, t.vqvae_restart_every = 300, 2e-3, 8, 50
    t.vocoder_steps, t.vocoder_lr, t.vocoder_batch = 150, 1e-3, 4
    t.milestones = (5000, 150000, 300000)
    t.checkpoint_every = 100
    return cfg


PRESETS = {"default": PipelineConfig, "smoke": smoke_config}

"""Latent-conditioned HiFi-GAN-style vocoder with speaker conditioning and SCL."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import kernels
from .dsp import CODEC_RATE, VOCODER_RATE, MelConfig, TorchMel, Waveform
from .errors import ArgumentError, NumericError
from .speaker import SpeakerEmbedding

LRELU_SLOPE = 0.1


@dataclass
class VocoderConfig:
    in_dim: int = 128
    spk_dim: int = 64
    channels: int = 64
    min_channels: int = 4
    upsample_factors: tuple = (8, 8, 4, 4)
    resblock_kernel: int = 3
    resblock_dilations: tuple = (1, 3)
    periods: tuple = (2, 3)
    scales: int = 2
    disc_channels: int = 16
    mel_weight: float = 45.0
    fm_weight: float = 2.0
    adv_weight: float = 1.0
    scl_weight: float = 9.0
    seed: int = 0

    @property
    def samples_per_latent(self) -> int:
        return math.prod(self.upsample_factors)

    def stage_channels(self, i: int) -> int:
        return max(self.channels // 2 ** (i + 1), self.min_channels)


class ResBlock(nn.Module):
    def __init__(self, ch: int, kernel: int, dilations):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(ch, ch, kernel, dilation=d, padding=(kernel * d - d) // 2) for d in dilations)

    def forward(self, x):
        for conv in self.convs:
            x = x + conv(F.leaky_relu(x, LRELU_SLOPE))
        return x


class Generator(nn.Module):
    """[B, in_dim, T] latents -> [B, T * prod(upsample_factors)] samples."""

    def __init__(self, cfg: VocoderConfig = VocoderConfig()):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.input_conv = nn.Conv1d(cfg.in_dim, cfg.channels, 7, padding=3)
            self.ups = nn.ModuleList()
            self.spk_proj = nn.ModuleList()
            self.blocks = nn.ModuleList()
            ch_in = cfg.channels
            for i, u in enumerate(cfg.upsample_factors):
                ch = cfg.stage_channels(i)
                self.ups.append(nn.ConvTranspose1d(ch_in, ch, 2 * u, stride=u, padding=u // 2 + u % 2,
                                                   output_padding=u % 2))
                self.spk_proj.append(nn.Linear(cfg.spk_dim, ch))
                self.blocks.append(ResBlock(ch, cfg.resblock_kernel, cfg.resblock_dilations))
                ch_in = ch
            self.output_conv = nn.Conv1d(ch_in, 1, 7, padding=3)

    def forward(self, latents, spk=None):
        x = self.input_conv(latents)
        for up, proj, blk in zip(self.ups, self.spk_proj, self.blocks):
            x = up(F.leaky_relu(x, LRELU_SLOPE))
            if spk is not None:
                x = x + proj(spk)[:, :, None]
            x = blk(x)
        return torch.tanh(self.output_conv(F.leaky_relu(x))).squeeze(1)


# -------------------------------------------------------------- discriminators


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, ch: int):
        super().__init__()
        self.period = period
        self.convs = nn.ModuleList([
            nn.Conv2d(1, ch, (5, 1), (3, 1), padding=(2, 0)),
            nn.Conv2d(ch, ch * 2, (5, 1), (3, 1), padding=(2, 0)),
            nn.Conv2d(ch * 2, ch * 2, (3, 1), 1, padding=(1, 0)),
        ])
        self.post = nn.Conv2d(ch * 2, 1, (3, 1), 1, padding=(1, 0))

    def forward(self, x):
        b, t = x.shape
        if t % self.period:
            x = F.pad(x, (0, self.period - t % self.period), mode="reflect")
        x = x.view(b, 1, -1, self.period)
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            feats.append(x)
        x = self.post(x)
        feats.append(x)
        return x.flatten(1), feats


class ScaleDiscriminator(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv1d(1, ch, 15, 1, padding=7),
            nn.Conv1d(ch, ch * 2, 41, 4, groups=ch, padding=20),
            nn.Conv1d(ch * 2, ch * 2, 41, 4, groups=ch, padding=20),
            nn.Conv1d(ch * 2, ch * 2, 5, 1, padding=2),
        ])
        self.post = nn.Conv1d(ch * 2, 1, 3, 1, padding=1)

    def forward(self, x):
        x = x[:, None]
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            feats.append(x)
        x = self.post(x)
        feats.append(x)
        return x.flatten(1), feats


class Discriminators(nn.Module):
    """Multi-period set plus multi-scale set (average-pooled copies)."""

    def __init__(self, cfg: VocoderConfig = VocoderConfig()):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed + 1)
            self.period = nn.ModuleList(PeriodDiscriminator(p, cfg.disc_channels) for p in cfg.periods)
            self.scale = nn.ModuleList(ScaleDiscriminator(cfg.disc_channels) for _ in range(cfg.scales))

    def forward(self, x):
        outs = [d(x) for d in self.period]
        y = x
        for i, d in enumerate(self.scale):
            if i:
                y = F.avg_pool1d(y[:, None], 4, 2, padding=2).squeeze(1)
            outs.append(d(y))
        return outs


def discriminator_loss(real_outs, fake_outs):
    loss = 0.0
    for (r, _), (f, _) in zip(real_outs, fake_outs):
        loss = loss + torch.mean((1 - r) ** 2) + torch.mean(f ** 2)
    return loss


def generator_adv_loss(fake_outs):
    return sum(torch.mean((1 - f) ** 2) for f, _ in fake_outs)


def feature_matching_loss(real_outs, fake_outs):
    loss = 0.0
    for (_, rf), (_, ff) in zip(real_outs, fake_outs):
        for r, f in zip(rf, ff):
            loss = loss + torch.mean(torch.abs(r.detach() - f))
    return loss


# ------------------------------------------------------------------- inference


def interpolate_latents(latents: np.ndarray, factor: float = VOCODER_RATE / CODEC_RATE) -> np.ndarray:
    """Linear resampling of the latent sequence to the vocoder frame count."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] < 1:
        raise ArgumentError("need a [T >= 1, D] latent matrix")
    out_len = int(round(latents.shape[0] * factor))
    if out_len == latents.shape[0]:
        return latents.copy()
    return kernels.interp_rows(latents, out_len)


@torch.no_grad()
def vocode(latents: np.ndarray, spk: SpeakerEmbedding | None, model: Generator) -> Waveform:
    if latents.shape[1] != model.cfg.in_dim:
        raise ArgumentError(f"latent dim {latents.shape[1]} != vocoder input dim {model.cfg.in_dim}")
    x = interpolate_latents(latents)
    dtype = model.input_conv.weight.dtype
    lat = torch.as_tensor(x.T[None].copy(), dtype=dtype)
    s = None
    if spk is not None:
        if spk.dim != model.cfg.spk_dim:
            raise ArgumentError(f"speaker dim {spk.dim} != {model.cfg.spk_dim}")
        s = torch.as_tensor(spk.vector[None], dtype=dtype)
    wav = model(lat, s)[0].float().numpy()
    return Waveform(wav, VOCODER_RATE)


def scl_loss(generated: Waveform, reference: Waveform, backend) -> float:
    """1 - cosine(speaker(generated), speaker(reference)), in [0, 2]."""
    if len(generated) == 0 or len(reference) == 0:
        raise ArgumentError("empty waveform")
    a = backend.embed(generated).vector
    b = backend.embed(reference).vector
    if np.array_equal(a, b):
        return 0.0
    return float(np.clip(1.0 - np.dot(a, b), 0.0, 2.0))


# -------------------------------------------------------------------- training


@dataclass
class VocoderBatch:
    latents: torch.Tensor  # [B, in_dim, T'] already interpolated
    spk: torch.Tensor  # [B, spk_dim]
    audio: torch.Tensor  # [B, T' * samples_per_latent] at 24 kHz
    reference: torch.Tensor  # [B, N_ref] 24 kHz reference for the SCL term


@dataclass
class VocoderLosses:
    mel: float
    adv: float
    fm: float
    scl: float
    gen_total: float
    disc: float


class VocoderTrainer:
    """Owns generator/discriminator optimizers and the frozen loss helpers."""

    def __init__(self, gen: Generator, disc: Discriminators, opt_g, opt_d, spk_embedder=None,
                 mel_cfg: MelConfig = MelConfig(sample_rate_hz=VOCODER_RATE), clip: float = 0.0):
        self.gen, self.disc = gen, disc
        self.clip = clip
        self.opt_g, self.opt_d = opt_g, opt_d
        self.cfg = gen.cfg
        self.mel = TorchMel(mel_cfg)
        self.spk_embedder = spk_embedder

    def generator_losses(self, batch: VocoderBatch, fake=None):
        cfg = self.cfg
        fake = self.gen(batch.latents, batch.spk) if fake is None else fake
        mel = F.l1_loss(self.mel(fake), self.mel(batch.audio))
        fake_outs = self.disc(fake)
        with torch.no_grad():
            real_outs = self.disc(batch.audio)
        adv = generator_adv_loss(fake_outs)
        fm = feature_matching_loss(real_outs, fake_outs)
        if cfg.scl_weight and self.spk_embedder is not None:
            e_fake = self.spk_embedder(fake)
            with torch.no_grad():
                e_ref = self.spk_embedder(batch.reference)
            scl = torch.mean(1 - (e_fake * e_ref).sum(-1))
        else:
            scl = torch.zeros((), dtype=fake.dtype)
        total = cfg.mel_weight * mel + cfg.adv_weight * adv + cfg.fm_weight * fm
        if cfg.scl_weight:
            total = total + cfg.scl_weight * scl
        return {"mel": mel, "adv": adv, "fm": fm, "scl": scl, "total": total, "fake": fake}

    def _clip(self, module):
        if self.clip:
            torch.nn.utils.clip_grad_norm_([p for p in module.parameters() if p.grad is not None], self.clip)

    def step(self, batch: VocoderBatch) -> VocoderLosses:
        if batch.latents.shape[0] == 0:
            raise ArgumentError("empty batch")
        fake = self.gen(batch.latents, batch.spk)
        d_loss = discriminator_loss(self.disc(batch.audio), self.disc(fake.detach()))
        if not torch.isfinite(d_loss):
            raise NumericError(f"non-finite discriminator loss {d_loss.item()}")
        self.opt_d.zero_grad()
        d_loss.backward()
        self._clip(self.disc)
        self.opt_d.step()

        g = self.generator_losses(batch, fake)
        if not torch.isfinite(g["total"]):
            raise NumericError("non-finite generator loss: " + ", ".join(
                f"{k}={v.item():.4g}" for k, v in g.items() if k != "fake"))
        self.opt_g.zero_grad()
        g["total"].backward()
        self._clip(self.gen)
        self.opt_g.step()
        return VocoderLosses(g["mel"].item(), g["adv"].item(), g["fm"].item(), g["scl"].item(),
                             g["total"].item(), d_loss.item())


def vocoder_train_step(batch: VocoderBatch, trainer: VocoderTrainer) -> VocoderLosses:
    return trainer.step(batch)

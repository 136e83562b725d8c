"""Stage trainers (vqvae -> armodel -> vocoder) and speaker-adaptation fine-tuning.

Every stage writes ``<out>/<stage>.ckpt``. Batches come from the language
balancer; each optimizer step consumes ``grad_accum`` micro-batches. Random
crops are drawn from a generator keyed on (seed, step, micro-batch), so a run
resumed from a checkpoint sees exactly the data it would have seen anyway.
"""
from __future__ import annotations

import dataclasses
import itertools
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from .. import config as config_mod
from ..armodel import ArConfig, ArModel, SequenceLayout, ar_loss, latents_for_vocoder, total_loss
from ..conditioning import ConditioningConfig, ConditioningEncoder, pad_mels
from ..dsp import CODEC_RATE, VOCODER_RATE, MelSpectrogram, Waveform, load_wav, mel_spectrogram, resample
from ..errors import ArgumentError, DependencyError, FormatError
from ..eval import Manifest
from ..frontend import BpeVocab, encode, train_bpe
from ..speaker import ToyBackend
from ..vocoder import (Discriminators, Generator, VocoderBatch, VocoderConfig, VocoderTrainer,
                       interpolate_latents)
from ..vqvae import VqVae, filter_codebook, init_codebook, restart_dead_codes, vq_encode
from .balancer import balanced_batches
from .checkpoint import Checkpoint
from .optim import AdamW, LrSchedule, accumulated_step, exponential_lr, lr_at

log = logging.getLogger(__name__)

STAGES = ("vqvae", "armodel", "vocoder")
PREREQ = {"vqvae": None, "armodel": "vqvae", "vocoder": "armodel"}


def stage_path(out_dir, stage: str) -> Path:
    return Path(out_dir) / f"{stage}.ckpt"


def _crop_rng(seed: int, step: int, micro: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, micro])


def _cfg_meta(cfg) -> dict:
    return {"config": config_mod.to_dict(cfg), "config_hash": config_mod.config_hash(cfg)}


def cfg_from_meta(meta: dict):
    return config_mod.from_dict(meta["config"])


# ------------------------------------------------------------------ corpus


@dataclass
class Utterance:
    id: str
    text: str
    language: str
    speaker_id: str
    wav: Waveform  # codec rate
    mel: MelSpectrogram


def load_corpus(manifest: Manifest, cfg) -> dict[str, Utterance]:
    mel_cfg = cfg.dsp.mel()
    out = {}
    for rec in manifest.records:
        w = load_wav(manifest.resolve(rec))
        if w.sample_rate_hz != mel_cfg.sample_rate_hz:
            w = resample(w, mel_cfg.sample_rate_hz, cfg.dsp.resample_mode)
        out[rec.id] = Utterance(rec.id, rec.text, rec.language, rec.speaker_id, w, mel_spectrogram(w, mel_cfg))
    return out


def conditioning_frames(mel: MelSpectrogram, cfg) -> np.ndarray:
    return mel.frames[:cfg.training.cond_frames]


# --------------------------------------------------------------- utilities


def _optimizer_meta(opt: AdamW) -> dict:
    return {"t": opt.t, "lr": opt.lr}


def _batch_stream(manifest, cfg, batch_size: int, start_step: int):
    t = cfg.training
    stream = balanced_batches(manifest, batch_size, cfg.seed, t.language_weights or None)
    # skip what earlier optimizer steps consumed
    return itertools.islice(stream, start_step * t.grad_accum, None)


def _run_steps(start: int, total: int, step_fn: Callable[[int], dict], history: dict,
               save_fn: Callable[[int], None], every: int, progress: Optional[Callable] = None):
    for step in range(start, total):
        losses = step_fn(step)
        for k, v in losses.items():
            history.setdefault(k, []).append(float(v))
        if progress:
            progress(step + 1, losses)
        if every and (step + 1) % every == 0 and step + 1 < total:
            save_fn(step + 1)
    save_fn(total)


def _check_prereq(out_dir, stage: str):
    need = PREREQ[stage]
    if need and not stage_path(out_dir, need).exists():
        raise DependencyError(f"stage {stage!r} needs {stage_path(out_dir, need)}; train {need!r} first")


# ------------------------------------------------------------------- vqvae


def _train_vqvae(cfg, manifest, out_dir, steps, resume, progress):
    t = cfg.training
    corpus = load_corpus(manifest, cfg)
    mels = [u.mel for u in corpus.values()]
    model = VqVae(cfg.vqvae)
    opt = AdamW.for_module(model, t.vqvae_lr, t.betas, t.weight_decay, extra_exempt={"codebook"}, eps=t.eps)
    history: dict = {}
    start = 0
    if resume is not None:
        ck = Checkpoint.load(resume)
        ck.load_module("model", model)
        opt.load_tensors("opt", ck.torch_table("opt"), ck.meta["optimizer"]["t"])
        history = {k: list(v) for k, v in ck.meta["loss_history"].items()}
        start = ck.meta["step"]
    else:
        init_codebook(model, mels, cfg.seed)
    stream = _batch_stream(manifest, cfg, t.vqvae_batch, start)
    sched = LrSchedule(t.milestones, t.gamma)
    stride = cfg.vqvae.time_stride
    total = steps if steps is not None else t.vqvae_steps

    def crop(batch, rng):
        seg = t.vqvae_segment // stride * stride
        frames = []
        for rec in batch:
            m = corpus[rec.id].mel.frames
            if len(m) > seg:
                o = int(rng.integers(0, len(m) - seg + 1))
                m = m[o:o + seg]
            frames.append(m)
        n = min(len(f) for f in frames) // stride * stride
        return torch.as_tensor(np.stack([f[:n] for f in frames]))

    def loss_fn(x):
        recon, commit, cb, _ = model.losses(x)
        return recon + cb + cfg.vqvae.beta * commit, recon.detach(), commit.detach(), cb.detach()

    def step_fn(step):
        opt.lr = lr_at(step, sched, t.vqvae_lr)
        micro = [crop(next(stream), _crop_rng(cfg.seed, step, i)) for i in range(t.grad_accum)]
        outs = accumulated_step(loss_fn, micro, opt, t.grad_clip)
        losses = {name: float(np.mean([o[i].item() for o in outs]))
                  for i, name in enumerate(("total", "recon", "commit", "codebook"))}
        every = t.vqvae_restart_every
        if every and (step + 1) % every == 0 and step + 1 <= 0.75 * total:
            n_dead = restart_dead_codes(model, mels, _crop_rng(cfg.seed, step, 1 << 20))
            if n_dead:
                m, v = opt.state["codebook"]
                m.zero_()
                v.zero_()
            losses["restarted"] = n_dead
        return losses

    def save(step, final=False):
        ck = Checkpoint({"stage": "vqvae", "step": step, "filtered": False, "loss_history": history,
                         "optimizer": _optimizer_meta(opt), **_cfg_meta(cfg)})
        ck.add_module("model", model)
        ck.tensors.update({k: v.numpy().copy() for k, v in opt.tensors("opt").items()})
        ck.save(Path(out_dir) / "vqvae.last.ckpt")

    _run_steps(start, total, step_fn, history, save, t.checkpoint_every, progress)
    filtered = filter_codebook(model, mels, cfg.vqvae.keep)
    ck = Checkpoint({"stage": "vqvae", "step": total, "filtered": True, "loss_history": history,
                     **_cfg_meta(cfg)})
    ck.add_module("model", filtered)
    return ck.save(stage_path(out_dir, "vqvae"))


def load_vqvae(path) -> VqVae:
    ck = Checkpoint.load(path)
    if ck.meta.get("stage") != "vqvae":
        raise FormatError(f"{path}: not a vqvae checkpoint")
    model = VqVae(cfg_from_meta(ck.meta).vqvae)
    ck.load_module("model", model)
    return model.eval()


# ----------------------------------------------------------------- armodel


class GptStack(nn.Module):
    """Conditioning encoder and AR model trained jointly."""

    def __init__(self, ar_cfg: ArConfig, cond_cfg: ConditioningConfig, vocab: BpeVocab):
        super().__init__()
        self.cond = ConditioningEncoder(cond_cfg)
        self.ar = ArModel(ar_cfg, vocab.bos_id, vocab.eos_id, vocab.pad_id)

    def cond_latents(self, mels: list[np.ndarray]) -> torch.Tensor:
        x, mask = pad_mels(mels)
        return self.cond(x, key_mask=mask)

    def layout(self, items) -> SequenceLayout:
        return SequenceLayout(self.cond_latents([i.cond for i in items]), [i.text_ids for i in items],
                              [i.codes for i in items])

    def losses(self, items):
        text_ce, audio_ce = ar_loss(self.layout(items), self.ar)
        return total_loss(text_ce, audio_ce, self.ar.cfg), text_ce.detach(), audio_ce.detach()


@dataclass
class ArItem:
    id: str
    cond: np.ndarray
    text_ids: list
    codes: list


def ar_config_for(cfg, vocab: BpeVocab, vq: VqVae) -> ArConfig:
    return dataclasses.replace(cfg.armodel, text_vocab=len(vocab), n_codes=vq.n_codes,
                               cond_dim=cfg.conditioning.dim, num_latents=cfg.conditioning.num_latents)


def prepare_ar_items(corpus: dict, cfg, vocab: BpeVocab, vq: VqVae) -> dict[str, ArItem]:
    remap = vq.dense_remap()
    out = {}
    for uid, u in corpus.items():
        codes = remap[vq_encode(u.mel, vq).codes]
        out[uid] = ArItem(uid, conditioning_frames(u.mel, cfg), encode(u.text, u.language, vocab).ids,
                          codes.tolist())
    return out


def _vocab_for(cfg, manifest, out_dir) -> BpeVocab:
    path = Path(out_dir) / "vocab.txt"
    if path.exists():
        return BpeVocab.load(path)
    vocab = train_bpe(((r.text, r.language) for r in manifest.records), cfg.tokenizer.vocab_size,
                      cfg.tokenizer.fallback)
    vocab.save(path)
    return vocab


def _ar_checkpoint(stack: GptStack, opt: AdamW, cfg, vocab_text: str, step: int, history: dict,
                   extra: Optional[dict] = None) -> Checkpoint:
    meta = {"stage": "armodel", "step": step, "loss_history": history, "optimizer": _optimizer_meta(opt),
            "ar_config": dataclasses.asdict(stack.ar.cfg), "vocab": vocab_text, **_cfg_meta(cfg)}
    meta.update(extra or {})
    ck = Checkpoint(meta)
    ck.add_module("model", stack)
    ck.tensors.update({k: v.numpy().copy() for k, v in opt.tensors("opt").items()})
    return ck


def load_armodel(path) -> tuple[GptStack, BpeVocab, Checkpoint]:
    ck = Checkpoint.load(path)
    if ck.meta.get("stage") != "armodel":
        raise FormatError(f"{path}: not an armodel checkpoint")
    cfg = cfg_from_meta(ck.meta)
    vocab = BpeVocab.loads(ck.meta["vocab"])
    stack = GptStack(ArConfig(**ck.meta["ar_config"]), cfg.conditioning, vocab)
    ck.load_module("model", stack)
    return stack.eval(), vocab, ck


def _ar_optimizer(stack: GptStack, cfg, lr: float) -> AdamW:
    t = cfg.training
    return AdamW.for_module(stack, lr, t.betas, t.weight_decay, extra_exempt={"cond.resampler.latents"}, eps=t.eps)


def _ar_loop(stack, opt, cfg, manifest, items, start, total, base_lr, history, save, progress):
    t = cfg.training
    sched = LrSchedule(t.milestones, t.gamma)
    stream = _batch_stream(manifest, cfg, t.batch_size, start)

    def step_fn(step):
        opt.lr = lr_at(step, sched, base_lr)
        micro = [[items[r.id] for r in next(stream)] for _ in range(t.grad_accum)]
        stack.train()
        outs = accumulated_step(stack.losses, micro, opt, t.grad_clip)
        return {"total": float(np.mean([o[0].item() for o in outs])),
                "text_ce": float(np.mean([o[1].item() for o in outs])),
                "audio_ce": float(np.mean([o[2].item() for o in outs]))}

    _run_steps(start, total, step_fn, history, save, t.checkpoint_every, progress)
    stack.eval()


def _train_armodel(cfg, manifest, out_dir, steps, resume, progress):
    t = cfg.training
    vq = load_vqvae(stage_path(out_dir, "vqvae"))
    vocab = _vocab_for(cfg, manifest, out_dir)
    vocab_text = vocab.dumps()
    corpus = load_corpus(manifest, cfg)
    items = prepare_ar_items(corpus, cfg, vocab, vq)
    stack = GptStack(ar_config_for(cfg, vocab, vq), cfg.conditioning, vocab)
    opt = _ar_optimizer(stack, cfg, t.lr)
    history: dict = {}
    start = 0
    if resume is not None:
        ck = Checkpoint.load(resume)
        ck.load_module("model", stack)
        opt.load_tensors("opt", ck.torch_table("opt"), ck.meta["optimizer"]["t"])
        history = {k: list(v) for k, v in ck.meta["loss_history"].items()}
        start = ck.meta["step"]

    path = stage_path(out_dir, "armodel")

    def save(step):
        _ar_checkpoint(stack, opt, cfg, vocab_text, step, history).save(path)

    total = steps if steps is not None else t.armodel_steps
    _ar_loop(stack, opt, cfg, manifest, items, start, total, t.lr, history, save, progress)
    return path


# ----------------------------------------------------------------- vocoder


@dataclass
class VocItem:
    latents: np.ndarray  # [T', D] interpolated
    audio: np.ndarray  # [T' * samples_per_latent] at 24 kHz
    spk: np.ndarray


def prepare_vocoder_items(corpus: dict, items: dict, stack: GptStack, backend: ToyBackend,
                          voc_cfg: VocoderConfig) -> dict[str, VocItem]:
    out = {}
    spl = voc_cfg.samples_per_latent
    for uid, u in corpus.items():
        it = items[uid]
        with torch.no_grad():
            layout = SequenceLayout(stack.cond_latents([it.cond]), [it.text_ids], [it.codes])
            lat = latents_for_vocoder(layout, stack.ar)[0]
        x = interpolate_latents(lat)
        audio = resample(u.wav, VOCODER_RATE).samples.astype(np.float32)
        n = x.shape[0] * spl
        audio = np.pad(audio, (0, max(0, n - len(audio))))[:n]
        out[uid] = VocItem(x.astype(np.float32), audio, backend.embed(u.wav).vector.astype(np.float32))
    return out


def _vocoder_batch(items: list[VocItem], seg: int, spl: int, rng) -> VocoderBatch:
    lats, auds, spks = [], [], []
    seg = min([seg] + [len(i.latents) for i in items])
    for it in items:
        o = int(rng.integers(0, len(it.latents) - seg + 1))
        lats.append(it.latents[o:o + seg].T)
        auds.append(it.audio[o * spl:(o + seg) * spl])
        spks.append(it.spk)
    audio = torch.as_tensor(np.stack(auds))
    return VocoderBatch(torch.as_tensor(np.stack(lats)), torch.as_tensor(np.stack(spks)), audio, audio)


class _VocoderRun:
    def __init__(self, cfg, backend: ToyBackend):
        t = cfg.training
        vcfg = cfg.vocoder
        self.cfg = cfg
        self.gen = Generator(vcfg)
        self.disc = Discriminators(vcfg)
        self.opt_g = AdamW.for_module(self.gen, t.vocoder_lr, t.vocoder_betas, t.weight_decay, eps=t.eps)
        self.opt_d = AdamW.for_module(self.disc, t.vocoder_lr, t.vocoder_betas, t.weight_decay, eps=t.eps)
        self.trainer = VocoderTrainer(self.gen, self.disc, self.opt_g, self.opt_d,
                                      backend.torch_embedder(VOCODER_RATE) if vcfg.scl_weight else None,
                                      cfg.dsp.mel().with_rate(VOCODER_RATE), clip=t.grad_clip)

    def restore(self, ck: Checkpoint):
        ck.load_module("gen", self.gen)
        ck.load_module("disc", self.disc)
        self.opt_g.load_tensors("opt_g", ck.torch_table("opt_g"), ck.meta["optimizer"]["t"])
        self.opt_d.load_tensors("opt_d", ck.torch_table("opt_d"), ck.meta["optimizer"]["t"])

    def checkpoint(self, step: int, history: dict, extra: Optional[dict] = None) -> Checkpoint:
        meta = {"stage": "vocoder", "step": step, "loss_history": history,
                "optimizer": _optimizer_meta(self.opt_g), **_cfg_meta(self.cfg)}
        meta.update(extra or {})
        ck = Checkpoint(meta)
        ck.add_module("gen", self.gen)
        ck.add_module("disc", self.disc)
        for name, opt in (("opt_g", self.opt_g), ("opt_d", self.opt_d)):
            ck.tensors.update({k: v.numpy().copy() for k, v in opt.tensors(name).items()})
        return ck

    def loop(self, manifest, vitems, start, total, base_lr, history, save, progress):
        t = self.cfg.training
        spl = self.cfg.vocoder.samples_per_latent
        stream = balanced_batches(manifest, t.vocoder_batch, self.cfg.seed, t.language_weights or None)
        stream = itertools.islice(stream, start, None)

        def step_fn(step):
            lr = exponential_lr(step, base_lr, t.vocoder_lr_decay)
            self.opt_g.lr = self.opt_d.lr = lr
            batch = _vocoder_batch([vitems[r.id] for r in next(stream)], t.vocoder_segment, spl,
                                   _crop_rng(self.cfg.seed, step, 0))
            res = self.trainer.step(batch)
            return dataclasses.asdict(res)

        self.gen.train()
        _run_steps(start, total, step_fn, history, save, t.checkpoint_every, progress)
        self.gen.eval()


def speaker_backend(cfg) -> ToyBackend:
    e = cfg.eval
    if e.speaker_backend != "toy":
        raise ArgumentError("training needs the differentiable toy speaker backend")
    return ToyBackend(e.speaker_dim, e.speaker_seed, cfg.dsp.mel())


def _check_vocoder_dims(cfg, stack: GptStack):
    if cfg.vocoder.in_dim != stack.ar.cfg.dim:
        raise ArgumentError(f"vocoder.in_dim={cfg.vocoder.in_dim} must equal armodel.dim={stack.ar.cfg.dim}")
    if cfg.vocoder.spk_dim != cfg.eval.speaker_dim:
        raise ArgumentError("vocoder.spk_dim must equal eval.speaker_dim")


def _train_vocoder(cfg, manifest, out_dir, steps, resume, progress):
    t = cfg.training
    vq = load_vqvae(stage_path(out_dir, "vqvae"))
    stack, vocab, _ = load_armodel(stage_path(out_dir, "armodel"))
    _check_vocoder_dims(cfg, stack)
    backend = speaker_backend(cfg)
    corpus = load_corpus(manifest, cfg)
    vitems = prepare_vocoder_items(corpus, prepare_ar_items(corpus, cfg, vocab, vq), stack, backend, cfg.vocoder)
    run = _VocoderRun(cfg, backend)
    history: dict = {}
    start = 0
    if resume is not None:
        ck = Checkpoint.load(resume)
        run.restore(ck)
        history = {k: list(v) for k, v in ck.meta["loss_history"].items()}
        start = ck.meta["step"]
    path = stage_path(out_dir, "vocoder")

    def save(step):
        run.checkpoint(step, history).save(path)

    total = steps if steps is not None else t.vocoder_steps
    run.loop(manifest, vitems, start, total, t.vocoder_lr, history, save, progress)
    return path


def load_vocoder(path) -> tuple[Generator, Checkpoint]:
    ck = Checkpoint.load(path)
    if ck.meta.get("stage") != "vocoder":
        raise FormatError(f"{path}: not a vocoder checkpoint")
    gen = Generator(cfg_from_meta(ck.meta).vocoder)
    ck.load_module("gen", gen)
    return gen.eval(), ck


# -------------------------------------------------------------- public API


def train(cfg, manifest: Manifest, stage: str, out_dir, steps: Optional[int] = None, resume=None,
          progress: Optional[Callable] = None) -> Path:
    """Train one stage; returns the path of its checkpoint."""
    if stage not in STAGES:
        raise ArgumentError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    if not len(manifest):
        raise ArgumentError("empty manifest")
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    _check_prereq(out_dir, stage)
    fn = {"vqvae": _train_vqvae, "armodel": _train_armodel, "vocoder": _train_vocoder}[stage]
    return fn(cfg, manifest, out_dir, steps, resume, progress)


def train_all(cfg, manifest: Manifest, out_dir, progress: Optional[Callable] = None) -> Path:
    for stage in STAGES:
        train(cfg, manifest, stage, out_dir, progress=progress)
    return Path(out_dir)


def finetune(ckpt, manifest: Manifest, steps: int, out_dir=None, vocoder: Optional[bool] = None,
             progress: Optional[Callable] = None) -> Path:
    """Continue AR training (optionally also the vocoder) on adaptation data at a reduced lr.

    ``ckpt`` is an ``armodel.ckpt`` whose directory also holds the other stages.
    The result is a complete pipeline directory; returns the new AR checkpoint path.
    """
    if not len(manifest):
        raise ArgumentError("empty adaptation manifest")
    if steps < 0:
        raise ArgumentError("steps must be >= 0")
    ckpt = Path(ckpt)
    if not ckpt.exists():
        raise DependencyError(f"checkpoint {ckpt} not found")
    src_dir = ckpt.parent
    out_dir = Path(out_dir) if out_dir is not None else src_dir / "finetuned"
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "armodel.ckpt"
    for stage in ("vqvae", "vocoder"):
        src = stage_path(src_dir, stage)
        if src.exists() and src.resolve() != stage_path(out_dir, stage).resolve():
            shutil.copyfile(src, stage_path(out_dir, stage))
    if steps == 0:
        if ckpt.resolve() != out_path.resolve():
            shutil.copyfile(ckpt, out_path)
        return out_path

    stack, vocab, ck = load_armodel(ckpt)
    cfg = cfg_from_meta(ck.meta)
    t = cfg.training
    do_vocoder = t.finetune_vocoder if vocoder is None else vocoder
    vq = load_vqvae(stage_path(src_dir, "vqvae"))
    corpus = load_corpus(manifest, cfg)
    items = prepare_ar_items(corpus, cfg, vocab, vq)
    lr = t.lr * t.finetune_lr_scale
    opt = _ar_optimizer(stack, cfg, lr)
    history: dict = {}
    base_step = ck.meta["step"]

    def save(step):
        _ar_checkpoint(stack, opt, cfg, ck.meta["vocab"], base_step + step, history,
                       {"finetune": {"steps": step, "lr": lr, "from_step": base_step}}).save(out_path)

    _ar_loop(stack, opt, cfg, manifest, items, 0, steps, lr, history, save, progress)

    if do_vocoder:
        voc_path = stage_path(src_dir, "vocoder")
        if not voc_path.exists():
            raise DependencyError(f"vocoder fine-tuning needs {voc_path}")
        backend = speaker_backend(cfg)
        vitems = prepare_vocoder_items(corpus, items, stack, backend, cfg.vocoder)
        run = _VocoderRun(cfg, backend)
        vck = Checkpoint.load(voc_path)
        run.restore(vck)
        vhist: dict = {}
        vbase = vck.meta["step"]
        vlr = exponential_lr(vbase, t.vocoder_lr, t.vocoder_lr_decay) * t.finetune_lr_scale

        def vsave(step):
            run.checkpoint(vbase + step, vhist,
                           {"finetune": {"steps": step, "lr": vlr, "from_step": vbase}}).save(
                stage_path(out_dir, "vocoder"))

        run.loop(manifest, vitems, 0, steps, vlr, vhist, vsave, progress)
    return out_path

"""Acceptance criteria 1-11, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line. Run standalone with
``python tests/test_acceptance.py`` to get just those lines.
"""
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from scipy import stats

from polyvox import config as config_mod
from polyvox.armodel import ArConfig, ArModel, SequenceLayout, ar_loss, greedy_decode, total_loss
from polyvox.conditioning import ConditioningConfig, ConditioningEncoder, PerceiverResampler, condition
from polyvox.dsp import CODEC_RATE, VOCODER_RATE, MelSpectrogram, Waveform, load_wav, mel_spectrogram, save_wav
from polyvox.eval import Manifest, cer, load_manifest, manifest_stats
from polyvox.pipeline import Pipeline, sampling_with
from polyvox.sampler import (SamplingConfig, apply_repetition_penalty, apply_top_p, make_rng, next_distribution,
                             sample_next)
from polyvox.speaker import ToyBackend, secs
from polyvox.synthetic import random_text, smoke_pipeline
from polyvox.training import Checkpoint, LrSchedule, accumulated_step, balanced_batches, finetune, lr_at
from polyvox.training.loop import load_armodel, load_corpus, load_vqvae, prepare_ar_items, stage_path
from polyvox.training.optim import AdamW
from polyvox.vocoder import Generator, VocoderConfig
from polyvox.vqvae import CODE_RATE_HZ, VqVae, VqVaeConfig, filter_codebook, latents_of, vq_encode

DATA = Path(__file__).resolve().parents[1] / "src" / "polyvox" / "data"


def _line(n, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {detail}"


def _run(n, fn, smoke_getter, emit):
    try:
        detail = fn(smoke_getter)
    except AssertionError as e:
        emit(_line(n, False, str(e).splitlines()[0] if str(e) else "assertion failed"))
        raise
    emit(_line(n, True, detail))


# --------------------------------------------------------------------- 1


def crit_1(_):
    backend = VqVae(VqVaeConfig())
    vq_encode(mel_spectrogram(Waveform(np.zeros(1024, np.float32), CODEC_RATE)), backend)  # JIT warm-up
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    for n in (1024, 22050, 48000, 220500):
        w = Waveform((0.1 * rng.standard_normal(n)).astype(np.float32), CODEC_RATE)
        got = len(vq_encode(mel_spectrogram(w), backend))
        want = ((n // 256) + 1) // 4
        assert got == want, f"N={n}: {got} codes, formula gives {want}"
    one_s = len(vq_encode(mel_spectrogram(Waveform(np.zeros(22050, np.float32), CODEC_RATE)), backend))
    assert one_s == 21, f"1 s gave {one_s} codes"
    assert round(22050 / 1024, 2) == 21.53 and round(CODE_RATE_HZ, 2) == 21.53
    dt = time.perf_counter() - t0
    assert dt < 1.0, f"runtime {dt:.2f}s"
    return f"1 s -> 21 codes, formula holds for 4 lengths, rate {CODE_RATE_HZ:.3f} Hz ({dt:.2f}s)"


# --------------------------------------------------------------------- 2


def crit_2(_):
    t0 = time.perf_counter()
    cfg = VqVaeConfig(n_mels=8, hidden=16, dim=4, codebook_size=13, keep=2, seed=3)
    model = VqVae(cfg)
    rng = np.random.default_rng(2)
    # three mels of 16 frames -> 4 latent frames each; every latent frame becomes its own codebook row
    base = [MelSpectrogram(rng.normal(-5, 2.5, (16, 8)).astype(np.float32), 256, CODEC_RATE) for _ in range(3)]
    lat = [latents_of(m, model) for m in base]
    slots = [[5, 2, 11, 7], [1, 12, 3, 9], [4, 10, 6, 8]]  # index 0 stays far away and unused
    book = np.full((13, 4), 1e3)
    for frames, idx in zip(lat, slots):
        book[idx] = frames
    with torch.no_grad():
        model.codebook.copy_(torch.as_tensor(book, dtype=model.codebook.dtype))
    mult = [3, 2, 1]
    corpus = [m for m, k in zip(base, mult) for _ in range(k)]
    # independent oracle: count per row from the construction, rank by (-count, index)
    counts = np.zeros(13, int)
    for idx, k in zip(slots, mult):
        counts[idx] += k
    oracle = sorted(range(13), key=lambda i: (-counts[i], i))
    for k in (1, 2, 13):
        got = filter_codebook(model, corpus, k).allowed.tolist()
        assert got == oracle[:k], f"keep={k}: {got} != {oracle[:k]}"
    full = config_mod.loads("vqvae: {codebook_size: 8192, keep: 1024}\n").vqvae
    assert (full.codebook_size, full.keep) == (8192, 1024)
    big = VqVae(full)
    m = MelSpectrogram(rng.normal(-5, 2.5, (64, 80)).astype(np.float32), 256, CODEC_RATE)
    assert len(filter_codebook(big, [m], full.keep).allowed) == 1024
    dt = time.perf_counter() - t0
    assert dt < 10, f"runtime {dt:.1f}s"
    return f"top-k exact for k in (1, 2, 13) with ties, 8192->1024 accepted ({dt:.2f}s)"


# --------------------------------------------------------------------- 3


def crit_3(_):
    t0 = time.perf_counter()
    cfg = ConditioningConfig()
    enc = ConditioningEncoder(cfg).eval()
    rng = np.random.default_rng(3)
    worst = 0.0
    for t in (1, 7, 64, 513):
        mel = MelSpectrogram(rng.normal(-5, 2.5, (t, 80)).astype(np.float32), 256, CODEC_RATE)
        out = condition([mel], enc)
        assert out.shape == (cfg.num_latents, cfg.dim), f"T={t}: shape {out.shape}"
        with torch.no_grad():
            _, w = enc(torch.as_tensor(mel.frames[None]), return_weights=True)
        worst = max(worst, float((w.double().sum(-1) - 1).abs().max()))
    assert worst <= 1e-6, f"attention row sum off by {worst:.2e}"
    dt = time.perf_counter() - t0
    assert dt < 5, f"runtime {dt:.1f}s"
    return f"shape ({cfg.num_latents}, {cfg.dim}) for T in (1, 7, 64, 513); max |row sum - 1| = {worst:.1e} ({dt:.2f}s)"


# --------------------------------------------------------------------- 4


def _analytic(logits, history, temperature, top_p, penalty):
    z = list(logits)
    for i in set(history):
        z[i] = z[i] / penalty if z[i] > 0 else z[i] * penalty
    z = [v / temperature for v in z]
    m = max(z)
    e = [math.exp(v - m) for v in z]
    p = [v / sum(e) for v in e]
    order = sorted(range(len(p)), key=lambda i: -p[i])
    kept, mass = [], 0.0
    for i in order:
        kept.append(i)
        mass += p[i]
        if mass >= top_p:
            break
    q = [p[i] if i in kept else 0.0 for i in range(len(p))]
    return [v / sum(q) for v in q]


def crit_4(_):
    t0 = time.perf_counter()
    assert apply_repetition_penalty([2.0, 1.0], [0], 10.0).tolist() == [0.2, 1.0]
    assert apply_top_p([0.5, 0.3, 0.2], 0.8).tolist() == [0.625, 0.375, 0.0]
    cfg = SamplingConfig()
    assert (cfg.temperature, cfg.top_k, cfg.top_p, cfg.repetition_penalty) == (0.75, 50, 0.85, 10.0)
    n = 100_000
    worst = 0.0
    for logits, hist in (([1.0, 0.5], [0]), ([2.0, 0.0], []), ([0.3, 1.2], [1])):
        want = _analytic(logits, hist, cfg.temperature, cfg.top_p, cfg.repetition_penalty)
        got = next_distribution(np.array(logits), hist, cfg)
        assert np.allclose(got, want, rtol=0, atol=1e-12), f"{logits}: {got} != {want}"
        rng = make_rng(1234)
        draws = np.array([sample_next(np.array(logits), hist, cfg, rng) for _ in range(n)])
        count = int((draws == 0).sum())
        p0 = want[0]
        sigma = math.sqrt(n * p0 * (1 - p0))
        if sigma == 0:
            assert count == round(n * p0), f"{logits}: count {count}, expected {n * p0}"
        else:
            z = abs(count - n * p0) / sigma
            worst = max(worst, z)
            assert z <= 3, f"{logits}: {count} draws of token 0, {z:.2f} sigma from {n * p0:.0f}"
    dt = time.perf_counter() - t0
    assert dt < 30, f"runtime {dt:.1f}s"
    return f"unit examples exact; 3 oracle cases within 3 sigma (worst {worst:.2f}) over {n} draws ({dt:.1f}s)"


# --------------------------------------------------------------------- 5


def crit_5(_):
    sched = LrSchedule()
    got = [lr_at(s, sched, 5e-5) for s in (0, 5000, 150000, 300000)]
    assert got == [5e-5, 2.5e-5, 1.25e-5, 6.25e-6], got

    # one scalar AdamW step against the closed form
    p = torch.nn.Parameter(torch.tensor([0.7], dtype=torch.float64))
    opt = AdamW([("w", p)], lr=5e-5, betas=(0.9, 0.96), weight_decay=0.01)
    p.grad = torch.tensor([0.3], dtype=torch.float64)
    opt.step()
    m_hat = (0.1 * 0.3) / (1 - 0.9)
    v_hat = (0.04 * 0.09) / (1 - 0.96)
    want = 0.7 * (1 - 5e-5 * 0.01) - 5e-5 * m_hat / (math.sqrt(v_hat) + 1e-8)
    err = abs(p.item() - want)
    assert err <= 1e-12, f"AdamW step off by {err:.2e}"

    # 16 micro-batches of 4 vs one batch of 64 on a linear model
    g = torch.Generator().manual_seed(5)
    x = torch.randn(64, 6, generator=g, dtype=torch.float64)
    y = torch.randn(64, 2, generator=g, dtype=torch.float64)

    def linear():
        torch.manual_seed(9)
        return torch.nn.Linear(6, 2).double()

    a, b = linear(), linear()
    opt_a = AdamW.for_module(a, 5e-5, (0.9, 0.96), 0.01)
    opt_b = AdamW.for_module(b, 5e-5, (0.9, 0.96), 0.01)
    micro = [(x[i:i + 4], y[i:i + 4]) for i in range(0, 64, 4)]
    accumulated_step(lambda mb: F.mse_loss(a(mb[0]), mb[1]), micro, opt_a)
    accumulated_step(lambda mb: F.mse_loss(b(mb[0]), mb[1]), [(x, y)], opt_b)
    diff = max(float((pa.grad - pb.grad).abs().max()) for pa, pb in zip(a.parameters(), b.parameters()))
    pdiff = max(float((pa - pb).detach().abs().max()) for pa, pb in zip(a.parameters(), b.parameters()))
    assert diff <= 1e-10 and pdiff <= 1e-10, f"grad diff {diff:.2e}, param diff {pdiff:.2e}"
    return f"lr steps exact; AdamW err {err:.1e}; accumulation grad diff {diff:.1e}"


# --------------------------------------------------------------------- 6


class _Rec:
    def __init__(self, lang):
        self.language = lang


def crit_6(_):
    man = [_Rec("en")] * 7 + [_Rec("fr")] * 3
    stream = balanced_batches(man, 4, seed=11)
    slots = [r.language for _ in range(1000) for r in next(stream)]
    n_en = slots.count("en")
    sigma = math.sqrt(4000 * 0.25)
    assert abs(n_en - 2000) <= 3 * sigma, f"en count {n_en} outside 2000 +- {3 * sigma:.1f}"
    p4000 = stats.chisquare([n_en, 4000 - n_en]).pvalue
    stream = balanced_batches(man, 4, seed=12)
    draws = [r.language for _ in range(2500) for r in next(stream)]
    p10k = stats.chisquare([draws.count("en"), draws.count("fr")]).pvalue
    assert p4000 > 1e-3 and p10k > 1e-3, f"chi-square p {p4000:.3g} / {p10k:.3g}"
    s1, s2 = balanced_batches(man, 4, seed=3), balanced_batches(man, 4, seed=3)
    assert all([id(r) for r in next(s1)] == [id(r) for r in next(s2)] for _ in range(500))
    return f"en={n_en}/4000 (3 sigma = {3 * sigma:.1f}); chi-square p={p4000:.3f} (4k), {p10k:.3f} (10k); seeded streams identical"


# --------------------------------------------------------------------- 7


def fd_check(loss_fn, params, rng, per_param=6, eps=1e-6, rtol=1e-3, atol=1e-5):
    """Compare autograd against central differences on a sample of entries.

    Returns (worst |analytic - numeric| / tolerance, largest |numeric|).
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]
    worst = scale = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat = p.view(-1)
            idx = rng.choice(flat.numel(), size=min(per_param, flat.numel()), replace=False)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                num = (up - down) / (2 * eps)
                ana = g.view(-1)[i].item()
                worst = max(worst, abs(ana - num) / (atol + rtol * abs(num)))
                scale = max(scale, abs(num))
    return worst, scale


def crit_7(_):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    results = {}

    # VQ-VAE encoder path; straight-through surrogate with codes and offset frozen at the evaluation point
    vq = VqVae(VqVaeConfig(n_mels=8, hidden=16, dim=4, codebook_size=16, seed=1)).double()
    mel = torch.as_tensor(rng.normal(-5, 2.5, (2, 16, 8)))
    with torch.no_grad():
        z0 = vq.encode_latents(mel)
        _, zq_raw, codes = vq.quantize(z0)
    offset = zq_raw - z0
    enc_params = list(vq.encoder.parameters())

    def vq_analytic():
        recon, commit, cb, _ = vq.losses(mel, codes)
        return recon + cb + vq.cfg.beta * commit

    def vq_surrogate():
        z = vq.encode_latents(mel)
        recon = F.mse_loss(vq.decode_latents(z + offset), mel)
        return recon + F.mse_loss(zq_raw, z0) + vq.cfg.beta * F.mse_loss(z, zq_raw)

    for p in enc_params:
        p.grad = None
    vq_analytic().backward()
    ana = [p.grad.clone() for p in enc_params]
    worst = scale = 0.0
    with torch.no_grad():
        for p, g in zip(enc_params, ana):
            flat = p.view(-1)
            for i in rng.choice(flat.numel(), size=min(6, flat.numel()), replace=False):
                orig = flat[i].item()
                flat[i] = orig + 1e-6
                up = vq_surrogate().item()
                flat[i] = orig - 1e-6
                down = vq_surrogate().item()
                flat[i] = orig
                num = (up - down) / 2e-6
                worst = max(worst, abs(g.view(-1)[i].item() - num) / (1e-5 + 1e-3 * abs(num)))
                scale = max(scale, abs(num))
    results["vqvae"] = worst, scale

    # 1-layer AR model
    ar = ArModel(ArConfig(text_vocab=12, n_codes=6, cond_dim=4, num_latents=2, dim=8, layers=1, heads=2,
                          max_text_positions=8, max_audio_positions=8), bos_id=1, eos_id=2, pad_id=0).double()
    layout = SequenceLayout(torch.as_tensor(rng.standard_normal((2, 2, 4))), [[3, 4, 5], [6, 7]], [[0, 1, 2], [3]])
    results["armodel"] = fd_check(lambda: total_loss(*ar_loss(layout, ar), ar.cfg), list(ar.parameters()), rng)

    # 1-layer resampler
    res = PerceiverResampler(8, 2, 3).double()
    x = torch.as_tensor(rng.standard_normal((1, 5, 8)))
    wt = torch.as_tensor(rng.standard_normal((1, 3, 8)))
    results["resampler"] = fd_check(lambda: (res(x) * wt).sum(), list(res.parameters()), rng)

    # 1-stage vocoder generator with speaker conditioning
    gen = Generator(VocoderConfig(in_dim=6, spk_dim=3, channels=8, min_channels=4, upsample_factors=(4,),
                                  resblock_dilations=(1,))).double()
    lat = torch.as_tensor(rng.standard_normal((1, 6, 5)))
    spk = torch.as_tensor(rng.standard_normal((1, 3)))
    wv = torch.as_tensor(rng.standard_normal((1, 20)))
    results["vocoder"] = fd_check(lambda: (gen(lat, spk) * wv).sum(), list(gen.parameters()), rng)

    dt = time.perf_counter() - t0
    bad = {k: w for k, (w, _) in results.items() if w > 1}
    assert not bad, f"finite-difference mismatch (err/tol): {bad}"
    flat = [k for k, (_, g) in results.items() if g < 1e-4]
    assert not flat, f"sampled gradients vanish for {flat}"
    assert dt < 120, f"runtime {dt:.0f}s"
    return "max err/tol " + ", ".join(f"{k} {w:.1e}" for k, (w, _) in results.items()) + f" ({dt:.1f}s)"


# --------------------------------------------------------------------- 8


def _greedy_hits(run):
    cfg = config_mod.smoke_config()
    stack, vocab, _ = load_armodel(stage_path(run.ckpt_dir, "armodel"))
    vq = load_vqvae(stage_path(run.ckpt_dir, "vqvae"))
    items = prepare_ar_items(load_corpus(run.train, cfg), cfg, vocab, vq)
    hits = 0
    for it in items.values():
        with torch.no_grad():
            cond = stack.cond_latents([it.cond])[0]
        hits += greedy_decode(stack.ar, cond, it.text_ids, len(it.codes) + 10) == it.codes
    return hits, len(items)


def crit_8(get_smoke):
    run = get_smoke()
    assert len(run.train) == 20
    hist = Checkpoint.load(stage_path(run.ckpt_dir, "armodel")).meta["loss_history"]["audio_ce"]
    assert len(hist) <= 300, f"{len(hist)} steps"
    drop = 1 - hist[-1] / hist[0]
    assert drop >= 0.9, f"audio CE {hist[0]:.3f} -> {hist[-1]:.3f} ({drop:.1%})"
    hits, total = _greedy_hits(run)
    assert hits >= 18, f"greedy reproduces {hits}/{total}"
    pipe = Pipeline(run.ckpt_dir)
    ref = load_wav(run.heldout.resolve(run.heldout.records[0]))
    res = pipe.synthesize("bada kiru mo", "en", [ref])
    with tempfile.TemporaryDirectory() as tmp:
        save_wav(Path(tmp) / "out.wav", res.audio)
        back = load_wav(Path(tmp) / "out.wav")
    assert back.sample_rate_hz == VOCODER_RATE
    gap = abs(back.duration_s - res.code_count / 21.533)
    frame = 1024 / VOCODER_RATE
    assert gap <= frame, f"duration {back.duration_s:.4f}s vs {res.code_count}/21.533 (gap {gap:.4f}s)"
    assert run.seconds < 900, f"training took {run.seconds:.0f}s"
    return (f"audio CE {hist[0]:.3f} -> {hist[-1]:.2e} ({drop:.2%}) in {len(hist)} steps; greedy {hits}/{total}; "
            f"{res.code_count} codes -> {back.duration_s:.4f}s (gap {gap:.4f}s); trained in {run.seconds:.0f}s")


# --------------------------------------------------------------------- 9


def crit_9(_):
    assert cer("abc", "abc") == 0.0
    assert cer("kitten", "sitting") == 3 / 7
    assert cer("", "abc") == 1.0
    rng = np.random.default_rng(9)
    backend = ToyBackend()
    a = Waveform((0.2 * rng.standard_normal(22050)).astype(np.float32), CODEC_RATE)
    b = Waveform((0.2 * np.sin(np.arange(22050) * 0.05)).astype(np.float32), CODEC_RATE)
    assert secs(a, a, backend) == 1.0 and secs(b, b, backend) == 1.0
    assert secs(a, b, backend) == secs(b, a, backend)
    _, total = manifest_stats(load_manifest(DATA / "table1_manifest.jsonl"))
    assert total == 27281.6, f"total {total!r}"
    return f"CER 0 / 3/7 / 1 exact; SECS self=1, symmetric; Table 1 total {total}"


# -------------------------------------------------------------------- 10


def crit_10(get_smoke):
    run = get_smoke()
    pipe = Pipeline(run.ckpt_dir)
    ref = load_wav(run.heldout.resolve(run.heldout.records[1]))
    sampling = sampling_with(pipe.cfg.sampler, seed=42)
    with tempfile.TemporaryDirectory() as tmp:
        blobs = []
        for i in range(2):
            save_wav(Path(tmp) / f"{i}.wav", pipe.synthesize("lomi saku", "es", [ref], sampling).audio)
            blobs.append((Path(tmp) / f"{i}.wav").read_bytes())
        assert blobs[0] == blobs[1], "same seed gave different WAV bytes"
        for stage in ("vqvae", "armodel", "vocoder"):
            first = Checkpoint.load(stage_path(run.ckpt_dir, stage)).save(Path(tmp) / f"{stage}.a")
            second = Checkpoint.load(first).save(Path(tmp) / f"{stage}.b")
            assert first.read_bytes() == second.read_bytes(), f"{stage} checkpoint not byte-stable"
            assert first.read_bytes() == stage_path(run.ckpt_dir, stage).read_bytes()
    for cfg in (config_mod.PipelineConfig(), config_mod.smoke_config()):
        text = config_mod.dump(cfg)
        assert config_mod.loads(text) == cfg and config_mod.dump(config_mod.loads(text)) == text
    return "seeded WAV byte-identical; 3 checkpoints save/load/save byte-identical; config dump round-trips"


# -------------------------------------------------------------------- 11


def mean_secs(ckpt_dir, refs, texts):
    pipe = Pipeline(ckpt_dir)
    scores = []
    for i, text in enumerate(texts):
        out = pipe.synthesize(text, "en", [refs[i % len(refs)]]).audio
        scores.append(np.mean([secs(out, r, pipe.backend) for r in refs]))
    return float(np.mean(scores))


def crit_11(get_smoke):
    run = get_smoke()
    held = run.heldout
    adapt = Manifest(held.records[:6], held.root)
    refs = [load_wav(held.resolve(r)) for r in held.records[6:]]
    rng = np.random.default_rng(11)
    texts = [random_text(rng) for _ in range(6)]
    before = mean_secs(run.ckpt_dir, refs, texts)
    out = finetune(stage_path(run.ckpt_dir, "armodel"), adapt, steps=60, out_dir=run.root / "adapted")
    after = mean_secs(out.parent, refs, texts)
    assert after > before, f"SECS {before:.4f} -> {after:.4f}"
    return f"held-out speaker SECS {before:.4f} -> {after:.4f} after 60 AR-only steps at 0.1x lr"


CRITERIA = [crit_1, crit_2, crit_3, crit_4, crit_5, crit_6, crit_7, crit_8, crit_9, crit_10, crit_11]


# ------------------------------------------------------------------ pytest


@pytest.fixture
def emit(capsys):
    def out(line):
        with capsys.disabled():
            print("\n" + line)
    return out


@pytest.mark.parametrize("n", range(1, 12))
def test_criterion(n, request, emit):
    _run(n, CRITERIA[n - 1], lambda: request.getfixturevalue("smoke"), emit)


if __name__ == "__main__":
    _cache = {}

    def _get():
        if "run" not in _cache:
            _cache["run"] = smoke_pipeline(tempfile.mkdtemp(prefix="polyvox-smoke-"))
        return _cache["run"]

    failed = 0
    for i, fn in enumerate(CRITERIA, 1):
        try:
            _run(i, fn, _get, print)
        except AssertionError:
            failed += 1
    raise SystemExit(1 if failed else 0)

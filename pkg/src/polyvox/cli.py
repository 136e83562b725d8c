"""Command-line entry point.

Exit codes: 0 ok, 1 runtime failure, 2 usage. Failures print one JSON object
``{"error": <category>, "message": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from .errors import PolyvoxError

log = logging.getLogger("polyvox")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_sampling(p):
    d = config_mod.PipelineConfig().sampler
    p.add_argument("--temperature", type=float, help=f"default {d.temperature}")
    p.add_argument("--top-k", type=int, help=f"default {d.top_k}")
    p.add_argument("--top-p", type=float, help=f"default {d.top_p}")
    p.add_argument("--repetition-penalty", type=float, help=f"default {d.repetition_penalty}")
    p.add_argument("--length-penalty", type=float, help=f"default {d.length_penalty}")
    p.add_argument("--max-codes", type=int, help=f"default {d.max_codes}")
    p.add_argument("--best-of", type=int, help=f"default {d.best_of}")
    p.add_argument("--seed", type=int, help=f"default {d.seed}")
    p.add_argument("--greedy", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="polyvox", description="Multilingual zero-shot TTS toolkit.")
    ap.add_argument("--config", help=f"YAML config (default: ${config_mod.CONFIG_ENV} or built-ins)")
    ap.add_argument("--preset", choices=sorted(config_mod.PRESETS), help="start from a named preset")
    ap.add_argument("--dump-config", action="store_true", help="print the effective config and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", parser_class=_Parser)

    tok = sub.add_parser("tokenizer").add_subparsers(dest="action", parser_class=_Parser)
    p = tok.add_parser("train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int)
    p = tok.add_parser("encode")
    p.add_argument("--vocab", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--text", required=True)

    vq = sub.add_parser("vqvae").add_subparsers(dest="action", parser_class=_Parser)
    p = vq.add_parser("train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p = vq.add_parser("filter")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--keep", type=int, required=True)
    p.add_argument("--out", required=True)
    p = vq.add_parser("encode")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav", required=True)

    p = sub.add_parser("train")
    p.add_argument("--stage", required=True, choices=["vqvae", "armodel", "vocoder"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--resume")

    p = sub.add_parser("finetune")
    p.add_argument("--ckpt", required=True, help="armodel.ckpt of a trained pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--out", help="output pipeline directory (default <ckpt dir>/finetuned)")
    p.add_argument("--vocoder", action="store_true", default=None, help="also adapt the vocoder")

    p = sub.add_parser("synthesize")
    p.add_argument("--text", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--ref", action="append", required=True, help="reference WAV (repeatable)")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--out", required=True)
    _add_sampling(p)

    ev = sub.add_parser("eval").add_subparsers(dest="action", parser_class=_Parser)
    p = ev.add_parser("cer")
    p.add_argument("--hyp", required=True, help="hypothesis text file")
    p.add_argument("--ref", required=True, help="reference text file")
    p.add_argument("--cased", action="store_true")
    p = ev.add_parser("secs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--backend", choices=["toy", "file"], default="toy")
    p = ev.add_parser("report")
    p.add_argument("--outputs", required=True,
                   help="JSONL: id, audio_path, text, language, reference_path")
    p.add_argument("--transcripts", help="JSONL of {id, text} from an external ASR")
    p.add_argument("--backend", choices=["toy", "file"], default="toy")
    p.add_argument("--format", choices=["md", "csv"], default="md")
    p.add_argument("--cased", action="store_true")

    man = sub.add_parser("manifest").add_subparsers(dest="action", parser_class=_Parser)
    p = man.add_parser("stats")
    p.add_argument("--manifest", required=True)
    p = man.add_parser("validate")
    p.add_argument("--manifest", required=True)
    return ap


# ----------------------------------------------------------------- commands


def _config(args):
    if args.config or not args.preset:
        cfg = config_mod.load(args.config)
        if args.preset and args.preset != "default":
            raise UsageError("use either --config or --preset")
        return cfg
    return config_mod.PRESETS[args.preset]()


def _progress(step, losses):
    log.info("step %d %s", step, " ".join(f"{k}={v:.4g}" for k, v in losses.items()))


def cmd_tokenizer(args, cfg):
    from .eval import load_manifest
    from .frontend import BpeVocab, encode, train_bpe

    if args.action == "train":
        m = load_manifest(args.manifest)
        size = args.vocab_size or cfg.tokenizer.vocab_size
        vocab = train_bpe(((r.text, r.language) for r in m.records), size, cfg.tokenizer.fallback)
        vocab.save(args.out)
        print(f"tokens={len(vocab)} merges={len(vocab.merges)} truncated={str(vocab.truncated).lower()}")
    else:
        seq = encode(args.text, args.lang, BpeVocab.load(args.vocab))
        print(" ".join(map(str, seq.ids)))


def cmd_vqvae(args, cfg):
    from .dsp import load_wav, mel_spectrogram, resample
    from .eval import load_manifest
    from .training import Checkpoint, load_vqvae, train
    from .training.loop import _cfg_meta, cfg_from_meta, load_corpus
    from .vqvae import filter_codebook, vq_encode

    if args.action == "train":
        print(train(cfg, load_manifest(args.manifest), "vqvae", args.out, steps=args.steps,
                    progress=_progress))
    elif args.action == "filter":
        model = load_vqvae(args.ckpt)
        ck_cfg = cfg_from_meta(Checkpoint.load(args.ckpt).meta)
        corpus = load_corpus(load_manifest(args.manifest), ck_cfg)
        model.retained = model.retained[:0]
        out = filter_codebook(model, [u.mel for u in corpus.values()], args.keep)
        ck = Checkpoint({"stage": "vqvae", "step": Checkpoint.load(args.ckpt).meta["step"], "filtered": True,
                         "loss_history": {}, **_cfg_meta(ck_cfg)})
        ck.add_module("model", out)
        ck.save(args.out)
        print(" ".join(map(str, out.allowed.tolist())))
    else:
        model = load_vqvae(args.ckpt)
        w = load_wav(args.wav)
        mel_cfg = cfg.dsp.mel()
        if w.sample_rate_hz != mel_cfg.sample_rate_hz:
            w = resample(w, mel_cfg.sample_rate_hz, cfg.dsp.resample_mode)
        print(" ".join(map(str, vq_encode(mel_spectrogram(w, mel_cfg), model).codes.tolist())))


def cmd_train(args, cfg):
    from .eval import load_manifest
    from .training import train

    print(train(cfg, load_manifest(args.manifest), args.stage, args.out, steps=args.steps,
                resume=args.resume, progress=_progress))


def cmd_finetune(args, cfg):
    from .eval import load_manifest
    from .training import finetune

    print(finetune(args.ckpt, load_manifest(args.manifest), args.steps, args.out, vocoder=args.vocoder,
                   progress=_progress))


def cmd_synthesize(args, cfg):
    from .dsp import load_wav, save_wav
    from .pipeline import Pipeline, sampling_with

    pipe = Pipeline(args.ckpt_dir)
    # an explicit config wins over the sampler settings stored in the checkpoint
    explicit = args.config or args.preset or os.environ.get(config_mod.CONFIG_ENV)
    base = cfg.sampler if explicit else pipe.cfg.sampler
    sampling = sampling_with(base, temperature=args.temperature, top_k=args.top_k, top_p=args.top_p,
                             repetition_penalty=args.repetition_penalty, length_penalty=args.length_penalty,
                             max_codes=args.max_codes, best_of=args.best_of, seed=args.seed, greedy=args.greedy)
    res = pipe.synthesize(args.text, args.lang, [load_wav(r) for r in args.ref], sampling)
    save_wav(args.out, res.audio)
    print(f"codes={res.code_count} duration_s={res.audio.duration_s:.4f} seed={res.seed} out={args.out}")


def cmd_eval(args, cfg):
    from .dsp import load_wav
    from .eval import NormalizerConfig, SynthOutput, cer, evaluate, load_transcripts
    from .speaker import get_backend, secs

    e = cfg.eval
    norm = NormalizerConfig(e.nfc, e.lowercase and not getattr(args, "cased", False), e.strip_punct, e.collapse_ws)

    def backend(name):
        if name == "toy":
            return get_backend("toy", dim=e.speaker_dim, seed=e.speaker_seed, mel=cfg.dsp.mel())
        return get_backend("file")

    if args.action == "cer":
        hyp = Path(args.hyp).read_text(encoding="utf-8")
        ref = Path(args.ref).read_text(encoding="utf-8")
        print(cer(hyp, ref, norm))
    elif args.action == "secs":
        print(secs(load_wav(args.a), load_wav(args.b), backend(args.backend)))
    else:
        root = Path(args.outputs).parent
        rows = [json.loads(line) for line in Path(args.outputs).read_text(encoding="utf-8").splitlines()
                if line.strip()]

        def wav(p):
            p = Path(p)
            return load_wav(p if p.is_absolute() else root / p)

        outs = [SynthOutput(wav(r["audio_path"]), r["text"], wav(r["reference_path"]), r["language"],
                            str(r.get("id", i))) for i, r in enumerate(rows)]
        transcripts = None
        if args.transcripts:
            table = load_transcripts(args.transcripts)
            transcripts = [table[o.id] for o in outs if o.id in table]
        report = evaluate(outs, backend(args.backend), transcripts, norm)
        sys.stdout.write(report.to_markdown() if args.format == "md" else report.to_csv())


def cmd_manifest(args, cfg):
    from .eval import format_hours, load_manifest, manifest_stats

    m = load_manifest(args.manifest)
    if args.action == "validate":
        print(f"ok records={len(m)}")
        return
    hours, total = manifest_stats(m)
    for lang, h in hours.items():
        print(f"{lang}\t{format_hours(h)}")
    print(f"total\t{format_hours(total)}")


COMMANDS = {"tokenizer": cmd_tokenizer, "vqvae": cmd_vqvae, "train": cmd_train, "finetune": cmd_finetune,
            "synthesize": cmd_synthesize, "eval": cmd_eval, "manifest": cmd_manifest}
NEEDS_ACTION = {"tokenizer", "vqvae", "eval", "manifest"}


def _fail(category: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": category, "message": message}) + "\n")
    return code


def run_subcommand(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.cmd is None and not args.dump_config:
            raise UsageError("missing subcommand")
        if args.cmd in NEEDS_ACTION and args.action is None:
            raise UsageError(f"{args.cmd}: missing action")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        cfg = _config(args)
    except UsageError as e:
        parser.print_help(sys.stderr)
        return _fail("usage", str(e), 2)
    except PolyvoxError as e:
        return _fail(e.category, str(e), 1)
    if args.dump_config:
        sys.stdout.write(config_mod.dump(cfg))
        return 0
    try:
        COMMANDS[args.cmd](args, cfg)
    except UsageError as e:
        return _fail("usage", str(e), 2)
    except PolyvoxError as e:
        return _fail(e.category, str(e), 1)
    except FileNotFoundError as e:
        return _fail("io", f"file not found: {e.filename or e}", 1)
    except OSError as e:
        return _fail("io", str(e), 1)
    return 0


def main(argv=None):
    sys.exit(run_subcommand(argv))


if __name__ == "__main__":
    main()

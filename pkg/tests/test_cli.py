import json
from pathlib import Path

import pytest

from polyvox import config as config_mod
from polyvox.cli import run_subcommand
from polyvox.training.loop import stage_path

TABLE1 = Path(__file__).resolve().parents[1] / "src" / "polyvox" / "data" / "table1_manifest.jsonl"


def run(capsys, *argv):
    code = run_subcommand(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_no_args_is_usage(capsys):
    code, _, err = run(capsys)
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "usage"


def test_unknown_subcommand(capsys):
    assert run(capsys, "dance")[0] == 2
    assert run(capsys, "eval")[0] == 2


def test_manifest_stats(capsys):
    code, out, _ = run(capsys, "manifest", "stats", "--manifest", str(TABLE1))
    assert code == 0
    assert out.strip().splitlines()[-1] == "total\t27281.6"
    assert run(capsys, "manifest", "validate", "--manifest", str(TABLE1))[1].strip() == "ok records=16"


def test_eval_cer(capsys, tmp_path):
    (tmp_path / "h.txt").write_text("hello there\n")
    (tmp_path / "r.txt").write_text("hello there\n")
    code, out, _ = run(capsys, "eval", "cer", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "r.txt"))
    assert code == 0 and out.strip() == "0.0"


def test_missing_file_is_io_error(capsys, tmp_path):
    code, _, err = run(capsys, "manifest", "stats", "--manifest", str(tmp_path / "none.jsonl"))
    assert code == 1 and json.loads(err)["error"] == "io"


def test_dump_config_roundtrip(capsys, tmp_path):
    code, out, _ = run(capsys, "--dump-config")
    assert code == 0 and config_mod.loads(out) == config_mod.PipelineConfig()
    p = tmp_path / "c.yaml"
    p.write_text(out)
    assert run(capsys, "--config", str(p), "--dump-config")[1] == out
    smoke = run(capsys, "--preset", "smoke", "--dump-config")[1]
    assert config_mod.loads(smoke) == config_mod.smoke_config()


def test_bad_config_is_config_error(capsys, tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("sampler: {nope: 1}\n")
    code, _, err = run(capsys, "--config", str(p), "--dump-config")
    assert code == 1 and json.loads(err)["error"] == "config"


def test_synthesize_deterministic(capsys, smoke, tmp_path):
    ref = str(smoke.heldout.resolve(smoke.heldout.records[0]))
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}.wav"
        code, text, err = run(capsys, "synthesize", "--text", "bada kiru", "--lang", "en", "--ref", ref,
                              "--ckpt-dir", str(smoke.ckpt_dir), "--out", str(out), "--seed", "5")
        assert code == 0, err
        fields = dict(kv.split("=", 1) for kv in text.split())
        assert abs(float(fields["duration_s"]) - int(fields["codes"]) / 21.533) <= 1024 / 24000
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_synthesize_errors(capsys, smoke, tmp_path):
    ref = str(smoke.heldout.resolve(smoke.heldout.records[0]))
    code, _, err = run(capsys, "synthesize", "--text", "x", "--lang", "xx", "--ref", ref,
                       "--ckpt-dir", str(smoke.ckpt_dir), "--out", str(tmp_path / "o.wav"))
    assert code == 1 and json.loads(err)["error"] == "argument"
    code, _, err = run(capsys, "synthesize", "--text", "x", "--lang", "en", "--ref", ref,
                       "--ckpt-dir", str(tmp_path), "--out", str(tmp_path / "o.wav"))
    assert code == 1 and json.loads(err)["error"] == "dependency"


def test_tokenizer_and_vqvae_commands(capsys, smoke, tmp_path):
    vocab = tmp_path / "v.txt"
    man = str(smoke.root / "data" / "manifest.jsonl")
    code, out, _ = run(capsys, "--preset", "smoke", "tokenizer", "train", "--manifest", man, "--out", str(vocab))
    assert code == 0 and out.startswith("tokens=")
    code, out, _ = run(capsys, "tokenizer", "encode", "--vocab", str(vocab), "--lang", "en", "--text", "bada")
    assert code == 0 and all(t.isdigit() for t in out.split())
    wav = str(smoke.train.resolve(smoke.train.records[0]))
    code, out, _ = run(capsys, "vqvae", "encode", "--ckpt", str(stage_path(smoke.ckpt_dir, "vqvae")), "--wav", wav)
    assert code == 0 and len(out.split()) >= 1


def test_eval_secs_and_report(capsys, smoke, tmp_path):
    a = smoke.train.resolve(smoke.train.records[0])
    code, out, _ = run(capsys, "eval", "secs", "--a", str(a), "--b", str(a))
    assert code == 0 and float(out) == 1.0
    rows = tmp_path / "outs.jsonl"
    rows.write_text(json.dumps({"id": "u1", "audio_path": str(a), "text": "bada", "language": "en",
                                "reference_path": str(a)}) + "\n")
    trans = tmp_path / "t.jsonl"
    trans.write_text(json.dumps({"id": "u1", "text": "bada"}) + "\n")
    code, out, _ = run(capsys, "eval", "report", "--outputs", str(rows), "--transcripts", str(trans))
    assert code == 0 and "| en | 0.0000 | 1.0000 |" in out
    code, out, _ = run(capsys, "eval", "report", "--outputs", str(rows), "--format", "csv")
    assert out.splitlines()[0] == "language,CER,SECS,n_utts"

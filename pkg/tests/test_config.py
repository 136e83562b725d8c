import pytest

from polyvox import config as config_mod
from polyvox.errors import ConfigError


def test_defaults():
    c = config_mod.PipelineConfig()
    assert (c.sampler.temperature, c.sampler.top_k, c.sampler.top_p, c.sampler.repetition_penalty) == (
        0.75, 50, 0.85, 10.0)
    assert (c.training.lr, c.training.betas, c.training.weight_decay) == (5e-5, (0.9, 0.96), 0.01)
    assert (c.training.grad_accum, c.training.batch_size) == (16, 4)
    assert c.training.milestones == (5000, 150000, 300000) or list(c.training.milestones) == [5000, 150000, 300000]
    assert c.tokenizer.vocab_size == 6681
    assert (c.dsp.sample_rate_hz, c.dsp.n_fft, c.dsp.hop_length, c.dsp.n_mels) == (22050, 1024, 256, 80)
    assert c.training.finetune_lr_scale == 0.1


@pytest.mark.parametrize("name", sorted(config_mod.PRESETS))
def test_dump_roundtrip(name):
    cfg = config_mod.PRESETS[name]()
    text = config_mod.dump(cfg)
    assert config_mod.loads(text) == cfg
    assert config_mod.dump(config_mod.loads(text)) == text


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        config_mod.loads("sampler: {bogus: 1}\n")
    with pytest.raises(ConfigError):
        config_mod.loads("nonsense: 3\n")


def test_missing_keys_default_and_coerce():
    c = config_mod.loads("sampler: {top_k: 7}\ntraining: {lr: 1}\n")
    assert c.sampler.top_k == 7 and c.sampler.temperature == 0.75
    assert c.training.lr == 1.0 and isinstance(c.training.lr, float)


def test_bad_types():
    with pytest.raises(ConfigError):
        config_mod.loads("sampler: {top_k: many}\n")
    with pytest.raises(ConfigError):
        config_mod.loads(": : :\n- [")


def test_hash_tracks_content():
    a = config_mod.PipelineConfig()
    b = config_mod.loads("seed: 1\n")
    assert config_mod.config_hash(a) == config_mod.config_hash(config_mod.PipelineConfig())
    assert config_mod.config_hash(a) != config_mod.config_hash(b)


def test_env_var(tmp_path, monkeypatch):
    p = tmp_path / "c.yaml"
    p.write_text("seed: 9\n")
    monkeypatch.setenv(config_mod.CONFIG_ENV, str(p))
    assert config_mod.load().seed == 9
    monkeypatch.delenv(config_mod.CONFIG_ENV)
    assert config_mod.load() == config_mod.PipelineConfig()

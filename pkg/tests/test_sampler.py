import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from polyvox.armodel import ArConfig, ArModel, greedy_decode
from polyvox.errors import ArgumentError, NumericError
from polyvox.sampler import (PIPELINE_STAGES, SamplingConfig, apply_repetition_penalty, apply_temperature,
                             apply_top_k, apply_top_p, make_rng, next_distribution, sample_codes, sample_next,
                             softmax)

logit_vectors = st.lists(st.floats(-20, 20), min_size=2, max_size=12).map(np.array)


def test_repetition_penalty_examples():
    assert apply_repetition_penalty([2.0, 1.0], [0], 1.0).tolist() == [2.0, 1.0]
    assert apply_repetition_penalty([2.0, 1.0], [0], 10.0).tolist() == [0.2, 1.0]
    assert apply_repetition_penalty([-1.0, 1.0], {0}, 10.0).tolist() == [-10.0, 1.0]


def test_temperature_examples():
    assert apply_temperature([1.0, 2.0], 1.0).tolist() == [1.0, 2.0]
    assert apply_temperature([1.0, 2.0], 0.5).tolist() == [2.0, 4.0]
    with pytest.raises(ArgumentError):
        apply_temperature([1.0], 0.0)


def test_top_k_examples():
    assert apply_top_k([3.0, 2.0, 1.0], 2).tolist() == [3.0, 2.0, -np.inf]
    assert apply_top_k([3.0, 2.0, 1.0], 5).tolist() == [3.0, 2.0, 1.0]
    assert softmax(apply_top_k([1.0, 4.0, 2.0], 1)).tolist() == [0.0, 1.0, 0.0]


def test_top_p_examples():
    assert apply_top_p([0.5, 0.3, 0.2], 1.0).tolist() == [0.5, 0.3, 0.2]
    assert apply_top_p([0.5, 0.3, 0.2], 0.8).tolist() == [0.625, 0.375, 0.0]
    assert np.count_nonzero(apply_top_p([0.5, 0.3, 0.2], 0.85)) == 3


def test_defaults():
    c = SamplingConfig()
    assert (c.temperature, c.top_k, c.top_p, c.repetition_penalty, c.length_penalty) == (0.75, 50, 0.85, 10.0, 1.0)
    with pytest.raises(ArgumentError):
        SamplingConfig(top_p=0.0)


def test_pipeline_trace_order():
    trace = []
    sample_next(np.array([1.0, 0.5, 0.2]), [0], SamplingConfig(), make_rng(0), trace)
    assert tuple(trace) == PIPELINE_STAGES


@settings(max_examples=100, deadline=None)
@given(logits=logit_vectors, t=st.floats(0.05, 5), p=st.floats(0.01, 1.0), k=st.integers(0, 15))
def test_distribution_properties(logits, t, p, k):
    probs = next_distribution(logits, [], SamplingConfig(temperature=t, top_p=p, top_k=k, repetition_penalty=1.0))
    assert abs(probs.sum() - 1) <= 1e-6 and np.all(probs >= 0)
    # temperature keeps the argmax, top-p never drops it
    scaled = apply_temperature(logits, t)
    assert scaled[np.argmax(logits)] == scaled.max()
    # argmax of the distribution top-p sees (logits a few ulps apart can tie after softmax)
    assert probs[np.argmax(softmax(apply_top_k(apply_temperature(logits, t), k)))] > 0


@settings(max_examples=50, deadline=None)
@given(logits=logit_vectors, p=st.floats(0.01, 1.0))
def test_top_p_keeps_argmax(logits, p):
    probs = softmax(logits)
    assert apply_top_p(probs, p)[np.argmax(probs)] > 0


def _toy_model():
    return ArModel(ArConfig(text_vocab=10, n_codes=6, cond_dim=4, num_latents=2, dim=16, layers=1, heads=2,
                            max_text_positions=8, max_audio_positions=40)).eval()


def test_sample_codes_deterministic():
    m = _toy_model()
    cond = torch.randn(2, 4)
    cfg = SamplingConfig(seed=7, max_codes=30)
    assert sample_codes(m, cond, [3, 4], cfg) == sample_codes(m, cond, [3, 4], cfg)


def test_greedy_mode_matches_argmax_decoding():
    m = _toy_model()
    cond = torch.randn(2, 4)
    got = sample_codes(m, cond, [3], SamplingConfig(greedy=True, max_codes=20))
    assert got == greedy_decode(m, cond, [3], max_codes=20)


def test_nonfinite_logits():
    m = _toy_model()
    with torch.no_grad():
        m.audio_head.bias[0] = float("nan")
    with pytest.raises(NumericError, match="step 0"):
        sample_codes(m, torch.zeros(2, 4), [3], SamplingConfig(max_codes=5))


def test_best_of_is_deterministic():
    m = _toy_model()
    cfg = SamplingConfig(seed=3, best_of=3, max_codes=20)
    assert sample_codes(m, torch.zeros(2, 4), [3], cfg) == sample_codes(m, torch.zeros(2, 4), [3], cfg)


def test_penalty_window_limits_history():
    # window 1 only penalises the last code, so an earlier repeat keeps its logit
    logits = np.array([2.0, 2.0, 0.0])
    full = next_distribution(logits, [0, 1], SamplingConfig(top_k=0, top_p=1.0))
    windowed = next_distribution(logits, [1], SamplingConfig(top_k=0, top_p=1.0))
    assert full[0] < windowed[0]

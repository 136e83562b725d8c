import numpy as np
import pytest
from scipy.signal import lfilter

from polyvox.dsp import Waveform, save_wav
from polyvox.errors import ArgumentError, BackendError, FormatError
from polyvox.speaker import (FileBackend, SpeakerEmbedding, ToyBackend, get_backend, read_embedding, secs,
                             write_embedding)

# two "speakers": fixed resonant filters applied to fresh noise
FILTERS = {"low": ([1.0], [1.0, -1.6, 0.8]), "high": ([1.0], [1.0, 1.2, 0.6])}


def clip(name, seed, n=22050):
    b, a = FILTERS[name]
    x = lfilter(b, a, np.random.default_rng(seed).standard_normal(n))
    return Waveform((0.3 * x / np.abs(x).max()).astype(np.float32), 22050)


class FixedBackend:
    def __init__(self, table):
        self.table = table

    def embed(self, w):
        return SpeakerEmbedding(self.table[float(w.samples[0])])


def test_toy_embedding_contract():
    backend = ToyBackend()
    x = clip("low", 0)
    a, b = backend.embed(x), backend.embed(Waveform(x.samples.copy(), 22050))
    assert np.array_equal(a.vector, b.vector)
    for s in range(5):
        v = backend.embed(clip("high", s)).vector
        assert v.shape == (64,) and abs(np.linalg.norm(v) - 1) <= 1e-6
    with pytest.raises(ArgumentError):
        backend.embed(Waveform(np.zeros(0), 22050))


def test_same_filter_is_closer():
    backend = ToyBackend()
    same = [secs(clip("low", i), clip("low", i + 10), backend) for i in range(3)]
    diff = [secs(clip("low", i), clip("high", i + 10), backend) for i in range(3)]
    assert min(same) > max(diff)


def test_secs_examples():
    backend = ToyBackend()
    x, y = clip("low", 1), clip("high", 2)
    assert secs(x, x, backend) == 1.0
    assert secs(x, y, backend) == secs(y, x, backend)
    e = np.ones(4) / 2
    stub = FixedBackend({1.0: e, -1.0: -e})
    assert secs(Waveform(np.ones(4), 8000), Waveform(-np.ones(4), 8000), stub) == -1.0
    with pytest.raises(ArgumentError):
        secs(Waveform(np.zeros(0), 8000), x, backend)


@pytest.mark.parametrize("gain", [0.5, 0.7, 0.9, 1.0])
def test_gain_beats_other_speaker(gain):
    backend = ToyBackend()
    x = clip("low", 3)
    scaled = Waveform(x.samples * gain, 22050)
    assert secs(x, scaled, backend) > secs(x, clip("high", 3), backend)


def test_file_backend(tmp_path):
    w = clip("low", 4)
    save_wav(tmp_path / "a.wav", w)
    from polyvox.dsp import load_wav
    loaded = load_wav(tmp_path / "a.wav")
    backend = FileBackend()
    with pytest.raises(BackendError):
        backend.embed(loaded)
    write_embedding(tmp_path / "a.wav.emb", [3.0, 4.0])
    assert np.allclose(read_embedding(tmp_path / "a.wav.emb"), [3.0, 4.0])
    assert np.allclose(backend.embed(loaded).vector, [0.6, 0.8])
    with pytest.raises(BackendError):
        FileBackend(dim=3).embed(loaded)
    with pytest.raises(BackendError):
        backend.embed(w if w.path is None else Waveform(w.samples, 22050))
    (tmp_path / "bad.emb").write_bytes(b"nope")
    with pytest.raises(FormatError):
        read_embedding(tmp_path / "bad.emb")


def test_get_backend():
    assert isinstance(get_backend("toy"), ToyBackend)
    assert isinstance(get_backend("file"), FileBackend)
    with pytest.raises(ArgumentError):
        get_backend("ecapa")

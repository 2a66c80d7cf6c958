import math

import numpy as np
import parametrize_from_file
import pytest

from perturb.perturb_weak import draw_scale, jitter, splice_resample, splice_similarity, uniform_scale
from signal_sample import Signal
from ubmf_exceptions import InvalidPairing, InvalidParameter


def noisy_sine(phase: float, seed: int, length: int = 256, label: int = 1) -> Signal:
    t = np.arange(length) / length
    noise = 0.3 * np.random.default_rng(seed).standard_normal(length)
    return Signal(np.sin(2 * np.pi * 3 * t + phase) + noise, label=label)


def test_jitter():
    s = noisy_sine(0.0, 1)
    assert jitter(s, 0.0, np.random.default_rng(0)) == s
    first = jitter(s, 0.2, np.random.default_rng(3))
    second = jitter(s, 0.2, np.random.default_rng(3))
    assert first == second
    assert first != s


def test_jitter_noise_mean():
    zero = Signal(np.zeros(4096))
    out = jitter(zero, 0.1, np.random.default_rng(5))
    assert abs(out.values.mean()) < 3 * 0.1 / math.sqrt(4096)


@parametrize_from_file
def test_jitter_invalid(sigma: float):
    with pytest.raises(InvalidParameter):
        jitter(noisy_sine(0.0, 1), sigma, np.random.default_rng(0))


def test_uniform_scale():
    s = Signal(np.arange(1.0, 33.0))
    assert uniform_scale(s, 1.0, 0.0, np.random.default_rng(0)) == s
    alpha = draw_scale(1.0, 0.5, np.random.default_rng(8))
    scaled = uniform_scale(s, 1.0, 0.5, np.random.default_rng(8))
    assert np.allclose(scaled.values, alpha * s.values)
    with pytest.raises(InvalidParameter):
        uniform_scale(s, 1.0, -0.1, np.random.default_rng(0))
    with pytest.raises(InvalidParameter):
        uniform_scale(s, -1.0, 0.0, np.random.default_rng(0))


def test_splice_identical():
    a = noisy_sine(0.0, 2)
    assert splice_resample(a, a, 64, 1.0) == a
    assert splice_resample(a, a, 64, 1.01) is None


def test_splice_cut_matches_scan():
    a = noisy_sine(0.0, 3)
    b = noisy_sine(0.5, 4)
    window = 64
    scores = [
        np.corrcoef(a.values[0, o : o + window], b.values[0, o : o + window])[0, 1]
        for o in range(a.length() - window + 1)
    ]
    similarity, cut = splice_similarity(a, b, window)
    assert cut == int(np.argmax(scores)) + window // 2
    assert similarity == pytest.approx(max(scores), abs=1e-9)
    spliced = splice_resample(a, b, window, similarity)
    assert np.array_equal(spliced.values[0, :cut], a.values[0, :cut])
    assert np.array_equal(spliced.values[0, cut:], b.values[0, cut:])


def test_splice_invalid():
    a = noisy_sine(0.0, 2)
    with pytest.raises(InvalidParameter):
        splice_resample(a, a, 1000, 0.5)
    with pytest.raises(InvalidPairing):
        splice_resample(a, noisy_sine(0.0, 2, label=2), 64, 0.5)

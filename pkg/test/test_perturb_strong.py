import numpy as np
import parametrize_from_file
import pytest

from perturb.perturb_strong import (
    magnitude_warp,
    random_mask,
    random_rotation,
    rotate,
    slice_shuffle,
    spline_curve,
    time_warp,
    warp_path,
)
from signal_sample import Signal
from ubmf_exceptions import InvalidParameter, UnsupportedSignal


def sine(length: int = 128, channels: int = 1) -> Signal:
    t = np.arange(length) / length
    return Signal(np.stack([np.sin(2 * np.pi * (c + 2) * t) for c in range(channels)]))


def test_magnitude_warp():
    s = sine()
    assert magnitude_warp(s, 4, 0.0, np.random.default_rng(0)) == s
    ones = Signal(np.ones(128))
    warped = magnitude_warp(ones, 4, 0.2, np.random.default_rng(1))
    knots = np.random.default_rng(1).normal(1.0, 0.2, size=(1, 4))
    assert np.allclose(warped.values, np.maximum(spline_curve(128, knots), 0.05))


def test_time_warp():
    s = sine()
    assert time_warp(s, 4, 0.0, np.random.default_rng(0)) == s
    ramp = Signal(np.linspace(0.0, 1.0, 128))
    for seed in range(10):
        warped = time_warp(ramp, 5, 0.5, np.random.default_rng(seed))
        assert np.all(np.diff(warped.values[0]) >= 0)
        path = warp_path(128, 5, 0.5, np.random.default_rng(seed))
        assert path[0] == 0.0 and path[-1] == 127.0


@parametrize_from_file
def test_warp_knots_invalid(n_knots: int):
    with pytest.raises(InvalidParameter):
        magnitude_warp(sine(), n_knots, 0.2, np.random.default_rng(0))
    with pytest.raises(InvalidParameter):
        time_warp(sine(), n_knots, 0.2, np.random.default_rng(0))


def test_rotate():
    s = sine(channels=3)
    assert rotate(s, np.eye(3)) == s
    axis = Signal(np.stack([np.ones(64), np.zeros(64)]))
    quarter = np.array([[0.0, -1.0], [1.0, 0.0]])
    rotated = rotate(axis, quarter)
    assert np.allclose(rotated.values[0], 0.0)
    assert np.allclose(rotated.values[1], 1.0)
    random = rotate(s, random_rotation(3, np.random.default_rng(2)))
    assert np.allclose(np.linalg.norm(random.values, axis=0), np.linalg.norm(s.values, axis=0))


def test_rotate_invalid():
    with pytest.raises(InvalidParameter):
        rotate(sine(channels=2), np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(UnsupportedSignal):
        rotate(sine(), np.eye(1))
    with pytest.raises(UnsupportedSignal):
        random_rotation(1, np.random.default_rng(0))


def test_slice_shuffle():
    s = sine(64)
    assert slice_shuffle(s, 1, np.random.default_rng(0)) == s
    order = np.random.default_rng(4).permutation(64)
    shuffled = slice_shuffle(s, 64, np.random.default_rng(4))
    assert np.array_equal(shuffled.values[0], s.values[0][order])
    assert sorted(slice_shuffle(s, 8, np.random.default_rng(1)).values[0]) == sorted(s.values[0])
    with pytest.raises(InvalidParameter):
        slice_shuffle(s, 65, np.random.default_rng(0))


def test_random_mask():
    s = sine()
    assert random_mask(s, 0.0, "zero", np.random.default_rng(0)) == s
    assert np.all(random_mask(s, 1.0, "zero", np.random.default_rng(0)).values == 0.0)
    line = Signal(np.linspace(-3.0, 5.0, 128))
    for seed in range(5):
        filled = random_mask(line, 0.3, "linear_interp", np.random.default_rng(seed))
        assert np.allclose(filled.values, line.values, atol=1e-9)
    masked = random_mask(s, 0.25, "gaussian", np.random.default_rng(3))
    assert np.sum(masked.values != s.values) == 32


@parametrize_from_file
def test_random_mask_invalid(ratio: float, fill: str):
    with pytest.raises(InvalidParameter):
        random_mask(sine(), ratio, fill, np.random.default_rng(0))

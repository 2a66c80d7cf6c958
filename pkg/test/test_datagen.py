import dataclasses
import json
import struct

import numpy as np
import parametrize_from_file
import pytest

from datagen import (
    ClassSpec,
    ConditionSpec,
    DatasetManifest,
    default_manifest,
    from_arrays,
    generate,
    load,
    load_manifest,
    make_imbalanced_split,
    save,
)
from ubmf_exceptions import FormatError, InsufficientData, InvalidManifest, ZeroVariance


def two_class_manifest(noise: float = 0.05, speeds=(1.0,), counts: int = 3) -> DatasetManifest:
    return DatasetManifest(
        name="toy",
        classes=[ClassSpec(0, "slow", 30.0, 200.0, 1.0), ClassSpec(1, "fast", 90.0, 200.0, 1.0)],
        conditions=[ConditionSpec(k, speed, noise) for k, speed in enumerate(speeds)],
        counts=[[counts] * len(speeds)] * 2,
        length=2048,
        sample_rate=4096.0,
        seed=7,
    ).validate()


def dominant_lag(values: np.ndarray, low: int = 30, high: int = 160) -> int:
    x = values[0]
    energy = float(np.sum(x * x))
    correlation = [float(np.sum(x[:-lag] * x[lag:])) / energy for lag in range(low, high)]
    return low + int(np.argmax(correlation))


def test_generate_is_deterministic():
    manifest = default_manifest(counts_per_cell=2, length=256)
    first = generate(manifest)
    assert first == generate(manifest)
    assert first.size() == 6 * 3 * 2
    assert first.data.dtype == np.float32
    assert list(first.labels[:6]) == [0] * 6
    assert list(first.conditions[:6]) == [0, 0, 1, 1, 2, 2]


def test_generate_standardizes():
    file = generate(default_manifest(counts_per_cell=1, length=512))
    assert np.allclose(file.data.mean(axis=2), 0.0, atol=1e-5)
    assert np.allclose(file.data.std(axis=2), 1.0, atol=1e-4)


def test_generate_zero_variance():
    manifest = DatasetManifest(
        "silent", [ClassSpec(0, "none", 10.0, 100.0, 0.0)], [ConditionSpec(0, 1.0, 0.0)], [[1]]
    )
    with pytest.raises(ZeroVariance):
        generate(manifest)


def test_impulse_rate_sets_the_period():
    signals = generate(two_class_manifest()).signals()
    for s in signals:
        expected = 4096.0 / (30.0 if s.label == 0 else 90.0)
        assert abs(dominant_lag(s.values) - expected) <= 2


def test_speed_scales_the_period():
    file = generate(two_class_manifest(speeds=(1.0, 1.5)))
    slow = [s for s in file.signals() if s.label == 0]
    ratios = [
        dominant_lag(a.values) / dominant_lag(b.values)
        for a, b in zip([s for s in slow if s.condition == 0], [s for s in slow if s.condition == 1])
    ]
    assert all(abs(ratio - 1.5) < 0.03 for ratio in ratios)


def test_save_load(tmp_path):
    file = generate(default_manifest(counts_per_cell=1, length=128))
    path = tmp_path / "data" / "toy.ubmf"
    save(file, path)
    raw = path.read_bytes()
    assert raw[:4] == b"UBMF"
    assert struct.unpack_from("<I", raw, 4)[0] == 1
    assert load(path) == file
    assert np.array_equal(np.frombuffer(raw[-4:], dtype="<f4"), file.data[-1, -1, -1:])


def test_load_corrupt(tmp_path):
    file = generate(default_manifest(counts_per_cell=1, length=64))
    path = tmp_path / "toy.ubmf"
    save(file, path)
    raw = path.read_bytes()
    (header_length,) = struct.unpack_from("<I", raw, 8)
    body = 12 + header_length
    cases = {
        "short": raw[:6],
        "magic": b"XXXX" + raw[4:],
        "version": raw[:4] + struct.pack("<I", 9) + raw[8:],
        "manifest": raw[: body - 5],
        "json": raw[:12] + b"{" * header_length + raw[body:],
        "block": raw[:-4],
    }
    offsets = {}
    for name, data in cases.items():
        broken = tmp_path / f"{name}.ubmf"
        broken.write_bytes(data)
        with pytest.raises(FormatError) as error:
            load(broken)
        offsets[name] = error.value.offset
    assert offsets["magic"] == 0
    assert offsets["version"] == 4
    assert offsets["json"] == 12
    assert offsets["block"] == body


def test_from_arrays():
    values = np.random.default_rng(0).normal(size=(5, 40))
    file = from_arrays(values, [1, 1, 0, 2, 0], sample_rate=100.0)
    assert file.data.shape == (5, 1, 40)
    assert file.manifest.class_ids() == [0, 1, 2]
    assert file.manifest.counts == [[2], [2], [1]]
    assert file.signals()[3].label == 2
    with pytest.raises(InvalidManifest):
        from_arrays(values, [0, 1])


@parametrize_from_file
def test_manifest_invalid(changes: dict):
    manifest = dataclasses.asdict(default_manifest(counts_per_cell=1))
    manifest.update(changes)
    with pytest.raises(InvalidManifest):
        DatasetManifest.from_dict(manifest)


def test_manifest_file(tmp_path):
    manifest = default_manifest(counts_per_cell=3, seed=5)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest.to_dict()), encoding="utf-8")
    assert load_manifest(path) == manifest
    with pytest.raises(InvalidManifest):
        load_manifest(tmp_path / "missing.json")


def test_imbalanced_split(make_signals):
    signals = make_signals(classes=(0, 1, 2, 3), per_class=30)
    split = make_imbalanced_split(
        signals, {0: 5, 1: 5, 2: 5}, {0: 20, 1: 4, 2: 4}, np.random.default_rng(0)
    )
    labeled = [s.label for s in split.labeled]
    assert [labeled.count(c) for c in (0, 1, 2)] == [5, 5, 5]
    assert [split.unlabeled_truth.count(c) for c in (0, 1, 2)] == [20, 4, 4]
    assert all(s.label is None for s in split.unlabeled)
    ids = [s.source_id for s in split.labeled + split.unlabeled + split.test]
    assert len(ids) == len(set(ids)) == 90
    assert not any(s.label == 3 for s in split.test)


def test_imbalanced_split_edges(make_signals):
    signals = make_signals(per_class=10)
    split = make_imbalanced_split(signals, {0: 2, 1: 2}, {}, np.random.default_rng(0))
    assert split.unlabeled == []
    assert len(split.test) == 16
    with pytest.raises(InsufficientData):
        make_imbalanced_split(signals, {0: 6}, {0: 5}, np.random.default_rng(0))

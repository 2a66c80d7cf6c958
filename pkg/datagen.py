import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from random_generator import RandomGenerator
from signal_sample import MIN_LENGTH, Signal
from ubmf_exceptions import FormatError, InsufficientData, InvalidManifest, ZeroVariance

logger = logging.getLogger(__name__)

MAGIC = b"UBMF"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sII")
RESONANCE_DECAY = 200.0
KERNEL_SECONDS = 0.03


@dataclass(frozen=True)
class ClassSpec:
    id: int
    label: str
    impulse_rate: float = 0.0
    resonance: float = 0.0
    amplitude: float = 0.0


@dataclass(frozen=True)
class ConditionSpec:
    id: int
    speed: float = 1.0
    noise: float = 0.0


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    classes: list[ClassSpec]
    conditions: list[ConditionSpec]
    # counts[class position][condition position]
    counts: list[list[int]]
    length: int = 1024
    sample_rate: float = 4096.0
    seed: int = 0
    channels: int = 1

    def validate(self) -> "DatasetManifest":
        ids = [c.id for c in self.classes]
        if len(ids) == 0 or len(set(ids)) != len(ids):
            raise InvalidManifest("Class ids must be unique and non-empty", context=ids)
        condition_ids = [c.id for c in self.conditions]
        if len(condition_ids) == 0 or len(set(condition_ids)) != len(condition_ids):
            raise InvalidManifest("Condition ids must be unique and non-empty", context=condition_ids)
        if self.length < MIN_LENGTH or self.sample_rate <= 0 or self.channels < 1:
            raise InvalidManifest(
                "Length, sample rate and channels must be positive",
                context=(self.length, self.sample_rate, self.channels),
            )
        counts = np.asarray(self.counts)
        if counts.shape != (len(self.classes), len(self.conditions)):
            raise InvalidManifest("Counts must be [classes x conditions]", context=counts.shape)
        if np.any(counts < 0):
            raise InvalidManifest("Counts must be >= 0")
        for c in self.conditions:
            if c.speed <= 0 or c.noise < 0:
                raise InvalidManifest("Invalid condition", context=c)
        return self

    def total(self) -> int:
        return int(np.sum(self.counts))

    def class_ids(self) -> list[int]:
        return [c.id for c in self.classes]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "DatasetManifest":
        try:
            return DatasetManifest(
                name=str(data["name"]),
                classes=[ClassSpec(**c) for c in data["classes"]],
                conditions=[ConditionSpec(**c) for c in data["conditions"]],
                counts=[[int(n) for n in row] for row in data["counts"]],
                length=int(data.get("length", 1024)),
                sample_rate=float(data.get("sample_rate", 4096.0)),
                seed=int(data.get("seed", 0)),
                channels=int(data.get("channels", 1)),
            ).validate()
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidManifest("Malformed manifest", parent=e)


def default_manifest(counts_per_cell: int = 40, length: int = 1024, seed: int = 0) -> DatasetManifest:
    """
    Six bearing-like fault classes under three operating conditions
    """
    classes = [
        ClassSpec(0, "normal", 20.0, 300.0, 0.3),
        ClassSpec(1, "inner_race", 90.0, 1400.0, 1.0),
        ClassSpec(2, "outer_race", 55.0, 900.0, 1.0),
        ClassSpec(3, "rolling_element", 35.0, 1800.0, 1.0),
        ClassSpec(4, "cage", 12.0, 600.0, 1.2),
        ClassSpec(5, "compound", 140.0, 1100.0, 0.8),
    ]
    conditions = [ConditionSpec(0, 1.0, 0.1), ConditionSpec(1, 1.25, 0.2), ConditionSpec(2, 1.5, 0.3)]
    counts = [[counts_per_cell] * len(conditions) for _ in classes]
    return DatasetManifest("synthetic-bearing", classes, conditions, counts, length, 4096.0, seed).validate()


def load_manifest(path: Path | str) -> DatasetManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidManifest("Unreadable manifest", context=str(path), parent=e)
    return DatasetManifest.from_dict(data)


@dataclass
class DatasetFile:
    manifest: DatasetManifest
    # [N x channels x T] float32
    data: np.ndarray
    labels: np.ndarray
    conditions: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != len(self.labels):
            raise InvalidManifest("Tensor does not match the labels", context=self.data.shape)
        if self.data.shape[1:] != (self.manifest.channels, self.manifest.length):
            raise InvalidManifest("Tensor does not match the manifest", context=self.data.shape)

    def size(self) -> int:
        return int(self.data.shape[0])

    def signals(self) -> list[Signal]:
        return [
            Signal(
                self.data[i].astype(np.float64),
                self.manifest.sample_rate,
                int(self.labels[i]),
                int(self.conditions[i]),
                f"{self.manifest.name}-{i}",
            )
            for i in range(self.size())
        ]

    def __eq__(self, other):
        if not isinstance(other, DatasetFile):
            return NotImplemented
        return (
            self.manifest == other.manifest
            and np.array_equal(self.data, other.data)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.conditions, other.conditions)
        )


def resonance_kernel(resonance: float, sample_rate: float) -> np.ndarray:
    t = np.arange(int(KERNEL_SECONDS * sample_rate)) / sample_rate
    return np.exp(-RESONANCE_DECAY * t) * np.sin(2.0 * np.pi * resonance * t)


def impulse_train(length: int, rate: float, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    train = np.zeros(length)
    if rate <= 0:
        return train
    period = sample_rate / rate
    start = rng.uniform(0.0, period)
    positions = np.round(np.arange(start, length, period)).astype(int)
    train[positions[positions < length]] = 1.0
    return train


def standardize(values: np.ndarray, context=None) -> np.ndarray:
    std = values.std(axis=-1, keepdims=True)
    if np.any(std == 0):
        raise ZeroVariance(context=context)
    return (values - values.mean(axis=-1, keepdims=True)) / std


def synthesize(
    spec: ClassSpec, condition: ConditionSpec, manifest: DatasetManifest, rng: np.random.Generator
) -> np.ndarray:
    """
    Impulse train at impulse_rate x speed through a decaying resonance, plus white noise
    """
    rate = spec.impulse_rate * condition.speed
    kernel = resonance_kernel(spec.resonance, manifest.sample_rate)
    channels = []
    base = spec.amplitude * impulse_train(manifest.length, rate, manifest.sample_rate, rng)
    for c in range(manifest.channels):
        gain = 1.0 if c == 0 else rng.uniform(0.5, 1.0)
        clean = gain * np.convolve(base, kernel)[: manifest.length]
        channels.append(clean + rng.normal(0.0, condition.noise, size=manifest.length))
    return standardize(np.stack(channels), context=(spec.id, condition.id))


def generate(manifest: DatasetManifest, rng: RandomGenerator | None = None) -> DatasetFile:
    """
    Samples ordered by class, then condition; sample ``i`` of a cell draws from
    the stream ``generate/class/condition/i``
    """
    manifest.validate()
    rng = RandomGenerator(manifest.seed) if rng is None else rng
    data, labels, conditions = [], [], []
    for ci, spec in enumerate(manifest.classes):
        for ki, condition in enumerate(manifest.conditions):
            for i in range(manifest.counts[ci][ki]):
                cell = rng.child("generate", spec.id, condition.id, i).numpy()
                data.append(synthesize(spec, condition, manifest, cell))
                labels.append(spec.id)
                conditions.append(condition.id)
    shape = (0, manifest.channels, manifest.length)
    tensor = np.stack(data).astype(np.float32) if data else np.zeros(shape, dtype=np.float32)
    logger.info("Generated %d samples for %s", len(labels), manifest.name)
    return DatasetFile(manifest, tensor, np.array(labels, dtype=int), np.array(conditions, dtype=int))


def from_arrays(
    values: np.ndarray,
    labels,
    conditions=None,
    sample_rate: float = 1.0,
    name: str = "ingested",
) -> DatasetFile:
    """
    Wrap user tensors ([N x T] or [N x channels x T]) into the dataset format
    """
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        values = values[:, None, :]
    labels = np.asarray(labels, dtype=int)
    conditions = np.zeros(len(labels), dtype=int) if conditions is None else np.asarray(conditions, dtype=int)
    if values.ndim != 3 or len(labels) != values.shape[0] or len(conditions) != values.shape[0]:
        raise InvalidManifest("Values, labels and conditions disagree", context=values.shape)
    class_ids = sorted(set(labels.tolist()))
    condition_ids = sorted(set(conditions.tolist())) or [0]
    counts = [
        [int(np.sum((labels == c) & (conditions == k))) for k in condition_ids] for c in class_ids
    ]
    manifest = DatasetManifest(
        name=name,
        classes=[ClassSpec(c, str(c)) for c in class_ids],
        conditions=[ConditionSpec(k) for k in condition_ids],
        counts=counts,
        length=int(values.shape[2]),
        sample_rate=float(sample_rate),
        channels=int(values.shape[1]),
    ).validate()
    return DatasetFile(manifest, values, labels, conditions)


def save(file: DatasetFile, path: Path | str):
    header = json.dumps(
        {
            "manifest": file.manifest.to_dict(),
            "labels": file.labels.tolist(),
            "conditions": file.conditions.tolist(),
            "shape": list(file.data.shape),
        },
        sort_keys=True,
    ).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, len(header)))
        f.write(header)
        f.write(np.ascontiguousarray(file.data, dtype="<f4").tobytes())


def load(path: Path | str) -> DatasetFile:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError("Truncated header", offset=len(raw))
    magic, version, header_length = HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError("Bad magic bytes", offset=0, context=magic)
    if version != FORMAT_VERSION:
        raise FormatError("Unsupported format version", offset=4, context=version)
    body = HEADER.size + header_length
    if len(raw) < body:
        raise FormatError("Truncated manifest", offset=len(raw))
    try:
        header = json.loads(raw[HEADER.size : body].decode("utf-8"))
        manifest = DatasetManifest.from_dict(header["manifest"])
        shape = tuple(int(n) for n in header["shape"])
        labels = np.array(header["labels"], dtype=int)
        conditions = np.array(header["conditions"], dtype=int)
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, InvalidManifest) as e:
        raise FormatError("Corrupt manifest", offset=HEADER.size, parent=e)
    expected = int(np.prod(shape)) * 4
    if len(raw) - body != expected:
        raise FormatError(
            "Sample block length mismatch", offset=body, context=(len(raw) - body, expected)
        )
    data = np.frombuffer(raw, dtype="<f4", offset=body).reshape(shape).astype(np.float32)
    try:
        return DatasetFile(manifest, data, labels, conditions)
    except InvalidManifest as e:
        raise FormatError("Header does not match the sample block", offset=body, parent=e)


@dataclass
class Split:
    labeled: list[Signal] = field(default_factory=list)
    # labels removed; the true labels stay in ``unlabeled_truth``
    unlabeled: list[Signal] = field(default_factory=list)
    unlabeled_truth: list[int] = field(default_factory=list)
    test: list[Signal] = field(default_factory=list)


def make_imbalanced_split(
    signals: list[Signal],
    labeled_counts: dict[int, int],
    unlabeled_counts: dict[int, int],
    rng: np.random.Generator,
) -> Split:
    """
    Per-class disjoint labeled / unlabeled / test sets; classes absent from
    ``labeled_counts`` are left out, the remainder of each class is the test set
    """
    by_class: dict[int, list[Signal]] = {}
    for s in signals:
        by_class.setdefault(s.label, []).append(s)
    split = Split()
    for c in sorted(labeled_counts):
        members = by_class.get(c, [])
        n_labeled = int(labeled_counts[c])
        n_unlabeled = int(unlabeled_counts.get(c, 0))
        if n_labeled < 0 or n_unlabeled < 0:
            raise InsufficientData("Counts must be >= 0", context=(c, n_labeled, n_unlabeled))
        if n_labeled + n_unlabeled > len(members):
            raise InsufficientData(
                f"Class {c} has {len(members)} samples", context=(n_labeled, n_unlabeled)
            )
        order = rng.permutation(len(members))
        picked = [members[int(i)] for i in order]
        split.labeled.extend(picked[:n_labeled])
        for s in picked[n_labeled : n_labeled + n_unlabeled]:
            split.unlabeled.append(dataclasses.replace(s, label=None))
            split.unlabeled_truth.append(c)
        split.test.extend(picked[n_labeled + n_unlabeled :])
    return split

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas

from ubmf_exceptions import InvalidInput, InvalidParameter

DEFAULT_BINS = 10
DEFAULT_V = 2.0
RELIABILITY_COLUMNS = ["bin_low", "bin_high", "count", "conf", "acc"]


@dataclass(frozen=True)
class PredictionRecord:
    confidence: float
    predicted: int
    true: int

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInput("Confidence must be in [0, 1]", context=self.confidence)

    def correct(self) -> bool:
        return self.predicted == self.true


def records_from_probabilities(
    probabilities: np.ndarray, targets: np.ndarray, classes: list[int] | None = None
) -> list[PredictionRecord]:
    """
    One record per row: max probability, its class and the true class
    """
    probabilities = np.atleast_2d(probabilities)
    classes = list(range(probabilities.shape[1])) if classes is None else list(classes)
    predicted = np.argmax(probabilities, axis=1)
    return [
        PredictionRecord(
            float(min(max(probabilities[i, predicted[i]], 0.0), 1.0)),
            int(classes[predicted[i]]),
            int(targets[i]),
        )
        for i in range(probabilities.shape[0])
    ]


@dataclass(frozen=True)
class ReliabilityBins:
    counts: np.ndarray
    conf: np.ndarray
    acc: np.ndarray

    def size(self) -> int:
        return int(self.counts.shape[0])

    def n(self) -> int:
        return int(self.counts.sum())

    def occupied(self) -> np.ndarray:
        return self.counts > 0

    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.size() + 1)


def bin_index(confidence: np.ndarray, m: int) -> np.ndarray:
    """
    Right-closed bins ((i-1)/M, i/M]; zero falls into the first bin
    """
    scaled = np.round(np.asarray(confidence, dtype=float) * m, 12)
    return np.clip(np.ceil(scaled).astype(int) - 1, 0, m - 1)


def bin_reliability(records: list[PredictionRecord], m: int = DEFAULT_BINS) -> ReliabilityBins:
    if m < 1:
        raise InvalidParameter("At least one bin is needed", context=m)
    confidence = np.array([r.confidence for r in records], dtype=float)
    correct = np.array([r.correct() for r in records], dtype=float)
    index = bin_index(confidence, m)
    counts = np.bincount(index, minlength=m).astype(int)
    conf_sum = np.bincount(index, weights=confidence, minlength=m)
    acc_sum = np.bincount(index, weights=correct, minlength=m)
    occupied = counts > 0
    conf = np.zeros(m)
    acc = np.zeros(m)
    conf[occupied] = conf_sum[occupied] / counts[occupied]
    acc[occupied] = acc_sum[occupied] / counts[occupied]
    return ReliabilityBins(counts, conf, acc)


def ece(bins: ReliabilityBins, n: int | None = None) -> float:
    n = bins.n() if n is None else n
    if n == 0:
        raise InvalidInput("ECE of an empty record set")
    return float(np.sum(bins.counts / n * np.abs(bins.acc - bins.conf)))


def mce(bins: ReliabilityBins) -> float:
    """
    Largest |acc - conf| over occupied bins
    """
    occupied = bins.occupied()
    if not np.any(occupied):
        raise InvalidInput("MCE of an empty record set")
    return float(np.max(np.abs(bins.acc[occupied] - bins.conf[occupied])))


def class_confidence(records: list[PredictionRecord]) -> dict[int, float]:
    """
    Mean confidence per true class
    """
    grouped: dict[int, list[float]] = {}
    for r in records:
        grouped.setdefault(r.true, []).append(r.confidence)
    return {c: float(np.mean(values)) for c, values in sorted(grouped.items())}


def abce(
    records: list[PredictionRecord],
    class_stats: dict[int, float] | None = None,
    m: int = DEFAULT_BINS,
    v: float = DEFAULT_V,
    batch_size: int | None = None,
    absolute_gap: bool = False,
) -> float:
    """
    (|b| / K^2) sum_c (1 - conf_c)^v + (1/M) sum_m (acc_m - conf_m)

    The gap term runs over occupied bins and keeps its sign unless ``absolute_gap``.
    """
    class_stats = class_confidence(records) if class_stats is None else class_stats
    k = len(class_stats)
    if k == 0:
        raise InvalidInput("aBCE needs at least one class")
    batch_size = len(records) if batch_size is None else batch_size
    class_term = batch_size / k**2 * sum((1.0 - c) ** v for c in class_stats.values())
    bins = bin_reliability(records, m)
    gaps = (bins.acc - bins.conf)[bins.occupied()]
    if absolute_gap:
        gaps = np.abs(gaps)
    return float(class_term + gaps.sum() / m)


def joint_loss(base: float, abce_val: float, beta: float) -> float:
    return base + beta * abce_val


def reliability_export(bins: ReliabilityBins, path: Path | str | None = None) -> pandas.DataFrame:
    edges = bins.edges()
    table = pandas.DataFrame(
        {
            "bin_low": edges[:-1],
            "bin_high": edges[1:],
            "count": bins.counts,
            "conf": bins.conf,
            "acc": bins.acc,
        },
        columns=RELIABILITY_COLUMNS,
    )
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, float_format="%.17g")
    return table


def reliability_import(path: Path | str) -> ReliabilityBins:
    table = pandas.read_csv(path)
    missing = [c for c in RELIABILITY_COLUMNS if c not in table.columns]
    if missing:
        raise InvalidInput("Reliability table misses columns", context=missing)
    return ReliabilityBins(
        table["count"].to_numpy(dtype=int),
        table["conf"].to_numpy(dtype=float),
        table["acc"].to_numpy(dtype=float),
    )


def calibration_metrics(
    records: list[PredictionRecord],
    m: int = DEFAULT_BINS,
    v: float = DEFAULT_V,
    absolute_gap: bool = False,
) -> dict:
    if len(records) == 0:
        return {"ece": None, "mce": None, "abce": None, "bins": m}
    bins = bin_reliability(records, m)
    value = abce(records, m=m, v=v, absolute_gap=absolute_gap)
    return {
        "ece": ece(bins),
        "mce": mce(bins),
        "abce": value if math.isfinite(value) else None,
        "bins": m,
    }

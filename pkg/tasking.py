import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.stats import rankdata

from encoder.feature_encoder import encode_batch
from encoder.network import Network
from random_generator import RandomGenerator
from signal_sample import Signal, stack_signals
from ubmf_exceptions import InsufficientData, InvalidParameter, UndefinedMetric

logger = logging.getLogger(__name__)

UBMF_THREADS = int(os.environ.get("UBMF_THREADS", 1))

MAX_SHOT = 5
QUERY_SIZE = 50
CI_Z = 1.96


@dataclass(frozen=True)
class Episode:
    """
    Any-way task: imbalanced support, balanced query, both labeled with original class ids
    """

    support: list[Signal]
    query: list[Signal]
    classes: list[int]
    support_index: tuple[int, ...] = ()
    query_index: tuple[int, ...] = ()

    def way(self) -> int:
        return len(self.classes)

    def shots(self) -> dict[int, int]:
        return {c: sum(1 for s in self.support if s.label == c) for c in self.classes}

    def query_labels(self) -> np.ndarray:
        return np.array([s.label for s in self.query])


def _by_class(signals: list[Signal]) -> dict[int, list[int]]:
    result: dict[int, list[int]] = {}
    for i, s in enumerate(signals):
        if s.label is None:
            continue
        result.setdefault(int(s.label), []).append(i)
    return result


def sample_episode(
    signals: list[Signal],
    max_way: int | None,
    rng: np.random.Generator,
    query_size: int = QUERY_SIZE,
    max_shot: int = MAX_SHOT,
    query_per_class: int | None = None,
) -> Episode:
    """
    N ~ U[2, max_way] classes, K_i ~ U[1, max_shot] support samples per class,
    a query balanced within one sample per class and disjoint from the support

    :param query_per_class: fixed query share per class instead of ``query_size``
    """
    by_class = _by_class(signals)
    max_way = len(by_class) if max_way is None else max_way
    if max_way < 2:
        raise InvalidParameter("Episodes need at least two classes", context=max_way)
    way = int(rng.integers(2, max_way + 1))
    if query_per_class is not None:
        query_counts = [query_per_class] * way
    else:
        query_counts = [query_size // way + (1 if i < query_size % way else 0) for i in range(way)]
    needed = max_shot + max(query_counts)
    eligible = sorted(c for c, members in by_class.items() if len(members) >= needed)
    if len(eligible) < way:
        raise InsufficientData(
            f"Need {way} classes with at least {needed} samples", context=len(eligible)
        )
    classes = sorted(int(c) for c in rng.choice(eligible, size=way, replace=False))
    query_counts = [query_counts[i] for i in rng.permutation(way)]

    support_index, query_index = [], []
    for c, query_count in zip(classes, query_counts):
        shots = int(rng.integers(1, max_shot + 1))
        members = by_class[c]
        picked = rng.choice(len(members), size=shots + query_count, replace=False)
        support_index.extend(members[int(i)] for i in picked[:shots])
        query_index.extend(members[int(i)] for i in picked[shots:])
    return Episode(
        support=[signals[i] for i in support_index],
        query=[signals[i] for i in query_index],
        classes=classes,
        support_index=tuple(support_index),
        query_index=tuple(query_index),
    )


def standardized_accuracy(acc: float, n: int) -> float:
    """
    Chance-corrected accuracy: 1/N maps to 0, 1 maps to 1
    """
    if n < 2:
        raise InvalidParameter("Standardized accuracy needs N >= 2", context=n)
    chance = 1.0 / n
    return (acc - chance) / (1.0 - chance)


class EpisodeModel(Protocol):
    def predict(self, episode: Episode) -> np.ndarray:
        """
        Predicted class id per query sample, conditioned on the episode support
        """
        ...


@dataclass(frozen=True)
class TaskRecord:
    task: int
    way: int
    shots: list[int]
    accuracy: float
    standardized_accuracy: float

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "way": self.way,
            "shots": list(self.shots),
            "accuracy": self.accuracy,
            "standardized_accuracy": self.standardized_accuracy,
        }


@dataclass(frozen=True)
class EvalSummary:
    mean_std_acc: float | None
    ci95: float | None
    n_tasks: int
    per_task: list[TaskRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean_std_acc": self.mean_std_acc,
            "ci95": self.ci95,
            "n_tasks": self.n_tasks,
            "per_task": [r.to_dict() for r in self.per_task],
        }


def summarize(records: list[TaskRecord]) -> EvalSummary:
    if len(records) == 0:
        return EvalSummary(None, None, 0, [])
    values = np.array([r.standardized_accuracy for r in records])
    spread = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return EvalSummary(
        mean_std_acc=float(values.mean()),
        ci95=CI_Z * spread / math.sqrt(len(values)),
        n_tasks=len(records),
        per_task=list(records),
    )


def evaluate(
    model: EpisodeModel,
    signals: list[Signal],
    max_way: int | None,
    rng: RandomGenerator,
    n_tasks: int = 100,
    query_size: int = QUERY_SIZE,
    threads: int | None = None,
) -> EvalSummary:
    """
    Mean standardized accuracy over ``n_tasks`` episodes with a 95% normal-approximation interval

    Episode ``i`` draws from the stream ``evaluate/i``, so the summary does not
    depend on the number of worker threads.
    """

    def run(task: int) -> TaskRecord:
        episode = sample_episode(
            signals, max_way, rng.child("evaluate", task).numpy(), query_size=query_size
        )
        predictions = np.asarray(model.predict(episode))
        accuracy = float(np.mean(predictions == episode.query_labels()))
        return TaskRecord(
            task=task,
            way=episode.way(),
            shots=[episode.shots()[c] for c in episode.classes],
            accuracy=accuracy,
            standardized_accuracy=standardized_accuracy(accuracy, episode.way()),
        )

    threads = UBMF_THREADS if threads is None else threads
    if threads > 1 and n_tasks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(run, range(n_tasks)))
    else:
        records = [run(task) for task in range(n_tasks)]
    summary = summarize(records)
    logger.info(
        "Evaluated %d tasks: mean standardized accuracy %s +- %s",
        summary.n_tasks,
        summary.mean_std_acc,
        summary.ci95,
    )
    return summary


def protonet_baseline(episode: Episode, encoder: Network) -> np.ndarray:
    """
    Nearest class mean in plain Euclidean feature space
    """
    support = encode_batch(encoder, stack_signals(episode.support))
    query = encode_batch(encoder, stack_signals(episode.query))
    labels = np.array([s.label for s in episode.support])
    centers = np.stack([support[labels == c].mean(axis=0) for c in episode.classes])
    distances = np.linalg.norm(query[:, None, :] - centers[None, :, :], axis=2)
    return np.array(episode.classes)[np.argmin(distances, axis=1)]


class ProtoNetModel:
    def __init__(self, encoder: Network):
        self.encoder = encoder

    def predict(self, episode: Episode) -> np.ndarray:
        return protonet_baseline(episode, self.encoder)


class OracleModel:
    def predict(self, episode: Episode) -> np.ndarray:
        return episode.query_labels()


class RandomModel:
    def __init__(self, seed: int):
        self.seed = seed

    def predict(self, episode: Episode) -> np.ndarray:
        rng = np.random.default_rng([self.seed, *episode.query_index])
        return rng.choice(episode.classes, size=len(episode.query))


def auroc(scores: np.ndarray | list, positives: np.ndarray | list) -> float:
    """
    Rank-based AUROC with midranks for ties
    """
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = int(positives.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUROC needs both positive and negative cases", context=(n_pos, n_neg))
    ranks = rankdata(scores, method="average")
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))

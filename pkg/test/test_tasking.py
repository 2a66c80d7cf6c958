import numpy as np
import parametrize_from_file
import pytest
from scipy.stats import chisquare
from sklearn.metrics import roc_auc_score

from random_generator import RandomGenerator
from tasking import (
    Episode,
    OracleModel,
    ProtoNetModel,
    RandomModel,
    auroc,
    evaluate,
    protonet_baseline,
    sample_episode,
    standardized_accuracy,
)
from ubmf_exceptions import InsufficientData, InvalidParameter, UndefinedMetric


@pytest.fixture
def dataset(make_signals):
    return make_signals(classes=(0, 1, 2, 3), per_class=40)


def test_two_way(dataset):
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_episode(dataset, 2, rng).way() == 2


def test_episode_layout(dataset):
    rng = np.random.default_rng(1)
    for _ in range(50):
        episode = sample_episode(dataset, None, rng)
        assert 2 <= episode.way() <= 4
        assert not set(episode.support_index) & set(episode.query_index)
        assert len(episode.query) == 50
        assert all(1 <= k <= 5 for k in episode.shots().values())
        counts = [int(np.sum(episode.query_labels() == c)) for c in episode.classes]
        assert max(counts) - min(counts) <= 1
        assert set(episode.query_labels()) <= set(episode.classes)


def test_shots_are_uniform(dataset):
    rng = np.random.default_rng(2)
    shots = []
    while len(shots) < 10_000:
        shots.extend(sample_episode(dataset, None, rng, query_per_class=1).shots().values())
    observed = np.bincount(np.array(shots[:10_000]), minlength=6)[1:]
    assert chisquare(observed).pvalue > 0.01


def test_insufficient_data(make_signals):
    with pytest.raises(InsufficientData):
        sample_episode(make_signals(per_class=8), None, np.random.default_rng(0))
    with pytest.raises(InvalidParameter):
        sample_episode(make_signals(), 1, np.random.default_rng(0))


@parametrize_from_file
def test_standardized_accuracy(acc: float, n: int, expected: float):
    assert standardized_accuracy(acc, n) == pytest.approx(expected)


def test_standardized_accuracy_invalid():
    with pytest.raises(InvalidParameter):
        standardized_accuracy(0.5, 1)


def test_evaluate_oracle(dataset):
    summary = evaluate(OracleModel(), dataset, None, RandomGenerator(0), n_tasks=20)
    assert summary.mean_std_acc == 1.0
    assert summary.ci95 == 0.0
    assert summary.n_tasks == len(summary.per_task) == 20


def test_evaluate_random(dataset):
    summary = evaluate(RandomModel(3), dataset, None, RandomGenerator(0), n_tasks=100)
    assert -0.1 <= summary.mean_std_acc <= 0.1
    assert summary.ci95 > 0


def test_evaluate_is_deterministic(dataset):
    first = evaluate(RandomModel(1), dataset, 3, RandomGenerator(4), n_tasks=12)
    assert first.to_dict() == evaluate(RandomModel(1), dataset, 3, RandomGenerator(4), n_tasks=12).to_dict()
    threaded = evaluate(RandomModel(1), dataset, 3, RandomGenerator(4), n_tasks=12, threads=4)
    assert threaded.to_dict() == first.to_dict()


def test_protonet_baseline(encoder, dataset):
    support = [dataset[0], dataset[40], dataset[80]]
    episode = Episode(support=support, query=list(support), classes=[0, 1, 2])
    assert list(protonet_baseline(episode, encoder)) == [0, 1, 2]

    episode = sample_episode(dataset, None, np.random.default_rng(5))
    reordered = Episode(support=episode.support[::-1], query=episode.query, classes=episode.classes)
    assert np.array_equal(protonet_baseline(episode, encoder), protonet_baseline(reordered, encoder))
    assert np.array_equal(ProtoNetModel(encoder).predict(episode), protonet_baseline(episode, encoder))


def test_auroc():
    assert auroc([0.1, 0.2, 0.8, 0.9], [False, False, True, True]) == 1.0
    assert auroc([0.5] * 6, [True, False] * 3) == 0.5
    with pytest.raises(UndefinedMetric):
        auroc([0.1, 0.2], [True, True])


def test_auroc_matches_pairwise_count():
    rng = np.random.default_rng(6)
    scores = np.round(rng.normal(size=200), 1)
    positives = rng.random(200) < 0.3
    pos, neg = scores[positives], scores[~positives]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    assert auroc(scores, positives) == pytest.approx(wins / (pos.size * neg.size), abs=1e-9)
    assert auroc(scores, positives) == pytest.approx(roc_auc_score(positives, scores), abs=1e-9)

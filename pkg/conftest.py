import numpy as np
import pytest

from bayes_qda import default_prior
from encoder.feature_encoder import build_encoder
from signal_sample import Signal


def sine_signals(
    classes=(0, 1, 2), per_class: int = 12, length: int = 64, seed: int = 0, noise: float = 0.1
) -> list[Signal]:
    """
    One sinusoid frequency per class with random phase and additive noise
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length) / length
    signals = []
    for c in classes:
        for i in range(per_class):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            values = np.sin(2.0 * np.pi * (2 + 3 * c) * t + phase)
            values = values + noise * rng.standard_normal(length)
            signals.append(Signal(values, label=c, source_id=f"c{c}-{i}"))
    return signals


@pytest.fixture
def make_signals():
    return sine_signals


@pytest.fixture
def signals() -> list[Signal]:
    return sine_signals()


@pytest.fixture
def encoder():
    return build_encoder(1, 64, np.random.default_rng(0), d=4)


@pytest.fixture
def prior_2d():
    return default_prior(2)


@pytest.fixture
def tiny_config(tmp_path) -> dict:
    """
    Smallest configuration that runs every stage on a generated dataset
    """
    return {
        "seed": 11,
        "output_dir": str(tmp_path / "run"),
        "data": {
            "counts_per_cell": 8,
            "length": 64,
            "labeled_counts": [8, 8, 8, 8],
            "unlabeled_counts": [6, 2, 2, 2],
        },
        "encoder": {"d": 4},
        "ssl": {"t_meta": 2, "t_sl": 2, "batch_size": 4, "prototype_shots": 2, "metric_interval": 2},
        "prior": {"iterations": 5},
        "filter": {"steps": 3, "batch_size": 8, "outer_steps": 1, "calibrate_iterations": 1},
        "evaluation": {"n_tasks": 3, "query_size": 8},
    }


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains models end to end; deselect with -m 'not slow'")

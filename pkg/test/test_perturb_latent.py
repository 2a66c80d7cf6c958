import dataclasses

import numpy as np
import pytest

from encoder.autoencoder import Autoencoder, train_autoencoder
from perturb.perturb_latent import latent_interpolate, latent_jitter
from signal_sample import stack_signals
from ubmf_exceptions import InvalidPairing, ModelNotReady


@pytest.fixture
def autoencoder() -> Autoencoder:
    built = Autoencoder.build(1, 64, np.random.default_rng(0), d=4, linear=True)
    return dataclasses.replace(built, reconstruction_error=0.1)


def test_latent_jitter_without_noise(autoencoder, signals):
    s = signals[0]
    out = latent_jitter(autoencoder, s, 0.0, np.random.default_rng(0))
    assert np.allclose(out.values, autoencoder.decode(autoencoder.encode(s)))
    noisy = latent_jitter(autoencoder, s, 0.5, np.random.default_rng(0))
    assert not np.allclose(noisy.values, out.values)


def test_latent_interpolate(autoencoder, signals):
    a, b = signals[0], signals[1]
    assert np.allclose(latent_interpolate(autoencoder, a, b, 1.0).values, autoencoder.decode(autoencoder.encode(a)))
    assert np.allclose(latent_interpolate(autoencoder, a, b, 0.0).values, autoencoder.decode(autoencoder.encode(b)))
    for weight in (0.2, 0.7):
        assert np.allclose(
            latent_interpolate(autoencoder, a, a, weight).values,
            autoencoder.decode(autoencoder.encode(a)),
        )
    with pytest.raises(InvalidPairing):
        latent_interpolate(autoencoder, a, signals[-1], 0.5)


def test_latent_requires_trained_autoencoder(autoencoder, signals):
    untrained = dataclasses.replace(autoencoder, reconstruction_error=None)
    with pytest.raises(ModelNotReady):
        latent_jitter(untrained, signals[0], 0.1, np.random.default_rng(0))
    poor = dataclasses.replace(autoencoder, reconstruction_error=0.9)
    with pytest.raises(ModelNotReady):
        latent_interpolate(poor, signals[0], signals[1], 0.5)


def test_train_autoencoder(signals):
    built = Autoencoder.build(1, 64, np.random.default_rng(1), d=8, linear=True)
    trained, history = train_autoencoder(built, signals, 40, 0.05, np.random.default_rng(2), batch_size=12)
    assert len(history) == 40
    assert history[-1] < history[0]
    assert trained.reconstruction_error == pytest.approx(trained.measure(stack_signals(signals)))

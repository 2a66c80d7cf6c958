import copy
import logging
from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from encoder.feature_encoder import (
    build_decoder,
    build_encoder,
    build_linear_decoder,
    build_linear_encoder,
)
from encoder.network import Network, as_tensor
from encoder.training import ParamBundle
from signal_sample import Signal, stack_signals
from ubmf_exceptions import InvalidInput, ModelNotReady, NumericalFailure

logger = logging.getLogger(__name__)

DEFAULT_MAX_RECONSTRUCTION_ERROR = 0.5


@dataclass(frozen=True)
class Autoencoder:
    """
    Encoder/decoder pair used for latent perturbations

    ``reconstruction_error`` is the mean squared reconstruction error relative to the
    mean squared signal on the training set; None until trained.
    """

    encoder: Network
    decoder: Network
    reconstruction_error: float | None = None
    max_reconstruction_error: float = DEFAULT_MAX_RECONSTRUCTION_ERROR

    def require_ready(self):
        if self.reconstruction_error is None:
            raise ModelNotReady("Autoencoder is not trained")
        if self.reconstruction_error > self.max_reconstruction_error:
            raise ModelNotReady(
                "Autoencoder reconstruction error above the bound",
                context=(self.reconstruction_error, self.max_reconstruction_error),
            )

    def encode(self, s: Signal) -> np.ndarray:
        if tuple(s.values.shape) != self.encoder.input_shape:
            raise InvalidInput(
                "Signal shape does not match the autoencoder",
                context=(s.values.shape, self.encoder.input_shape),
            )
        return self.encoder.predict(s.values[None])[0]

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != self.decoder.input_shape:
            raise InvalidInput("Latent dimension mismatch", context=z.shape)
        return self.decoder.predict(z[None])[0]

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.decoder.predict(self.encoder.predict(x))

    def measure(self, x: np.ndarray) -> float:
        return relative_reconstruction_error(x, self.reconstruct(x))

    def with_measured_error(self, x: np.ndarray) -> "Autoencoder":
        return replace(self, reconstruction_error=self.measure(x))

    def bundle(self) -> ParamBundle:
        return ParamBundle({"encoder": self.encoder, "decoder": self.decoder})

    @staticmethod
    def build(
        channels: int,
        length: int,
        rng: np.random.Generator,
        d: int,
        linear: bool = False,
        max_reconstruction_error: float = DEFAULT_MAX_RECONSTRUCTION_ERROR,
    ) -> "Autoencoder":
        if linear:
            encoder = build_linear_encoder(channels, length, rng, d)
            decoder = build_linear_decoder(channels, length, rng, d)
        else:
            encoder = build_encoder(channels, length, rng, d)
            decoder = build_decoder(channels, length, rng, d)
        return Autoencoder(encoder, decoder, None, max_reconstruction_error)


def relative_reconstruction_error(x: np.ndarray, x_hat: np.ndarray) -> float:
    energy = float(np.mean(x**2))
    error = float(np.mean((x_hat - x) ** 2))
    return error / energy if energy > 0 else error


def reconstruction_loss(bundle: ParamBundle, x: torch.Tensor) -> torch.Tensor:
    return nn.functional.mse_loss(bundle["decoder"](bundle["encoder"](x)), x)


def train_autoencoder(
    autoencoder: Autoencoder,
    signals: list[Signal],
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    batch_size: int = 32,
) -> tuple[Autoencoder, list[float]]:
    """
    Minibatch SGD on the mean squared reconstruction error

    :return: trained autoencoder with its measured error, and the per-epoch relative error
    """
    x = stack_signals(signals)
    bundle = copy.deepcopy(autoencoder.bundle()).train()
    optimizer = torch.optim.SGD(bundle.parameters(), lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], batch_size):
            optimizer.zero_grad()
            loss = reconstruction_loss(bundle, as_tensor(x[order[start : start + batch_size]]))
            if not bool(torch.isfinite(loss)):
                raise NumericalFailure("Non-finite reconstruction loss", context=epoch)
            loss.backward()
            optimizer.step()
        bundle.eval()
        snapshot = replace(autoencoder, encoder=bundle["encoder"], decoder=bundle["decoder"])
        history.append(snapshot.measure(x))
        bundle.train()
        logger.debug("Autoencoder epoch %d: relative error %.4f", epoch, history[-1])
    bundle.eval()
    trained = replace(autoencoder, encoder=bundle["encoder"], decoder=bundle["decoder"])
    trained = trained.with_measured_error(x)
    logger.info("Autoencoder trained: relative error %.4f", trained.reconstruction_error)
    return trained, history

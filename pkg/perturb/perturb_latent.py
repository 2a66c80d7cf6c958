import math

import numpy as np

from encoder.autoencoder import Autoencoder
from perturb.perturb_base import PerturbBase
from perturb.perturb_spec import PerturbKind, PerturbSpec
from signal_sample import Signal
from ubmf_exceptions import InvalidPairing, InvalidParameter, ModelNotReady


def latent_jitter(
    autoencoder: Autoencoder, s: Signal, sigma: float, rng: np.random.Generator
) -> Signal:
    """
    dec(enc(s) + eps), eps ~ N(0, sigma^2 I)
    """
    if not math.isfinite(sigma) or sigma < 0:
        raise InvalidParameter("Latent sigma must be finite and >= 0", context=sigma)
    autoencoder.require_ready()
    z = autoencoder.encode(s)
    if sigma > 0:
        z = z + rng.normal(loc=0.0, scale=sigma, size=z.shape)
    return s.with_values(autoencoder.decode(z))


def latent_interpolate(
    autoencoder: Autoencoder, a: Signal, b: Signal, weight: float
) -> Signal:
    """
    dec(weight * enc(a) + (1 - weight) * enc(b)); a and b must share their label
    """
    if not 0.0 <= weight <= 1.0:
        raise InvalidParameter("Interpolation weight must be in [0, 1]", context=weight)
    if a.label != b.label:
        raise InvalidPairing(
            "Interpolated signals must share their label", context=(a.label, b.label)
        )
    if a.values.shape != b.values.shape:
        raise InvalidPairing(
            "Interpolated signals must share their shape",
            context=(a.values.shape, b.values.shape),
        )
    autoencoder.require_ready()
    z = weight * autoencoder.encode(a) + (1.0 - weight) * autoencoder.encode(b)
    return a.with_values(autoencoder.decode(z))


class LatentPerturber(PerturbBase):
    KINDS = (PerturbKind.LATENT_JITTER, PerturbKind.LATENT_INTERP)

    def __init__(self, autoencoder: Autoencoder | None):
        self.autoencoder = autoencoder

    def apply(
        self,
        spec: PerturbSpec,
        signal: Signal,
        rng: np.random.Generator,
        partner: Signal | None = None,
    ) -> Signal:
        if self.autoencoder is None:
            raise ModelNotReady("Latent perturbation needs an autoencoder", context=spec)
        if spec.kind == PerturbKind.LATENT_JITTER:
            return latent_jitter(
                self.autoencoder, signal, float(spec.params.get("sigma", 0.05)), rng
            )
        if spec.kind == PerturbKind.LATENT_INTERP:
            if partner is None:
                raise InvalidPairing("Latent interpolation needs a partner", context=signal)
            weight = spec.params.get("weight")
            if weight is None:
                weight = float(rng.uniform(0.0, 1.0))
            return latent_interpolate(self.autoencoder, signal, partner, float(weight))
        raise RuntimeError(f"Invalid kind: {spec.kind}")

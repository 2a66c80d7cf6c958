import logging

import numpy as np

from encoder.autoencoder import Autoencoder
from perturb.perturb_base import PerturbBase
from perturb.perturb_latent import LatentPerturber
from perturb.perturb_spec import PerturbSpec
from perturb.perturb_strong import StrongPerturber
from perturb.perturb_weak import WeakPerturber
from random_generator import RandomGenerator
from signal_sample import Signal
from ubmf_exceptions import InvalidParameter

logger = logging.getLogger(__name__)


class SignalPerturber:
    def __init__(self, autoencoder: Autoencoder | None = None):
        self._perturbers: list[PerturbBase] = [
            WeakPerturber(),
            StrongPerturber(),
            LatentPerturber(autoencoder),
        ]

    def apply(
        self, spec: PerturbSpec, signal: Signal, partner: Signal | None = None
    ) -> Signal | None:
        """
        Apply one spec with a generator seeded from ``spec.seed``

        :return: the perturbed signal, or None when a splice found no similar window
        """
        rng = np.random.default_rng(spec.seed)
        for perturber in self._perturbers:
            if perturber.match(spec):
                return perturber.apply(spec, signal, rng, partner)
        raise InvalidParameter("No perturber for the spec", context=spec)

    def perturb_dataset(
        self, signals: list[Signal], specs: list[PerturbSpec], seed: int
    ) -> list[Signal]:
        """
        Apply every spec to every signal; pairwise kinds take a random same-label partner

        Per-sample seeds derive from ``seed``, the sample index and the spec kind,
        so the result does not depend on the order the specs are listed in.
        """
        master = RandomGenerator(seed, ("perturb",))
        by_label: dict = {}
        for i, signal in enumerate(signals):
            by_label.setdefault(signal.label, []).append(i)

        result = []
        skipped = 0
        for i, signal in enumerate(signals):
            for spec in specs:
                stream = master.child(i, spec.kind.value)
                partner = None
                if spec.kind.is_pairwise():
                    partner = self._pick_partner(signals, by_label, i, stream.numpy())
                    if partner is None:
                        skipped += 1
                        continue
                perturbed = self.apply(spec.with_seed(stream.derive_seed()), signal, partner)
                if perturbed is None:
                    skipped += 1
                    continue
                result.append(perturbed.with_values(perturbed.values, f"+{spec.kind}"))
        logger.info(
            "Perturbed %d signals with %d specs: %d outputs, %d skipped",
            len(signals),
            len(specs),
            len(result),
            skipped,
        )
        return result

    @staticmethod
    def _pick_partner(
        signals: list[Signal], by_label: dict, index: int, rng: np.random.Generator
    ) -> Signal | None:
        candidates = [j for j in by_label[signals[index].label] if j != index]
        if len(candidates) == 0:
            return None
        return signals[candidates[int(rng.integers(0, len(candidates)))]]


def strong_view(
    perturber: SignalPerturber,
    signal: Signal,
    specs: list[PerturbSpec],
    rng: np.random.Generator,
) -> Signal:
    """
    One strong view: a randomly chosen strong spec with a fresh seed
    """
    spec = specs[int(rng.integers(0, len(specs)))]
    if spec.kind.is_pairwise():
        raise InvalidParameter("Strong views need single-signal kinds", context=spec)
    return perturber.apply(spec.with_seed(int(rng.integers(0, 2**31 - 1))), signal)


def weak_view(
    perturber: SignalPerturber,
    signal: Signal,
    specs: list[PerturbSpec],
    rng: np.random.Generator,
) -> Signal:
    """
    One weak view from the non-pairwise weak specs
    """
    usable = [spec for spec in specs if not spec.kind.is_pairwise()]
    if len(usable) == 0:
        raise InvalidParameter("No single-signal weak spec", context=specs)
    spec = usable[int(rng.integers(0, len(usable)))]
    return perturber.apply(spec.with_seed(int(rng.integers(0, 2**31 - 1))), signal)

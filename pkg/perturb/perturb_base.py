import numpy as np

from perturb.perturb_spec import PerturbKind, PerturbSpec
from signal_sample import Signal


class PerturbBase:
    """
    One family of perturbation operators, dispatched by spec kind
    """

    KINDS: tuple[PerturbKind, ...] = ()

    def match(self, spec: PerturbSpec) -> bool:
        """
        Check if the perturber can apply the spec
        """
        return spec.kind in self.KINDS

    def apply(
        self,
        spec: PerturbSpec,
        signal: Signal,
        rng: np.random.Generator,
        partner: Signal | None = None,
    ) -> Signal | None:
        """
        Apply the spec; pairwise kinds use ``partner``
        """
        raise NotImplementedError()

from dataclasses import dataclass, field
from enum import Enum

from ubmf_exceptions import InvalidParameter


class PerturbKind(Enum):
    JITTER = "jitter"
    UNIFORM_SCALE = "uniform_scale"
    SPLICE = "splice"
    MAGNITUDE_WARP = "magnitude_warp"
    TIME_WARP = "time_warp"
    ROTATE = "rotate"
    SLICE_SHUFFLE = "slice_shuffle"
    RANDOM_MASK = "random_mask"
    LATENT_JITTER = "latent_jitter"
    LATENT_INTERP = "latent_interp"

    @staticmethod
    def weak_kinds() -> list:
        return [PerturbKind.JITTER, PerturbKind.UNIFORM_SCALE, PerturbKind.SPLICE]

    def is_pairwise(self) -> bool:
        return self in (PerturbKind.SPLICE, PerturbKind.LATENT_INTERP)

    def __str__(self):
        return self.value


class Strength(Enum):
    WEAK = "weak"
    STRONG = "strong"

    def __str__(self):
        return self.value


# latent jitter counts as a weak perturbation up to this noise level
LATENT_JITTER_WEAK_SIGMA = 0.1


def expected_strength(kind: PerturbKind, params: dict) -> Strength:
    if kind in PerturbKind.weak_kinds():
        return Strength.WEAK
    if kind == PerturbKind.LATENT_JITTER:
        sigma = float(params.get("sigma", 0.0))
        return Strength.WEAK if sigma <= LATENT_JITTER_WEAK_SIGMA else Strength.STRONG
    return Strength.STRONG


@dataclass(frozen=True)
class PerturbSpec:
    kind: PerturbKind
    strength: Strength
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        expected = expected_strength(self.kind, self.params)
        if self.strength != expected:
            raise InvalidParameter(
                f"{self.kind} must carry strength={expected}", context=self.strength
            )

    @staticmethod
    def of(kind: PerturbKind | str, seed: int = 0, **params) -> "PerturbSpec":
        """
        Spec with the strength implied by kind and parameters
        """
        kind = PerturbKind(kind) if isinstance(kind, str) else kind
        return PerturbSpec(kind, expected_strength(kind, params), dict(params), seed)

    def with_seed(self, seed: int) -> "PerturbSpec":
        return PerturbSpec(self.kind, self.strength, dict(self.params), seed)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "strength": self.strength.value,
            "params": dict(self.params),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(data: dict) -> "PerturbSpec":
        try:
            return PerturbSpec(
                kind=PerturbKind(data["kind"]),
                strength=Strength(data["strength"]),
                params=dict(data.get("params", {})),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, ValueError) as e:
            raise InvalidParameter("Malformed perturbation spec", context=data, parent=e)

    def __str__(self):
        return f"{self.kind}({self.strength}, {self.params}, seed={self.seed})"


def default_weak_specs(signal_std: float = 1.0) -> list[PerturbSpec]:
    return [
        PerturbSpec.of(PerturbKind.JITTER, sigma=0.03 * signal_std),
        PerturbSpec.of(PerturbKind.UNIFORM_SCALE, mu=1.0, sigma=0.1),
        PerturbSpec.of(PerturbKind.SPLICE, window=64, tau=0.8),
    ]


def default_strong_specs(channels: int = 1) -> list[PerturbSpec]:
    specs = [
        PerturbSpec.of(PerturbKind.MAGNITUDE_WARP, n_knots=4, sigma=0.2),
        PerturbSpec.of(PerturbKind.TIME_WARP, n_knots=4, sigma=0.2),
        PerturbSpec.of(PerturbKind.SLICE_SHUFFLE, n_segments=4),
        PerturbSpec.of(PerturbKind.RANDOM_MASK, ratio=0.15, fill="gaussian"),
    ]
    if channels >= 2:
        specs.append(PerturbSpec.of(PerturbKind.ROTATE))
    return specs

from dataclasses import dataclass, field, replace

import numpy as np

from ubmf_exceptions import InvalidInput

MIN_LENGTH = 32


@dataclass(frozen=True)
class Signal:
    """
    Fixed-length multichannel waveform, values shaped [channels x T]
    """

    values: np.ndarray
    sample_rate: float = 1.0
    label: int | None = None
    condition: int = 0
    source_id: str = field(default="")

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if values.ndim != 2:
            raise InvalidInput(
                "Signal values must be [channels x T]", context=values.shape
            )
        if values.shape[0] < 1:
            raise InvalidInput("Signal needs at least one channel", context=values.shape)
        if values.shape[1] < MIN_LENGTH:
            raise InvalidInput(
                f"Signal length must be at least {MIN_LENGTH}", context=values.shape
            )
        if not np.all(np.isfinite(values)):
            raise InvalidInput("Signal values must be finite", context=self.source_id)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def channels(self) -> int:
        return self.values.shape[0]

    def length(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray, source_suffix: str = "") -> "Signal":
        """
        Same metadata, new values
        """
        return replace(
            self,
            values=values,
            source_id=self.source_id + source_suffix if source_suffix else self.source_id,
        )

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return (
            np.array_equal(self.values, other.values)
            and self.sample_rate == other.sample_rate
            and self.label == other.label
            and self.condition == other.condition
            and self.source_id == other.source_id
        )

    def __hash__(self):
        return hash((self.values.tobytes(), self.label, self.condition, self.source_id))

    def __str__(self):
        return f"Signal(source={self.source_id}, label={self.label}, condition={self.condition}, shape={self.values.shape})"


def stack_signals(signals: list[Signal]) -> np.ndarray:
    """
    Batch array shaped [B x channels x T]
    """
    if len(signals) == 0:
        raise InvalidInput("Empty signal list")
    return np.stack([s.values for s in signals], axis=0)

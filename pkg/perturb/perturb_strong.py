import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.stats import special_ortho_group

from perturb.perturb_base import PerturbBase
from perturb.perturb_spec import PerturbKind, PerturbSpec
from signal_sample import Signal
from ubmf_exceptions import InvalidParameter, NumericalFailure, UnsupportedSignal

MIN_WARP = 0.05
ORTHOGONALITY_TOLERANCE = 1e-8


class MaskFill:
    GAUSSIAN = "gaussian"
    LINEAR_INTERP = "linear_interp"
    ZERO = "zero"

    @staticmethod
    def all() -> list[str]:
        return [MaskFill.GAUSSIAN, MaskFill.LINEAR_INTERP, MaskFill.ZERO]


def knot_positions(length: int, n_knots: int) -> np.ndarray:
    if n_knots < 2:
        raise InvalidParameter("At least two knots are needed", context=n_knots)
    return np.linspace(0.0, length - 1.0, n_knots)


def spline_curve(length: int, knot_values: np.ndarray) -> np.ndarray:
    """
    Natural cubic spline through equally spaced knots, sampled at 0..length-1
    """
    knot_values = np.atleast_2d(knot_values)
    positions = knot_positions(length, knot_values.shape[1])
    spline = CubicSpline(positions, knot_values, axis=1, bc_type="natural")
    return spline(np.arange(length, dtype=float))


def magnitude_warp(
    s: Signal, n_knots: int, sigma: float, rng: np.random.Generator
) -> Signal:
    if n_knots < 2:
        raise InvalidParameter("At least two knots are needed", context=n_knots)
    if sigma < 0:
        raise InvalidParameter("Warp sigma must be >= 0", context=sigma)
    if sigma == 0:
        return s.with_values(s.values.copy())
    knots = rng.normal(loc=1.0, scale=sigma, size=(s.channels(), n_knots))
    curve = np.maximum(spline_curve(s.length(), knots), MIN_WARP)
    return s.with_values(curve * s.values)


def warp_path(
    length: int, n_knots: int, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """
    Monotone time map with tau(0) = 0 and tau(T-1) = T-1
    """
    if n_knots < 2:
        raise InvalidParameter("At least two knots are needed", context=n_knots)
    if sigma < 0:
        raise InvalidParameter("Warp sigma must be >= 0", context=sigma)
    if sigma == 0:
        return np.arange(length, dtype=float)
    knots = rng.normal(loc=1.0, scale=sigma, size=(1, n_knots))
    increments = np.maximum(spline_curve(length, knots)[0], MIN_WARP)
    cumulative = np.concatenate([[0.0], np.cumsum(increments[1:])])
    tau = cumulative * ((length - 1.0) / cumulative[-1])
    tau[0] = 0.0
    tau[-1] = length - 1.0
    if not np.all(np.diff(tau) > 0):
        raise NumericalFailure("Time warp is not monotone", context=(n_knots, sigma))
    return tau


def time_warp(s: Signal, n_knots: int, sigma: float, rng: np.random.Generator) -> Signal:
    tau = warp_path(s.length(), n_knots, sigma, rng)
    if sigma == 0:
        return s.with_values(s.values.copy())
    grid = np.arange(s.length(), dtype=float)
    values = np.stack([np.interp(tau, grid, channel) for channel in s.values])
    return s.with_values(values)


def random_rotation(channels: int, rng: np.random.Generator) -> np.ndarray:
    if channels < 2:
        raise UnsupportedSignal("Rotation needs at least two channels", context=channels)
    return special_ortho_group.rvs(channels, random_state=rng)


def rotate(s: Signal, rotation: np.ndarray) -> Signal:
    if s.channels() < 2:
        raise UnsupportedSignal(
            "Rotation needs at least two channels", context=s.channels()
        )
    rotation = np.asarray(rotation, dtype=float)
    if rotation.shape != (s.channels(), s.channels()):
        raise InvalidParameter(
            "Rotation matrix does not match the channel count", context=rotation.shape
        )
    deviation = np.max(np.abs(rotation.T @ rotation - np.eye(s.channels())))
    if deviation > ORTHOGONALITY_TOLERANCE:
        raise InvalidParameter("Rotation matrix is not orthogonal", context=deviation)
    return s.with_values(rotation @ s.values)


def slice_shuffle(s: Signal, n_segments: int, rng: np.random.Generator) -> Signal:
    length = s.length()
    if n_segments < 1 or n_segments > length:
        raise InvalidParameter(
            f"Segment count must be in [1, {length}]", context=n_segments
        )
    piece = length // n_segments
    bounds = [i * piece for i in range(n_segments)] + [length]
    pieces = [s.values[:, bounds[i] : bounds[i + 1]] for i in range(n_segments)]
    order = rng.permutation(n_segments)
    return s.with_values(np.concatenate([pieces[i] for i in order], axis=1))


def _line_fill(channel: np.ndarray, start: int, end: int) -> np.ndarray:
    length = channel.shape[0]
    positions = np.arange(start, end, dtype=float)
    if start > 0 and end < length:
        x0, x1 = start - 1, end
    elif start >= 2:
        x0, x1 = start - 2, start - 1
    elif end <= length - 2:
        x0, x1 = end, end + 1
    elif start == 1:
        return np.full(positions.shape, channel[0])
    elif end == length - 1:
        return np.full(positions.shape, channel[-1])
    else:
        return np.zeros(positions.shape)
    slope = (channel[x1] - channel[x0]) / (x1 - x0)
    return channel[x0] + slope * (positions - x0)


def random_mask(
    s: Signal, ratio: float, fill: str, rng: np.random.Generator
) -> Signal:
    if not 0.0 <= ratio <= 1.0:
        raise InvalidParameter("Mask ratio must be in [0, 1]", context=ratio)
    if fill not in MaskFill.all():
        raise InvalidParameter(f"Mask fill must be one of {MaskFill.all()}", context=fill)
    length = s.length()
    masked = int(math.floor(ratio * length))
    values = s.values.copy()
    if masked == 0:
        return s.with_values(values)
    start = int(rng.integers(0, length - masked + 1))
    end = start + masked
    for c in range(s.channels()):
        if fill == MaskFill.ZERO:
            values[c, start:end] = 0.0
        elif fill == MaskFill.GAUSSIAN:
            values[c, start:end] = rng.normal(
                loc=s.values[c].mean(), scale=s.values[c].std(), size=masked
            )
        else:
            values[c, start:end] = _line_fill(s.values[c], start, end)
    return s.with_values(values)


class StrongPerturber(PerturbBase):
    KINDS = (
        PerturbKind.MAGNITUDE_WARP,
        PerturbKind.TIME_WARP,
        PerturbKind.ROTATE,
        PerturbKind.SLICE_SHUFFLE,
        PerturbKind.RANDOM_MASK,
    )

    def apply(
        self,
        spec: PerturbSpec,
        signal: Signal,
        rng: np.random.Generator,
        partner: Signal | None = None,
    ) -> Signal:
        params = spec.params
        if spec.kind == PerturbKind.MAGNITUDE_WARP:
            return magnitude_warp(
                signal, int(params.get("n_knots", 4)), float(params.get("sigma", 0.2)), rng
            )
        if spec.kind == PerturbKind.TIME_WARP:
            return time_warp(
                signal, int(params.get("n_knots", 4)), float(params.get("sigma", 0.2)), rng
            )
        if spec.kind == PerturbKind.ROTATE:
            rotation = params.get("rotation")
            if rotation is None:
                rotation = random_rotation(signal.channels(), rng)
            return rotate(signal, np.asarray(rotation, dtype=float))
        if spec.kind == PerturbKind.SLICE_SHUFFLE:
            return slice_shuffle(signal, int(params.get("n_segments", 4)), rng)
        if spec.kind == PerturbKind.RANDOM_MASK:
            return random_mask(
                signal,
                float(params.get("ratio", 0.15)),
                str(params.get("fill", MaskFill.GAUSSIAN)),
                rng,
            )
        raise RuntimeError(f"Invalid kind: {spec.kind}")

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from number_helper import number_fix
from perturb.perturb_base import PerturbBase
from perturb.perturb_spec import PerturbKind, PerturbSpec
from signal_sample import Signal
from ubmf_exceptions import InvalidPairing, InvalidParameter

MAX_SCALE_REDRAWS = 100


def jitter(s: Signal, sigma: float, rng: np.random.Generator) -> Signal:
    if not math.isfinite(sigma) or sigma < 0:
        raise InvalidParameter("Jitter sigma must be finite and >= 0", context=sigma)
    if sigma == 0:
        return s.with_values(s.values.copy())
    noise = rng.normal(loc=0.0, scale=sigma, size=s.values.shape)
    return s.with_values(s.values + noise)


def draw_scale(mu: float, sigma: float, rng: np.random.Generator) -> float:
    """
    alpha ~ N(mu, sigma^2), redrawn until positive
    """
    if not math.isfinite(sigma) or sigma < 0:
        raise InvalidParameter("Scale sigma must be finite and >= 0", context=sigma)
    for _ in range(MAX_SCALE_REDRAWS):
        alpha = float(rng.normal(loc=mu, scale=sigma)) if sigma > 0 else float(mu)
        if alpha > 0:
            return alpha
        if sigma == 0:
            break
    raise InvalidParameter(
        f"No positive scale factor in {MAX_SCALE_REDRAWS} draws", context=(mu, sigma)
    )


def uniform_scale(
    s: Signal, mu: float, sigma: float, rng: np.random.Generator
) -> Signal:
    alpha = draw_scale(mu, sigma, rng)
    return s.with_values(s.values * alpha)


def _normalized_cross_correlation(seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    seg_a = seg_a - seg_a.mean(axis=1, keepdims=True)
    seg_b = seg_b - seg_b.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(seg_a, axis=1) * np.linalg.norm(seg_b, axis=1)
    dots = np.einsum("ij,ij->i", seg_a, seg_b)
    ncc = np.zeros_like(dots)
    nonzero = norms > 0
    ncc[nonzero] = dots[nonzero] / norms[nonzero]
    return np.clip(ncc, -1.0, 1.0)


def splice_similarity(a: Signal, b: Signal, window: int) -> tuple[float, int]:
    """
    Best normalized cross-correlation over aligned sliding windows

    :return: (similarity D, cut index) where the cut sits in the middle of the best window
    """
    length = a.length()
    if window < 2 or window > length:
        raise InvalidParameter(
            f"Splice window must be in [2, {length}]", context=window
        )
    # [offsets x (channels * window)]
    seg_a = sliding_window_view(a.values, window, axis=1).transpose(1, 0, 2)
    seg_b = sliding_window_view(b.values, window, axis=1).transpose(1, 0, 2)
    seg_a = seg_a.reshape(seg_a.shape[0], -1)
    seg_b = seg_b.reshape(seg_b.shape[0], -1)
    ncc = _normalized_cross_correlation(seg_a, seg_b)
    best = int(np.argmax(ncc))
    return number_fix(ncc[best]), best + window // 2


def splice_resample(
    a: Signal, b: Signal, window: int, tau: float, rng: np.random.Generator | None = None
) -> Signal | None:
    """
    Splice a and b at their best-matching cut, or None when D < tau
    """
    if a.values.shape != b.values.shape:
        raise InvalidPairing(
            "Spliced signals must share their shape",
            context=(a.values.shape, b.values.shape),
        )
    if a.label != b.label:
        raise InvalidPairing(
            "Spliced signals must share their label", context=(a.label, b.label)
        )
    similarity, cut = splice_similarity(a, b, window)
    if similarity < tau:
        return None
    values = np.concatenate([a.values[:, :cut], b.values[:, cut:]], axis=1)
    return a.with_values(values)


class WeakPerturber(PerturbBase):
    KINDS = (PerturbKind.JITTER, PerturbKind.UNIFORM_SCALE, PerturbKind.SPLICE)

    def apply(
        self,
        spec: PerturbSpec,
        signal: Signal,
        rng: np.random.Generator,
        partner: Signal | None = None,
    ) -> Signal | None:
        params = spec.params
        if spec.kind == PerturbKind.JITTER:
            return jitter(signal, float(params.get("sigma", 0.03)), rng)
        if spec.kind == PerturbKind.UNIFORM_SCALE:
            return uniform_scale(
                signal,
                float(params.get("mu", 1.0)),
                float(params.get("sigma", 0.1)),
                rng,
            )
        if spec.kind == PerturbKind.SPLICE:
            if partner is None:
                raise InvalidPairing("Splice needs a partner signal", context=signal)
            return splice_resample(
                signal,
                partner,
                int(params.get("window", 64)),
                float(params.get("tau", 0.8)),
                rng,
            )
        raise RuntimeError(f"Invalid kind: {spec.kind}")

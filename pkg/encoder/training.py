import copy
import logging
from typing import Callable

import numpy as np
import torch
from torch import nn

from encoder.network import Network
from ubmf_exceptions import InvalidParameter, NumericalFailure

logger = logging.getLogger(__name__)

GRAD_CHECK_SUBSET = 256
GRAD_CHECK_FLOOR = 1.0


class ParamBundle(nn.ModuleDict):
    """
    Several named networks trained together
    """

    def __init__(self, networks: dict[str, Network]):
        if len(networks) == 0:
            raise InvalidParameter("Empty parameter bundle")
        super().__init__(networks)

    def get(self, name: str) -> Network | None:
        return self[name] if name in self else None

    def names(self) -> list[str]:
        return list(self.keys())

    def size(self) -> int:
        return sum(network.size() for network in self.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([network.flat() for network in self.values()])

    def with_flat(self, vector: np.ndarray) -> "ParamBundle":
        networks = {}
        offset = 0
        for name, network in self.items():
            networks[name] = network.with_flat(vector[offset : offset + network.size()])
            offset += network.size()
        return ParamBundle(networks)

    def replace(self, **networks: Network) -> "ParamBundle":
        merged = dict(self.items())
        merged.update(networks)
        return ParamBundle(merged)


# (params, batch) -> scalar loss tensor; params is a Network, a ParamBundle or a float64 tensor
LossFn = Callable[[object, object], torch.Tensor]


def _trainable_copy(params, frozen: tuple) -> tuple[object, list[torch.Tensor]]:
    if isinstance(params, np.ndarray):
        vector = torch.tensor(params, dtype=torch.float64, requires_grad=True)
        return vector, [vector]
    unknown = [name for name in frozen if not isinstance(params, ParamBundle) or name not in params]
    if unknown:
        raise InvalidParameter("Unknown network", context=unknown)
    model = copy.deepcopy(params).train()
    trainable = [
        p for name, p in model.named_parameters() if name.split(".", 1)[0] not in frozen
    ]
    return model, trainable


def train_step(
    params,
    loss_fn: LossFn,
    batch,
    lr: float,
    frozen: tuple = (),
    max_grad_norm: float | None = None,
) -> tuple[object, float]:
    """
    One SGD step on a copy of ``params``; the argument itself is never modified

    :param params: a Network, a ParamBundle or a plain numpy vector
    :param frozen: bundle members excluded from the update
    :return: updated params and the loss before the step
    """
    model, trainable = _trainable_copy(params, tuple(frozen))
    optimizer = torch.optim.SGD(trainable, lr=lr)
    optimizer.zero_grad()
    loss = loss_fn(model, batch)
    value = float(loss.detach())
    if not np.isfinite(value):
        raise NumericalFailure("Non-finite loss", context={"loss": value})
    loss.backward()
    for i, p in enumerate(trainable):
        if p.grad is not None and not bool(torch.all(torch.isfinite(p.grad))):
            raise NumericalFailure(
                "Non-finite gradient", context={"loss": value, "first_bad_tensor": i}
            )
    if lr == 0:
        return params, value
    if max_grad_norm is not None:
        nn.utils.clip_grad_norm_(trainable, max_grad_norm)
    optimizer.step()
    if isinstance(params, np.ndarray):
        return model.detach().numpy().copy(), value
    return model.eval(), value


def grad_check(
    params,
    loss_fn: LossFn,
    batch,
    eps: float = 1e-6,
    subset: int = GRAD_CHECK_SUBSET,
    seed: int = 0,
    floor: float = GRAD_CHECK_FLOOR,
) -> float:
    """
    Worst relative error between the autograd gradient and central differences

    All weights are checked when there are at most ``subset`` of them, otherwise
    a seeded random subset. Errors are relative to max(|analytic|, |numeric|, floor).
    """
    model, parameters = _trainable_copy(params, ())
    loss = loss_fn(model, batch)
    grads = torch.autograd.grad(loss, parameters, allow_unused=True)
    analytic = torch.cat(
        [
            (g if g is not None else torch.zeros_like(p)).reshape(-1)
            for g, p in zip(grads, parameters)
        ]
    ).numpy()
    base = nn.utils.parameters_to_vector(parameters).detach().clone()
    if base.numel() <= subset:
        indices = np.arange(base.numel())
    else:
        indices = np.random.default_rng(seed).choice(base.numel(), size=subset, replace=False)

    def loss_at(vector: torch.Tensor) -> float:
        with torch.no_grad():
            nn.utils.vector_to_parameters(vector, parameters)
            return float(loss_fn(model, batch))

    worst = 0.0
    for i in indices:
        plus = base.clone()
        plus[i] += eps
        minus = base.clone()
        minus[i] -= eps
        numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * eps)
        error = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, float(error))
    logger.debug("Gradient check over %d weights: worst relative error %.3e", len(indices), worst)
    return worst

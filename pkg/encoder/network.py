import copy

import numpy as np
import torch
from torch import nn

from ubmf_exceptions import InsufficientBatch, InvalidInput, InvalidParameter


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=torch.float64)


def init_uniform(module: nn.Module, rng: np.random.Generator):
    """
    Draw every conv/dense weight and bias from U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    """
    with torch.no_grad():
        for layer in module.modules():
            if not isinstance(layer, (nn.Conv1d, nn.Linear)):
                continue
            bound = 1.0 / np.sqrt(layer.weight[0].numel())
            layer.weight.copy_(as_tensor(rng.uniform(-bound, bound, size=tuple(layer.weight.shape))))
            if layer.bias is not None:
                layer.bias.copy_(as_tensor(rng.uniform(-bound, bound, size=tuple(layer.bias.shape))))


class Network(nn.Module):
    """
    Float64 layer stack together with the input shape it accepts

    Networks are handed around in eval mode and treated as values: ``with_*`` methods
    return modified copies, training code works on its own copies.
    ``architecture``/``arguments`` name the builder that recreates the stack from a checkpoint.
    """

    def __init__(
        self,
        layers: list[nn.Module],
        input_shape: tuple,
        rng: np.random.Generator | None = None,
        architecture: str | None = None,
        arguments: dict | None = None,
    ):
        super().__init__()
        self.layers = nn.Sequential(*layers).double()
        self.input_shape = tuple(int(n) for n in input_shape)
        self.architecture = architecture
        self.arguments = dict(arguments or {})
        self.eval()
        try:
            with torch.no_grad():
                out = self.layers(torch.zeros((1,) + self.input_shape, dtype=torch.float64))
        except RuntimeError as e:
            raise InvalidInput(
                "Layer stack does not accept the input shape", context=self.input_shape, parent=e
            )
        self._output_shape = tuple(out.shape[1:])
        if rng is not None:
            init_uniform(self, rng)

    def output_shape(self) -> tuple:
        return self._output_shape

    def size(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def batch_norms(self) -> list[nn.BatchNorm1d]:
        return [m for m in self.modules() if isinstance(m, nn.BatchNorm1d)]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if tuple(x.shape[1:]) != self.input_shape:
            raise InvalidInput(
                "Input shape does not match the network", context=(tuple(x.shape), self.input_shape)
            )
        if self.training and x.shape[0] < 2 and len(self.batch_norms()) > 0:
            raise InsufficientBatch("Batch norm needs at least two samples", context=x.shape[0])
        return self.layers(x)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise InvalidInput("Network input must be finite")
        with torch.no_grad():
            return self(as_tensor(x)).numpy()

    def flat(self) -> np.ndarray:
        if self.size() == 0:
            return np.zeros(0)
        return nn.utils.parameters_to_vector(self.parameters()).detach().numpy().copy()

    def with_flat(self, vector: np.ndarray) -> "Network":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.size(),):
            raise InvalidParameter(
                "Flat vector does not match the network size", context=(vector.shape, self.size())
            )
        network = copy.deepcopy(self)
        with torch.no_grad():
            nn.utils.vector_to_parameters(as_tensor(vector).clone(), network.parameters())
        return network

    def _state(self) -> list[torch.Tensor]:
        return [t for m in self.batch_norms() for t in (m.running_mean, m.running_var)]

    def state_flat(self) -> np.ndarray:
        parts = [t.detach().numpy().ravel() for t in self._state()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def with_state_flat(self, vector: np.ndarray) -> "Network":
        network = copy.deepcopy(self)
        offset = 0
        with torch.no_grad():
            for t in network._state():
                t.copy_(as_tensor(vector[offset : offset + t.numel()]).reshape(t.shape))
                offset += t.numel()
        return network

    def with_batch_statistics(self, x: np.ndarray) -> "Network":
        """
        Copy whose batch-norm running statistics are the exact statistics of ``x``
        """
        network = copy.deepcopy(self)
        norms = network.batch_norms()
        momenta = [m.momentum for m in norms]
        for m in norms:
            m.reset_running_stats()
            m.momentum = None
        network.train()
        with torch.no_grad():
            network(as_tensor(x))
        for m, momentum in zip(norms, momenta):
            m.momentum = momentum
        return network.eval()

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat()))) and bool(
            np.all(np.isfinite(self.state_flat()))
        )

    def to_dict(self) -> dict:
        if self.architecture is None:
            raise InvalidParameter("Network was not built from a named architecture")
        return {
            "architecture": self.architecture,
            "arguments": self.arguments,
            "input_shape": list(self.input_shape),
            "param_count": self.size(),
            "state_count": int(self.state_flat().size),
        }

    def __str__(self):
        kinds = " -> ".join(type(layer).__name__ for layer in self.layers)
        return f"Network({kinds}, size={self.size()})"

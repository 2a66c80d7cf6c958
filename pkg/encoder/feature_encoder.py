import numpy as np
import torch
from torch import nn

from encoder.network import Network, as_tensor
from signal_sample import Signal
from ubmf_exceptions import DegenerateInput, InvalidInput, InvalidParameter

DEFAULT_FEATURE_DIM = 16
METRIC_FILTERS = 32
METRIC_HIDDEN = 128
DECODER_HIDDEN = 64
FILTER_HIDDEN = 16


def _conv_stack(channels: int) -> list[nn.Module]:
    return [
        nn.Conv1d(channels, 8, kernel_size=7, stride=2),
        nn.ReLU(),
        nn.Conv1d(8, 16, kernel_size=5, stride=2),
        nn.ReLU(),
        nn.AdaptiveAvgPool1d(1),
        nn.Flatten(),
    ]


def build_encoder(
    channels: int, length: int, rng: np.random.Generator, d: int = DEFAULT_FEATURE_DIM
) -> Network:
    """
    conv(C->8, k7, s2) -> ReLU -> conv(8->16, k5, s2) -> ReLU -> global average -> dense(16->d)
    """
    return Network(
        _conv_stack(channels) + [nn.Linear(16, d)],
        (channels, length),
        rng=rng,
        architecture="encoder",
        arguments={"channels": channels, "length": length, "d": d},
    )


def build_linear_encoder(
    channels: int, length: int, rng: np.random.Generator, d: int = DEFAULT_FEATURE_DIM
) -> Network:
    return Network(
        [nn.Flatten(), nn.Linear(channels * length, d)],
        (channels, length),
        rng=rng,
        architecture="linear_encoder",
        arguments={"channels": channels, "length": length, "d": d},
    )


def build_decoder(
    channels: int, length: int, rng: np.random.Generator, d: int = DEFAULT_FEATURE_DIM
) -> Network:
    layers = [
        nn.Linear(d, DECODER_HIDDEN),
        nn.ReLU(),
        nn.Linear(DECODER_HIDDEN, channels * length),
        nn.Unflatten(1, (channels, length)),
    ]
    return Network(
        layers,
        (d,),
        rng=rng,
        architecture="decoder",
        arguments={"channels": channels, "length": length, "d": d},
    )


def build_linear_decoder(
    channels: int, length: int, rng: np.random.Generator, d: int = DEFAULT_FEATURE_DIM
) -> Network:
    return Network(
        [nn.Linear(d, channels * length), nn.Unflatten(1, (channels, length))],
        (d,),
        rng=rng,
        architecture="linear_decoder",
        arguments={"channels": channels, "length": length, "d": d},
    )


def build_metric_encoder(rng: np.random.Generator, d: int = DEFAULT_FEATURE_DIM) -> Network:
    """
    Scale network E_phi: the feature vector is read as a 1-channel sequence of length d
    """
    if d < 2:
        raise InvalidParameter("Metric encoder needs d >= 2", context=d)
    layers = [
        nn.Unflatten(1, (1, d)),
        nn.Conv1d(1, METRIC_FILTERS, kernel_size=3, stride=1, padding=1),
        nn.BatchNorm1d(METRIC_FILTERS),
        nn.MaxPool1d(2, 2),
        nn.LeakyReLU(0.2),
        nn.Flatten(),
        nn.Linear(METRIC_FILTERS * (d // 2), METRIC_HIDDEN),
        nn.BatchNorm1d(METRIC_HIDDEN),
        nn.ReLU(),
        nn.Linear(METRIC_HIDDEN, 1),
        nn.Sigmoid(),
    ]
    return Network(layers, (d,), rng=rng, architecture="metric", arguments={"d": d})


def build_filter_network(
    channels: int, length: int, k: int, rng: np.random.Generator
) -> Network:
    """
    Encoder conv stack -> dense(16->16) -> ReLU -> dense(16->K) emitting Dirichlet logits
    """
    layers = _conv_stack(channels) + [
        nn.Linear(16, FILTER_HIDDEN),
        nn.ReLU(),
        nn.Linear(FILTER_HIDDEN, k),
    ]
    return Network(
        layers,
        (channels, length),
        rng=rng,
        architecture="filter",
        arguments={"channels": channels, "length": length, "k": k},
    )


ARCHITECTURES = {
    "encoder": build_encoder,
    "linear_encoder": build_linear_encoder,
    "decoder": build_decoder,
    "linear_decoder": build_linear_decoder,
    "metric": build_metric_encoder,
    "filter": build_filter_network,
}


def network_from_dict(data: dict, flat: np.ndarray, state_flat: np.ndarray) -> Network:
    try:
        build = ARCHITECTURES[data["architecture"]]
    except KeyError:
        raise InvalidParameter("Unknown architecture", context=data.get("architecture"))
    skeleton = build(rng=np.random.default_rng(0), **data["arguments"])
    if list(skeleton.input_shape) != list(data["input_shape"]):
        raise InvalidParameter(
            "Architecture input shape mismatch", context=(skeleton.input_shape, data["input_shape"])
        )
    return skeleton.with_flat(flat).with_state_flat(state_flat)


def encode_batch(encoder: Network, x: np.ndarray) -> np.ndarray:
    """
    Inference-mode features shaped [B x d]
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != len(encoder.input_shape) + 1:
        raise InvalidInput("Expected a batch of signals", context=x.shape)
    return encoder.predict(x)


def encode(encoder: Network, s: Signal) -> np.ndarray:
    if tuple(s.values.shape) != encoder.input_shape:
        raise InvalidInput(
            "Signal shape does not match the encoder",
            context=(s.values.shape, encoder.input_shape),
        )
    return encoder.predict(s.values[None])[0]


def decode(decoder: Network, z: np.ndarray, template: Signal | None = None) -> Signal:
    z = np.asarray(z, dtype=float)
    if z.shape != decoder.input_shape:
        raise InvalidInput(
            "Latent dimension does not match the decoder", context=(z.shape, decoder.input_shape)
        )
    values = decoder.predict(z[None])[0]
    if template is None:
        return Signal(values)
    return template.with_values(values)


def metric_scale(metric: Network, x: np.ndarray) -> float:
    """
    E_phi(x) in (0, 1), evaluated with frozen batch-norm statistics
    """
    x = np.asarray(x, dtype=float)
    return float(metric.predict(x[None])[0, 0])


def scaled_embedding(metric: Network | None, x: torch.Tensor) -> torch.Tensor:
    """
    u = x / (||x|| * E_phi(x)) for a batch [B x d]; E_phi = 1 when metric is None

    The metric runs in whatever mode it is in.
    """
    norms = torch.linalg.vector_norm(x, dim=1)
    if bool(torch.any(norms <= 0)):
        raise DegenerateInput("Zero-norm feature vector", context=int(torch.argmin(norms)))
    if metric is None:
        return x / norms[:, None]
    return x / (norms * metric(x)[:, 0])[:, None]


def embed_scaled(metric: Network | None, x: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return scaled_embedding(metric, as_tensor(x)).numpy()


def modified_distance(metric: Network | None, x_i: np.ndarray, x_j: np.ndarray) -> float:
    u = embed_scaled(metric, np.stack([x_i, x_j]))
    return float(np.linalg.norm(u[0] - u[1]))


def pairwise_distances(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """
    Euclidean distances [A x B]; the gradient at a zero distance is zero
    """
    return torch.cdist(a, b, compute_mode="donot_use_mm_for_euclid_dist")

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial.distance import cdist
from scipy.special import softmax
from torch import nn

from encoder.feature_encoder import (
    embed_scaled,
    encode_batch,
    pairwise_distances,
    scaled_embedding,
)
from encoder.network import Network, as_tensor
from encoder.training import ParamBundle, train_step
from metrics_stream import MetricsStream
from perturb.perturb_spec import PerturbSpec
from perturb.signal_perturber import SignalPerturber, strong_view, weak_view
from random_generator import RandomGenerator
from run_config import SslConfig
from signal_sample import Signal, stack_signals
from tasking import sample_episode
from ubmf_exceptions import InsufficientBatch, InvalidInput, MissingClass

logger = logging.getLogger(__name__)

# small-batch contrastive form is used up to this batch size
SMALL_BATCH = 8
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Prototype:
    class_id: int
    center: np.ndarray
    support_count: float


@dataclass(frozen=True)
class PseudoLabel:
    sample: Signal | None
    distribution: np.ndarray
    max_prob: float
    accepted: bool


def class_prototypes(
    features: np.ndarray, labels: list[int] | np.ndarray, classes: list[int] | None = None
) -> list[Prototype]:
    """
    Mean feature per class, in ``classes`` order (sorted labels by default)
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    if classes is None:
        classes = sorted(int(c) for c in np.unique(labels))
    if len(classes) == 0:
        raise MissingClass("No class to build prototypes for")
    prototypes = []
    for c in classes:
        members = features[labels == c]
        if members.shape[0] == 0:
            raise MissingClass("Class without samples", context=c)
        prototypes.append(Prototype(int(c), members.mean(axis=0), float(members.shape[0])))
    return prototypes


def prototype_centers(prototypes: list[Prototype]) -> np.ndarray:
    if len(prototypes) == 0:
        raise MissingClass("Empty prototype list")
    return np.stack([p.center for p in prototypes])


def prototype_distances(
    metric: Network | None, features: np.ndarray, centers: np.ndarray
) -> np.ndarray:
    """
    Modified distances [n x C] with frozen batch-norm statistics
    """
    features = np.atleast_2d(features)
    return cdist(embed_scaled(metric, features), embed_scaled(metric, centers))


def soft_assign_batch(
    u: np.ndarray, prototypes: list[Prototype], metric: Network | None
) -> np.ndarray:
    return softmax(-prototype_distances(metric, u, prototype_centers(prototypes)), axis=1)


def soft_assign(u: np.ndarray, prototypes: list[Prototype], metric: Network | None) -> np.ndarray:
    """
    Contribution weights of one unlabeled feature to each prototype
    """
    return soft_assign_batch(np.asarray(u)[None], prototypes, metric)[0]


def refine_prototypes(
    prototypes: list[Prototype], unlabeled: np.ndarray, weights: np.ndarray
) -> list[Prototype]:
    """
    Labeled-anchored weighted mean of the support and the soft-assigned unlabeled features
    """
    unlabeled = np.asarray(unlabeled, dtype=float).reshape(-1, prototypes[0].center.shape[0])
    weights = np.asarray(weights, dtype=float).reshape(unlabeled.shape[0], len(prototypes))
    refined = []
    for c, prototype in enumerate(prototypes):
        mass = float(weights[:, c].sum())
        total = prototype.center * prototype.support_count + weights[:, c] @ unlabeled
        count = prototype.support_count + mass
        refined.append(Prototype(prototype.class_id, total / count, count))
    return refined


def transductive_predict_batch(
    x: np.ndarray, prototypes: list[Prototype], metric: Network | None
) -> np.ndarray:
    return soft_assign_batch(x, prototypes, metric)


def transductive_predict(
    x: np.ndarray, prototypes: list[Prototype], metric: Network | None
) -> np.ndarray:
    return soft_assign(x, prototypes, metric)


def metric_loss_tensor(distances: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    rows = torch.arange(distances.shape[0])
    return torch.mean(distances[rows, targets] + torch.exp(-distances).sum(dim=1))


def metric_loss(distances: np.ndarray, targets: np.ndarray) -> float:
    """
    mean_i [ D(i, y_i) + sum_c exp(-D(i, c)) ]
    """
    return float(metric_loss_tensor(as_tensor(np.atleast_2d(distances)), torch.as_tensor(targets)))


def contrastive_loss_tensor(z: torch.Tensor, z_prime: torch.Tensor, tau: float) -> torch.Tensor:
    batch = z.shape[0]
    if batch < 2:
        raise InsufficientBatch("Contrastive loss needs B >= 2", context=batch)
    if z_prime.shape != z.shape:
        raise InvalidInput(
            "View batches differ in shape", context=(tuple(z.shape), tuple(z_prime.shape))
        )
    norms = torch.cat([torch.linalg.vector_norm(z, dim=1), torch.linalg.vector_norm(z_prime, dim=1)])
    if bool(torch.any(norms <= 0)):
        raise InvalidInput("Zero-norm embedding in the contrastive batch")
    if batch > SMALL_BATCH:
        align_coef, lse_coef = 1.0 / batch, 1.0 / (2.0 * batch)
    else:
        align_coef, lse_coef = 1.0 / (batch * tau), 1.0
    cos = nn.functional.cosine_similarity(z, z_prime, dim=1, eps=0.0)
    logits = z @ torch.cat([z, z_prime]).T / tau
    self_pairs = torch.zeros_like(logits, dtype=torch.bool)
    self_pairs[:, :batch] = torch.eye(batch, dtype=torch.bool)
    lse = torch.logsumexp(logits.masked_fill(self_pairs, -math.inf), dim=1)
    return -align_coef * cos.sum() + lse_coef * lse.sum()


def contrastive_loss(z: np.ndarray, z_prime: np.ndarray, tau: float) -> float:
    """
    Contrastive loss of two views

    Batches above SMALL_BATCH: -(1/B) sum cos(z_i, z'_i) + (1/2B) sum_i log sum_{j != i} exp(z_i . z_j / tau);
    small batches: -(1/(B tau)) sum cos(z_i, z'_i) + sum_i log sum_{j != i} exp(z_i . z_j / tau).
    The 2B vectors of both views form the pool; j runs over the pool minus the anchor itself.
    """
    return float(contrastive_loss_tensor(as_tensor(z), as_tensor(z_prime), tau))


def consistency_cross_entropy(p_weak: np.ndarray, p_strong: np.ndarray) -> float:
    """
    mean_i H(p_weak_i, p_strong_i)
    """
    p_weak = np.atleast_2d(p_weak)
    p_strong = np.atleast_2d(p_strong)
    if p_weak.shape[0] == 0:
        return 0.0
    return float(np.mean(-np.sum(p_weak * np.log(np.maximum(p_strong, PROB_FLOOR)), axis=1)))


def pseudo_label(
    u: Signal,
    encoder: Network,
    prototypes: list[Prototype],
    metric: Network | None,
    weak_spec: PerturbSpec,
    tau_p: float,
    perturber: SignalPerturber | None = None,
) -> PseudoLabel:
    perturber = perturber or SignalPerturber()
    view = perturber.apply(weak_spec, u)
    distribution = transductive_predict(encode_batch(encoder, view.values[None])[0], prototypes, metric)
    max_prob = float(distribution.max())
    return PseudoLabel(u, distribution, max_prob, max_prob > tau_p)


def consistency_loss(
    accepted: list[PseudoLabel],
    encoder: Network,
    strong_spec: PerturbSpec,
    prototypes: list[Prototype],
    metric: Network | None,
    perturber: SignalPerturber | None = None,
) -> tuple[float, bool]:
    """
    Cross-entropy between weak pseudo-labels and predictions on strong views

    :return: (loss, empty) where ``empty`` flags that no sample was accepted
    """
    kept = [label for label in accepted if label.accepted]
    if len(kept) == 0:
        logger.warning("Consistency loss over an empty accepted set")
        return 0.0, True
    perturber = perturber or SignalPerturber()
    views = [perturber.apply(strong_spec, label.sample) for label in kept]
    features = encode_batch(encoder, stack_signals(views))
    p_strong = transductive_predict_batch(features, prototypes, metric)
    p_weak = np.stack([label.distribution for label in kept])
    return consistency_cross_entropy(p_weak, p_strong), False


def total_ssl_loss(l_ssl: float, l_s: float, lambda_w: float) -> float:
    return l_ssl + lambda_w * l_s


@dataclass
class PseudoLabelBatch:
    x: np.ndarray
    n_support: int
    support_targets: np.ndarray
    query_targets: np.ndarray
    n_classes: int
    weights: np.ndarray | None = None


def _refined_centers(
    support: torch.Tensor, query: torch.Tensor, batch: PseudoLabelBatch, weights: np.ndarray | None
) -> torch.Tensor:
    """
    Prototypes refined with soft-weighted query features; support-only when ``weights`` is None
    """
    onehot = nn.functional.one_hot(torch.as_tensor(batch.support_targets), batch.n_classes).double()
    if weights is None:
        weights = np.zeros((query.shape[0], batch.n_classes))
    weights = as_tensor(weights)
    totals = onehot.T @ support + weights.T @ query
    return totals / (onehot.sum(dim=0) + weights.sum(dim=0))[:, None]


def _query_distances(
    bundle: ParamBundle, batch: PseudoLabelBatch, weights: np.ndarray | None
) -> torch.Tensor:
    features = bundle["encoder"](as_tensor(batch.x))
    support, query = features[: batch.n_support], features[batch.n_support :]
    centers = _refined_centers(support, query, batch, weights)
    nq = query.shape[0]
    pool = scaled_embedding(bundle.get("metric"), torch.cat([query, centers]))
    return pairwise_distances(pool[:nq], pool[nq:])


def pseudo_label_loss(bundle: ParamBundle, batch: PseudoLabelBatch) -> torch.Tensor:
    """
    Prototype metric loss on the query split after transductive refinement

    The soft weights in ``batch.weights`` are constants of the step.
    """
    distances = _query_distances(bundle, batch, batch.weights)
    return metric_loss_tensor(distances, torch.as_tensor(batch.query_targets))


def soft_weights_for(bundle: ParamBundle, batch: PseudoLabelBatch) -> np.ndarray:
    """
    Soft assignment of the query features to the support-only prototypes
    """
    scratch = copy.deepcopy(bundle).train()
    with torch.no_grad():
        distances = _query_distances(scratch, batch, None)
    return softmax(-distances.numpy(), axis=1)


def episode_batch(support: list[Signal], query: list[Signal], classes: list[int]) -> PseudoLabelBatch:
    index = {c: i for i, c in enumerate(classes)}
    return PseudoLabelBatch(
        x=stack_signals(support + query),
        n_support=len(support),
        support_targets=np.array([index[s.label] for s in support]),
        query_targets=np.array([index[s.label] for s in query]),
        n_classes=len(classes),
    )


def metric_batch_statistics(encoder: Network, metric: Network, signals: list[Signal]) -> Network:
    return metric.with_batch_statistics(encode_batch(encoder, stack_signals(signals)))


def run_pseudo_label_phase(
    meta_train: list[Signal],
    encoder: Network,
    metric: Network | None,
    config: SslConfig,
    rng: RandomGenerator,
    stream: MetricsStream | None = None,
    max_way: int | None = None,
    start_iteration: int = 0,
) -> tuple[Network, Network | None]:
    """
    Transductive pseudo-label propagation over sampled tasks

    The metric encoder only moves on every ``metric_interval``-th iteration and
    is left out completely when ``frozen_metric`` is set.
    """
    stream = stream or MetricsStream(stage="pseudo_label")
    if config.frozen_metric:
        metric = None
    networks = {"encoder": encoder}
    if metric is not None:
        networks["metric"] = metric
    bundle = ParamBundle(networks)
    for iteration in range(start_iteration, config.t_meta):
        task_rng = rng.child("pseudo_label", iteration).numpy()
        episode = sample_episode(
            meta_train, max_way, task_rng, query_per_class=config.prototype_shots
        )
        batch = episode_batch(episode.support, episode.query, episode.classes)
        batch.weights = soft_weights_for(bundle, batch)
        frozen = ()
        if metric is not None and iteration % config.metric_interval != 0:
            frozen = ("metric",)
        bundle, loss = train_step(
            bundle,
            pseudo_label_loss,
            batch,
            config.lr,
            frozen=frozen,
            max_grad_norm=config.max_grad_norm,
        )
        stream.emit(iteration, loss=loss, way=len(episode.classes))
    encoder = bundle["encoder"]
    metric = bundle.get("metric")
    if metric is not None and config.t_meta > start_iteration:
        metric = metric_batch_statistics(encoder, metric, meta_train)
    logger.info("Pseudo-label phase done after %d iterations", config.t_meta)
    return encoder, metric


@dataclass
class SslBatch:
    x: np.ndarray
    batch_size: int
    n_strong: int
    p_weak: np.ndarray
    centers_scaled: np.ndarray
    metric: Network | None
    temperature: float
    lambda_w: float
    normalize: bool


def ssl_loss(bundle: ParamBundle, batch: SslBatch) -> torch.Tensor:
    """
    Contrastive loss of two weak views plus lambda_w times the consistency loss

    Only the encoder is trained; strong views of accepted samples are pulled
    toward their weak pseudo-labels.
    """
    b = batch.batch_size
    features = bundle["encoder"](as_tensor(batch.x))
    z, z_prime, strong = features[:b], features[b : 2 * b], features[2 * b :]
    if batch.normalize:
        z, z_prime = scaled_embedding(None, z), scaled_embedding(None, z_prime)
    loss = contrastive_loss_tensor(z, z_prime, batch.temperature)
    if batch.n_strong > 0 and batch.lambda_w != 0:
        u = scaled_embedding(batch.metric, strong)
        distances = pairwise_distances(u, as_tensor(batch.centers_scaled))
        log_p_strong = torch.log_softmax(-distances, dim=1)
        consistency = torch.mean(-(as_tensor(batch.p_weak) * log_p_strong).sum(dim=1))
        loss = total_ssl_loss(loss, consistency, batch.lambda_w)
    return loss


def class_balanced_batch(
    signals: list[Signal], batch_size: int, rng: np.random.Generator
) -> list[Signal]:
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(signals):
        by_class.setdefault(s.label, []).append(i)
    classes = sorted(by_class)
    chosen = []
    for k in range(batch_size):
        members = by_class[classes[k % len(classes)]]
        chosen.append(signals[members[int(rng.integers(0, len(members)))]])
    return chosen


def run_ssl_phase(
    labeled: list[Signal],
    encoder: Network,
    metric: Network | None,
    config: SslConfig,
    rng: RandomGenerator,
    weak_specs: list[PerturbSpec],
    strong_specs: list[PerturbSpec],
    unlabeled: list[Signal] | None = None,
    stream: MetricsStream | None = None,
    perturber: SignalPerturber | None = None,
    start_iteration: int = 0,
) -> Network:
    """
    Contrastive self-supervision with perturbation-consistency injection

    A class-balanced batch of B labeled signals gives two weak views; a share
    ``injection_ratio`` of B samples (drawn from ``unlabeled`` when available)
    gets a weak pseudo-label and a strong view.
    """
    stream = stream or MetricsStream(stage="ssl")
    perturber = perturber or SignalPerturber()
    if config.frozen_metric:
        metric = None
    frozen = copy.deepcopy(metric).requires_grad_(False) if metric is not None else None
    pool = unlabeled if unlabeled else labeled
    n_inject = int(round(config.injection_ratio * config.batch_size))
    for iteration in range(start_iteration, config.t_sl):
        it_rng = rng.child("ssl", iteration).numpy()
        batch_signals = class_balanced_batch(labeled, config.batch_size, it_rng)
        view_a = [weak_view(perturber, s, weak_specs, it_rng) for s in batch_signals]
        view_b = [weak_view(perturber, s, weak_specs, it_rng) for s in batch_signals]

        prototypes = _current_prototypes(labeled, encoder, config.prototype_shots, it_rng)
        centers_scaled = embed_scaled(metric, prototype_centers(prototypes))
        injected = [pool[int(i)] for i in it_rng.integers(0, len(pool), size=n_inject)]
        strong_views = []
        p_weak = np.zeros((0, len(prototypes)))
        accepted_fraction = 0.0
        if len(injected) > 0:
            weak_features = encode_batch(
                encoder,
                stack_signals([weak_view(perturber, s, weak_specs, it_rng) for s in injected]),
            )
            p_all = transductive_predict_batch(weak_features, prototypes, metric)
            accepted = p_all.max(axis=1) > config.tau_p
            accepted_fraction = float(accepted.mean())
            p_weak = p_all[accepted]
            strong_views = [
                strong_view(perturber, s, strong_specs, it_rng)
                for s, keep in zip(injected, accepted)
                if keep
            ]

        batch = SslBatch(
            x=stack_signals(view_a + view_b + strong_views),
            batch_size=config.batch_size,
            n_strong=len(strong_views),
            p_weak=p_weak,
            centers_scaled=centers_scaled,
            metric=frozen,
            temperature=config.temperature,
            lambda_w=config.lambda_w,
            normalize=config.normalize_embeddings,
        )
        bundle, loss = train_step(
            ParamBundle({"encoder": encoder}),
            ssl_loss,
            batch,
            config.lr,
            max_grad_norm=config.max_grad_norm,
        )
        encoder = bundle["encoder"]
        stream.emit(iteration, loss=loss, accepted=accepted_fraction)
    logger.info("SSL phase done after %d iterations", config.t_sl)
    return encoder


def _current_prototypes(
    labeled: list[Signal], encoder: Network, shots: int, rng: np.random.Generator
) -> list[Prototype]:
    by_class: dict[int, list[Signal]] = {}
    for s in labeled:
        by_class.setdefault(s.label, []).append(s)
    chosen = []
    for c in sorted(by_class):
        members = by_class[c]
        take = min(shots, len(members))
        chosen.extend(members[int(i)] for i in rng.choice(len(members), size=take, replace=False))
    features = encode_batch(encoder, stack_signals(chosen))
    return class_prototypes(features, [s.label for s in chosen])


def feature_spread(
    encoder: Network, signals: list[Signal], metric: Network | None = None
) -> float:
    """
    Mean pairwise modified distance between class prototypes
    """
    features = encode_batch(encoder, stack_signals(signals))
    prototypes = class_prototypes(features, [s.label for s in signals])
    if len(prototypes) < 2:
        raise MissingClass("Spread needs at least two classes", context=len(prototypes))
    u = embed_scaled(metric, prototype_centers(prototypes))
    distances = cdist(u, u)
    upper = np.triu_indices(len(prototypes), k=1)
    return float(distances[upper].mean())


def injection_sweep(
    labeled: list[Signal],
    unlabeled: list[Signal] | None,
    encoder: Network,
    metric: Network | None,
    config: SslConfig,
    seed: int,
    ratios: list[float],
    weak_specs: list[PerturbSpec],
    strong_specs: list[PerturbSpec],
) -> dict[float, float]:
    """
    Feature spread after SSL training at each injection ratio, same seed for every ratio
    """
    result = {}
    for ratio in ratios:
        trained = run_ssl_phase(
            labeled,
            encoder,
            metric,
            dataclasses.replace(config, injection_ratio=ratio),
            RandomGenerator(seed),
            weak_specs,
            strong_specs,
            unlabeled=unlabeled,
        )
        result[float(ratio)] = feature_spread(trained, labeled, metric)
        logger.info("Injection ratio %.2f: spread %.4f", ratio, result[float(ratio)])
    return result

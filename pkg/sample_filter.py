"""
Dirichlet prior network sample filter: inner training losses, the domain-aware
outer update of the classifier prior, OOD scoring and two-stage rejection
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas
import torch
from scipy.special import softmax
from scipy.stats import rankdata
from torch.distributions import Dirichlet, kl_divergence

import niw_parameterization
from bayes_qda import FeatureTask, NIWParams, feature_task, group_by_class
from encoder.feature_encoder import build_filter_network, encode_batch
from encoder.network import Network, as_tensor
from encoder.training import train_step
from metrics_stream import MetricsStream
from perturb.perturb_strong import magnitude_warp, slice_shuffle
from random_generator import RandomGenerator
from run_config import FilterConfig, SslConfig
from signal_sample import Signal, stack_signals
from ssl_meta import class_balanced_batch, run_pseudo_label_phase
from tasking import Episode, EpisodeModel, auroc, sample_episode
from ubmf_exceptions import (
    DegenerateInput,
    InvalidClass,
    InvalidInput,
    InvalidParameter,
    NumericalFailure,
)
from uncertainty import (
    dirichlet_diff_entropy,
    dirichlet_kl,
    dirichlet_mutual_information,
)

logger = logging.getLogger(__name__)

ALPHA_MIN = 1e-3
ALPHA_MAX = 1e4
P_MAX_CLAMP = 1.0 - 1e-6
VAR_FLOOR = 1e-6
TASKS_PER_OUTER_STEP = 4
DECISION_COLUMNS = ["sample_id", "diff_entropy", "p_max", "decision"]
SELECTORS = ("de", "maxp", "mi", "joint")


@dataclass(frozen=True)
class FilterHead:
    """
    Conv feature stack with an affine head emitting one logit per in-distribution class
    """

    network: Network
    classes: tuple[int, ...]

    def k(self) -> int:
        return len(self.classes)

    def class_index(self, class_id: int) -> int:
        try:
            return self.classes.index(int(class_id))
        except ValueError:
            raise InvalidClass(context=(class_id, self.classes))

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.network.predict(np.asarray(x, dtype=float))

    def alpha(self, x: np.ndarray) -> np.ndarray:
        return alpha_from_logits(self.logits(x))

    def with_network(self, network: Network) -> "FilterHead":
        return FilterHead(network, self.classes)


def build_filter_head(
    channels: int, length: int, classes: list[int], rng: np.random.Generator
) -> FilterHead:
    if len(classes) < 2:
        raise InvalidParameter("The filter needs at least two classes", context=classes)
    network = build_filter_network(channels, length, len(classes), rng)
    return FilterHead(network, tuple(sorted(classes)))


def alpha_from_logits(z: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(z, math.log(ALPHA_MIN), math.log(ALPHA_MAX)))


def _log_alpha(z: torch.Tensor) -> torch.Tensor:
    return torch.clamp(z, math.log(ALPHA_MIN), math.log(ALPHA_MAX))


def target_alpha(true_class: int, alpha_in: float, k: int) -> np.ndarray:
    if not 0 <= true_class < k:
        raise InvalidClass(context=(true_class, k))
    target = np.ones(k)
    target[true_class] += alpha_in
    return target


@dataclass(frozen=True)
class FilterWeights:
    alpha_in: float = 10.0
    omega_out: float = 1.0
    omega_cal: float = 0.5
    omega_rkl: float = 0.0
    lambda_t: float = 0.05
    lambda_out: float = 0.05

    @staticmethod
    def from_config(config: FilterConfig) -> "FilterWeights":
        return FilterWeights(
            alpha_in=config.alpha_in,
            omega_out=config.omega_out,
            omega_cal=config.omega_cal,
            omega_rkl=config.omega_rkl,
            lambda_t=config.lambda_t,
            lambda_out=config.lambda_out,
        )


@dataclass
class FilterBatch:
    x_in: np.ndarray
    # class indices into FilterHead.classes
    y_in: np.ndarray
    x_out: np.ndarray
    weights: FilterWeights = field(default_factory=FilterWeights)

    def n_in(self) -> int:
        return int(self.x_in.shape[0])

    def n_out(self) -> int:
        return int(self.x_out.shape[0])


def _signal_array(x) -> np.ndarray:
    if isinstance(x, Signal):
        return x.values[None]
    if isinstance(x, list):
        return stack_signals(x)
    return np.asarray(x, dtype=float)


def rkl_loss(head: FilterHead, x, true_class: int, alpha_in: float) -> float:
    """
    KL( Dir(alpha(x)) || Dir(target) ) for one sample
    """
    alpha = head.alpha(_signal_array(x))[0]
    return float(dirichlet_kl(alpha, target_alpha(head.class_index(true_class), alpha_in, head.k())))


def _rkl_terms(
    z_in: torch.Tensor,
    y_in: torch.Tensor,
    z_out: torch.Tensor,
    alpha_in: float,
    omega_out: float,
) -> torch.Tensor:
    n_in = z_in.shape[0]
    if n_in == 0:
        raise InvalidInput("The in-distribution batch is empty")
    targets = torch.ones_like(z_in)
    targets[torch.arange(n_in), y_in] += alpha_in
    alpha = torch.exp(_log_alpha(z_in))
    loss = kl_divergence(Dirichlet(alpha), Dirichlet(targets)).mean()
    if z_out.shape[0] > 0 and omega_out != 0:
        alpha_out = torch.exp(_log_alpha(z_out))
        flat = Dirichlet(torch.ones_like(alpha_out))
        loss = loss + omega_out * kl_divergence(Dirichlet(alpha_out), flat).mean()
    return loss


def rkl_total(
    head: FilterHead,
    in_batch: list[Signal],
    out_batch: list[Signal],
    alpha_in: float,
    omega_out: float,
) -> float:
    """
    Mean RKL to the class targets plus omega_out times the mean RKL of OOD samples to the flat Dirichlet
    """
    if len(in_batch) == 0:
        raise InvalidInput("The in-distribution batch is empty")
    z_in = head.logits(stack_signals(in_batch))
    y_in = np.array([head.class_index(s.label) for s in in_batch])
    z_out = head.logits(stack_signals(out_batch)) if out_batch else np.zeros((0, head.k()))
    with torch.no_grad():
        loss = _rkl_terms(as_tensor(z_in), torch.as_tensor(y_in), as_tensor(z_out), alpha_in, omega_out)
    return float(loss)


def calibration_penalty(p_max: np.ndarray) -> np.ndarray:
    """
    -log(1 - p_max) with p_max clamped below one
    """
    return -np.log1p(-np.minimum(p_max, P_MAX_CLAMP))


def inner_loss_from_logits(
    z_in: torch.Tensor, y_in: np.ndarray, z_out: torch.Tensor, weights: FilterWeights
) -> torch.Tensor:
    """
    L_T + omega_out L_out + omega_cal aBCE + omega_rkl RKL on head logits
    """
    n_in, k = z_in.shape
    if n_in == 0:
        raise InvalidInput("The in-distribution batch is empty")
    y_in = torch.as_tensor(y_in)
    rows = torch.arange(n_in)
    log_alpha = _log_alpha(z_in)
    log_p = log_alpha - torch.logsumexp(log_alpha, dim=1, keepdim=True)

    # classification with the overconfidence regularizer
    loss = -log_p[rows, y_in].mean() - weights.lambda_t / k * torch.sigmoid(z_in).sum(dim=1).mean()

    # uniform predictions for OOD samples
    if z_out.shape[0] > 0 and weights.omega_out != 0:
        log_alpha_out = _log_alpha(z_out)
        log_p_out = log_alpha_out - torch.logsumexp(log_alpha_out, dim=1, keepdim=True)
        cross_entropy = -log_p_out.mean(dim=1).mean()
        regularizer = weights.lambda_out / k * torch.sigmoid(z_out).sum(dim=1).mean()
        loss = loss + weights.omega_out * (cross_entropy - regularizer)

    # confidence penalty on samples above the batch median entropy
    if weights.omega_cal != 0:
        p = torch.exp(log_p)
        entropy = -(p * log_p).sum(dim=1).detach()
        uncertain = entropy > torch.quantile(entropy, 0.5)
        p_max = p.max(dim=1).values[uncertain]
        penalty = -torch.log1p(-torch.clamp(p_max, max=P_MAX_CLAMP))
        loss = loss + weights.omega_cal * penalty.sum() / n_in

    if weights.omega_rkl != 0:
        rkl = _rkl_terms(z_in, y_in, z_out, weights.alpha_in, weights.omega_out)
        loss = loss + weights.omega_rkl * rkl
    return loss


def filter_loss(network: Network, batch: FilterBatch) -> torch.Tensor:
    x = np.concatenate([batch.x_in, batch.x_out]) if batch.n_out() else batch.x_in
    z = network(as_tensor(x))
    return inner_loss_from_logits(z[: batch.n_in()], batch.y_in, z[batch.n_in() :], batch.weights)


def combined_inner_loss(head: FilterHead, batch: FilterBatch) -> float:
    with torch.no_grad():
        return float(filter_loss(head.network, batch))


def make_batch(
    head: FilterHead,
    in_batch: list[Signal],
    out_batch: list[Signal],
    weights: FilterWeights,
) -> FilterBatch:
    x_in = stack_signals(in_batch)
    x_out = stack_signals(out_batch) if out_batch else np.zeros((0,) + x_in.shape[1:])
    y_in = np.array([head.class_index(s.label) for s in in_batch], dtype=int)
    return FilterBatch(x_in, y_in, x_out, weights)


def inner_step(head: FilterHead, batch: FilterBatch, lr: float) -> FilterHead:
    """
    theta' = theta - lr * grad L_all
    """
    network, _ = train_step(head.network, filter_loss, batch, lr)
    return head.with_network(network)


def make_ood_negatives(
    signals: list[Signal], n: int, rng: np.random.Generator
) -> list[Signal]:
    """
    Off-manifold training negatives: strong-perturbed cross-class splices and Gaussian noise
    """
    labeled = [s for s in signals if s.label is not None]
    labels = sorted({s.label for s in labeled})
    if len(labels) < 2:
        raise InvalidInput("Cross-class splices need two classes", context=labels)
    negatives = []
    for i in range(n):
        base = labeled[int(rng.integers(0, len(labeled)))]
        if i % 2 == 0:
            others = [s for s in labeled if s.label != base.label]
            other = others[int(rng.integers(0, len(others)))]
            cut = int(rng.integers(base.length() // 4, 3 * base.length() // 4))
            values = np.concatenate([base.values[:, :cut], other.values[:, cut:]], axis=1)
            spliced = Signal(values, base.sample_rate, None, base.condition, f"ood-splice-{i}")
            negatives.append(magnitude_warp(slice_shuffle(spliced, 8, rng), 4, 0.5, rng))
        else:
            scale = base.values.std(axis=1, keepdims=True)
            noise = rng.normal(0.0, 1.0, size=base.values.shape) * scale
            negatives.append(Signal(noise, base.sample_rate, None, base.condition, f"ood-noise-{i}"))
    return negatives


def train_filter(
    head: FilterHead,
    in_signals: list[Signal],
    out_signals: list[Signal],
    config: FilterConfig,
    rng: RandomGenerator,
    stream: MetricsStream | None = None,
) -> FilterHead:
    stream = stream or MetricsStream(stage="filter")
    weights = FilterWeights.from_config(config)
    for step in range(config.steps):
        step_rng = rng.child("filter", step).numpy()
        in_batch = class_balanced_batch(in_signals, config.batch_size, step_rng)
        out_batch = []
        if out_signals:
            picked = step_rng.choice(len(out_signals), size=max(config.batch_size // 2, 1))
            out_batch = [out_signals[int(i)] for i in picked]
        batch = make_batch(head, in_batch, out_batch, weights)
        network, loss = train_step(head.network, filter_loss, batch, config.lr)
        head = head.with_network(network)
        stream.emit(step, loss=loss)
    logger.info("Filter trained for %d steps", config.steps)
    return head


def task_embedding(features: np.ndarray) -> np.ndarray:
    """
    Per-dimension mean and standard deviation, concatenated
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    return np.concatenate([features.mean(axis=0), features.std(axis=0)])


def task_weights(embeddings: list[np.ndarray], temperature: float = 1.0) -> np.ndarray:
    """
    softmax over tasks of -||C_T|| / T, C the cosine similarity matrix and ||C_T|| its row norm
    """
    if temperature <= 0:
        raise InvalidParameter("Temperature must be positive", context=temperature)
    h = np.stack([np.asarray(e, dtype=float) for e in embeddings])
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0):
        raise DegenerateInput("Zero task embedding", context=int(np.argmin(norms)))
    unit = h / norms[:, None]
    similarity = unit @ unit.T
    row_norms = np.sqrt(np.sum(similarity**2, axis=1))
    return softmax(-row_norms / temperature)


def _task_moments(task: FeatureTask) -> tuple[np.ndarray, np.ndarray]:
    support = np.concatenate([v for v in task[0].values() if len(v) > 0])
    return support.mean(axis=0), np.maximum(support.var(axis=0), VAR_FLOOR)


def _support_embedding(task: FeatureTask) -> np.ndarray:
    return task_embedding(np.concatenate([v for v in task[0].values() if len(v) > 0]))


def outer_step(
    phi: NIWParams,
    tasks: list[FeatureTask],
    lr: float = 1e-2,
    lam: float = 0.1,
    temperature: float = 1.0,
) -> NIWParams:
    """
    Phi <- Phi - lr * sum_T delta_T grad[ L_task + lam * KL(task moments || prior spread) ]
    """
    if len(tasks) == 0:
        return phi
    d = phi.d()
    theta = torch.tensor(phi.to_theta(), dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.SGD([theta], lr=lr)
    delta = task_weights([_support_embedding(t) for t in tasks], temperature)
    loss = 0.0 * theta.sum()
    for weight, task in zip(delta, tasks):
        task_loss = niw_parameterization.episodic_nll(theta, d, [task])
        if lam != 0:
            mean, var = _task_moments(task)
            task_loss = task_loss + lam * niw_parameterization.task_alignment_kl(theta, d, mean, var)
        loss = loss + float(weight) * task_loss
    loss.backward()
    if not bool(torch.all(torch.isfinite(theta.grad))):
        raise NumericalFailure("Non-finite outer gradient")
    optimizer.step()
    return NIWParams.from_theta(theta.detach().numpy(), d).validate()


@dataclass(frozen=True)
class FilterThresholds:
    tau_ood: float = math.inf
    tau_c: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.tau_c <= 1.0:
            raise InvalidParameter("tau_c must be in [0, 1]", context=self.tau_c)


class Decision(Enum):
    KEEP = "keep"
    REJECT_OOD = "rejected_ood"
    REJECT_LOWCONF = "rejected_lowconf"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class OodScore:
    diff_entropy: np.ndarray
    p_max: np.ndarray


def ood_score(head: FilterHead, x) -> OodScore:
    """
    Differential entropy of Dir(alpha(x)) and the largest Dirichlet mean component
    """
    alpha = head.alpha(_signal_array(x))
    return OodScore(
        diff_entropy=np.atleast_1d(dirichlet_diff_entropy(alpha)),
        p_max=np.max(alpha / alpha.sum(axis=1, keepdims=True), axis=1),
    )


def selector_scores(alpha: np.ndarray, kind: str) -> np.ndarray:
    """
    OOD ranking score, higher means more anomalous
    """
    alpha = np.atleast_2d(alpha)
    p_max = np.max(alpha / alpha.sum(axis=1, keepdims=True), axis=1)
    if kind == "de":
        return np.atleast_1d(dirichlet_diff_entropy(alpha))
    if kind == "maxp":
        return 1.0 - p_max
    if kind == "mi":
        return np.atleast_1d(dirichlet_mutual_information(alpha))
    if kind == "joint":
        n = alpha.shape[0]
        de_rank = rankdata(np.atleast_1d(dirichlet_diff_entropy(alpha))) / n
        maxp_rank = rankdata(1.0 - p_max) / n
        return np.minimum(de_rank, maxp_rank)
    raise InvalidParameter(f"Selector must be one of {SELECTORS}", context=kind)


def ood_detection_report(
    head: FilterHead, in_signals: list[Signal], ood_signals: list[Signal]
) -> dict[str, float]:
    """
    AUROC of every selector with OOD samples as the positive class
    """
    alpha = head.alpha(stack_signals(in_signals + ood_signals))
    positives = np.r_[np.zeros(len(in_signals), dtype=bool), np.ones(len(ood_signals), dtype=bool)]
    return {kind: auroc(selector_scores(alpha, kind), positives) for kind in SELECTORS}


def reject(p_max: float, tau_c: float) -> Decision:
    return Decision.KEEP if p_max >= tau_c else Decision.REJECT_LOWCONF


@dataclass
class FilterResult:
    kept: list[Signal] = field(default_factory=list)
    rejected_ood: list[Signal] = field(default_factory=list)
    rejected_lowconf: list[Signal] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        return {
            "kept": len(self.kept),
            "rejected_ood": len(self.rejected_ood),
            "rejected_lowconf": len(self.rejected_lowconf),
        }

    def decisions_frame(self) -> pandas.DataFrame:
        return pandas.DataFrame(self.rows, columns=DECISION_COLUMNS)

    def export_decisions(self, path: Path | str):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.decisions_frame().to_csv(path, index=False, float_format="%.17g")


def filter_dataset(
    head: FilterHead, signals: list[Signal], thresholds: FilterThresholds
) -> FilterResult:
    """
    Drop samples with differential entropy above tau_ood, then survivors with p_max below tau_c
    """
    result = FilterResult()
    if len(signals) == 0:
        return result
    score = ood_score(head, stack_signals(signals))
    for i, s in enumerate(signals):
        if score.diff_entropy[i] > thresholds.tau_ood:
            decision = Decision.REJECT_OOD
            result.rejected_ood.append(s)
        else:
            decision = reject(float(score.p_max[i]), thresholds.tau_c)
            (result.kept if decision == Decision.KEEP else result.rejected_lowconf).append(s)
        result.rows.append(
            {
                "sample_id": s.source_id or str(i),
                "diff_entropy": float(score.diff_entropy[i]),
                "p_max": float(score.p_max[i]),
                "decision": str(decision),
            }
        )
    logger.info("Filtered %d samples: %s", len(signals), result.counts())
    return result


def ood_threshold(head: FilterHead, signals: list[Signal], percentile: float = 95.0) -> float:
    """
    Percentile of the in-distribution training differential entropy
    """
    return float(np.percentile(ood_score(head, stack_signals(signals)).diff_entropy, percentile))


def prefilter_task(
    head: FilterHead, episode: Episode, encoder: Network, thresholds: FilterThresholds
) -> FeatureTask:
    """
    Feature task whose query keeps only the samples the filter accepts
    """
    result = filter_dataset(head, episode.query, thresholds)
    kept = set(id(s) for s in result.kept)
    filtered = dataclasses.replace(episode, query=[s for s in episode.query if id(s) in kept])
    if len(filtered.query) == 0:
        features = encode_batch(encoder, stack_signals(episode.support))
        labels = [s.label for s in episode.support]
        return group_by_class(features, labels, episode.classes), {}
    return feature_task(filtered, encoder)


def domain_aware_prior(
    phi: NIWParams,
    signals: list[Signal],
    encoder: Network,
    head: FilterHead,
    thresholds: FilterThresholds,
    config: FilterConfig,
    rng: RandomGenerator,
    max_way: int | None = None,
    stream: MetricsStream | None = None,
    query_per_class: int | None = None,
) -> NIWParams:
    """
    Outer-loop refinement of the prior on filtered tasks, weighted by task similarity
    """
    stream = stream or MetricsStream(stage="outer")
    for step in range(config.outer_steps):
        tasks = []
        for i in range(TASKS_PER_OUTER_STEP):
            episode = sample_episode(
                signals,
                max_way,
                rng.child("outer", step, i).numpy(),
                query_per_class=query_per_class,
            )
            tasks.append(prefilter_task(head, episode, encoder, thresholds))
        phi = outer_step(phi, tasks, config.outer_lr, config.outer_lambda, config.task_temperature)
        loss, _ = niw_parameterization.episodic_nll_and_grad(phi.to_theta(), phi.d(), tasks)
        stream.emit(step, query_nll=loss)
    return phi


@dataclass(frozen=True)
class RejectionResult:
    # None when nothing was kept
    accuracy: float | None
    kept_fraction: float
    n_kept: int


def evaluate_rejection(
    model: EpisodeModel,
    episode: Episode,
    head: FilterHead,
    tau_c: float,
    confidence_source: str = "model",
) -> RejectionResult:
    """
    Accuracy on the query samples whose confidence passes tau_c

    The confidence is the diagnosis model's top class posterior, or the filter's
    p_max when ``confidence_source`` is "filter" or the model has no probabilities.
    """
    predictions = np.asarray(model.predict(episode))
    if confidence_source == "model" and hasattr(model, "predict_proba"):
        confidence = np.max(model.predict_proba(episode), axis=1)
    else:
        confidence = ood_score(head, stack_signals(episode.query)).p_max
    keep = np.array([reject(float(c), tau_c) == Decision.KEEP for c in confidence])
    n_kept = int(keep.sum())
    if n_kept == 0:
        return RejectionResult(None, 0.0, 0)
    accuracy = float(np.mean(predictions[keep] == episode.query_labels()[keep]))
    return RejectionResult(accuracy, n_kept / len(keep), n_kept)


def rejection_sweep(
    model: EpisodeModel,
    signals: list[Signal],
    head: FilterHead,
    taus: list[float],
    rng: RandomGenerator,
    max_way: int | None = None,
    n_tasks: int = 100,
    query_size: int = 50,
    confidence_source: str = "model",
) -> dict[str, dict]:
    """
    Mean filtered accuracy and kept fraction per threshold over the same episodes
    """
    episodes = [
        sample_episode(signals, max_way, rng.child("rejection", i).numpy(), query_size=query_size)
        for i in range(n_tasks)
    ]
    result = {}
    for tau in taus:
        runs = [evaluate_rejection(model, e, head, tau, confidence_source) for e in episodes]
        accuracies = [r.accuracy for r in runs if r.accuracy is not None]
        result[f"{tau:g}"] = {
            "accuracy": float(np.mean(accuracies)) if accuracies else None,
            "kept_fraction": float(np.mean([r.kept_fraction for r in runs])) if runs else 0.0,
        }
    return result


def pseudo_labeled(head: FilterHead, signals: list[Signal]) -> list[Signal]:
    if len(signals) == 0:
        return []
    predicted = np.argmax(head.alpha(stack_signals(signals)), axis=1)
    return [
        dataclasses.replace(s, label=head.classes[int(k)], source_id=s.source_id + "-pl")
        for s, k in zip(signals, predicted)
    ]


def calibrate_with_confident(
    kept: list[Signal],
    labeled: list[Signal],
    head: FilterHead,
    encoder: Network,
    metric: Network | None,
    config: SslConfig,
    iterations: int,
    rng: RandomGenerator,
    stream: MetricsStream | None = None,
) -> tuple[Network, Network | None]:
    """
    Further pseudo-label training on the labeled set plus the filter-labeled confident survivors
    """
    if iterations <= 0 or len(kept) == 0:
        return encoder, metric
    pool = labeled + pseudo_labeled(head, kept)
    logger.info("Calibrating with %d confident samples", len(kept))
    return run_pseudo_label_phase(
        pool,
        encoder,
        metric,
        dataclasses.replace(config, t_meta=iterations),
        rng.child("calibrate"),
        stream=stream,
    )


def validation_adequacy(head: FilterHead, signals: list[Signal], tau_c: float) -> dict:
    """
    Fraction of validation samples kept at tau_c and the filter's accuracy on them
    """
    if len(signals) == 0:
        raise InvalidInput("Empty validation set")
    alpha = head.alpha(stack_signals(signals))
    p = alpha / alpha.sum(axis=1, keepdims=True)
    keep = np.max(p, axis=1) >= tau_c
    labels = np.array([s.label for s in signals])
    predicted = np.array(head.classes)[np.argmax(p, axis=1)]
    accuracy = float(np.mean(predicted[keep] == labels[keep])) if np.any(keep) else None
    return {
        "kept_fraction": float(keep.mean()),
        "kept_accuracy": accuracy,
        "adequate": accuracy is not None and accuracy >= tau_c,
    }


import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import torch
from scipy.special import gammaln, logsumexp, softmax
from scipy.stats import invwishart, multivariate_normal
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis

import niw_parameterization
from encoder.feature_encoder import encode_batch
from encoder.network import Network
from metrics_stream import MetricsStream
from number_helper import all_finite, cholesky_jitter, log_det_from_cholesky
from signal_sample import stack_signals
from tasking import Episode
from ubmf_exceptions import (
    InvalidDof,
    InvalidInput,
    InvalidPrior,
    NumericalFailure,
    SingularCovariance,
    SingularScale,
    TrainingFailure,
)

logger = logging.getLogger(__name__)

MIN_EIGENVALUE = 1e-10
ENSEMBLE_SIZE = 32


@dataclass(frozen=True)
class NIWParams:
    """
    Normal-inverse-Wishart prior (eta, lambda, Psi, nu) over a class mean and covariance
    """

    eta: np.ndarray
    lam: float
    psi: np.ndarray
    nu: float

    def d(self) -> int:
        return int(self.eta.shape[0])

    def validate(self) -> "NIWParams":
        d = self.d()
        if self.psi.shape != (d, d):
            raise InvalidPrior("Psi shape does not match eta", context=self.psi.shape)
        if not all_finite(self.eta, self.psi, self.lam, self.nu):
            raise InvalidPrior("Non-finite prior parameters")
        if self.lam <= 0:
            raise InvalidPrior("lambda must be > 0", context=self.lam)
        if self.nu <= d - 1:
            raise InvalidPrior("nu must be > d - 1", context=(self.nu, d))
        if not np.allclose(self.psi, self.psi.T):
            raise InvalidPrior("Psi must be symmetric")
        try:
            cholesky_jitter(self.psi)
        except SingularScale as e:
            raise InvalidPrior("Psi must be positive definite", parent=e)
        return self

    def to_theta(self) -> np.ndarray:
        return niw_parameterization.pack(self.eta, self.lam, self.psi, self.nu)

    @staticmethod
    def from_theta(theta: np.ndarray, d: int) -> "NIWParams":
        eta, lam, psi, nu, _ = niw_parameterization.unpack(theta, d)
        return NIWParams(eta, lam, psi, nu)

    def to_dict(self) -> dict:
        return {
            "eta": self.eta.tolist(),
            "lambda": float(self.lam),
            "nu": float(self.nu),
            "psi_cholesky_lower": cholesky_jitter(self.psi).ravel().tolist(),
            "d": self.d(),
        }

    @staticmethod
    def from_dict(data: dict) -> "NIWParams":
        try:
            d = int(data["d"])
            chol = np.tril(np.asarray(data["psi_cholesky_lower"], dtype=float).reshape(d, d))
            params = NIWParams(
                eta=np.asarray(data["eta"], dtype=float),
                lam=float(data["lambda"]),
                psi=chol @ chol.T,
                nu=float(data["nu"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidPrior("Malformed prior document", parent=e)
        return params.validate()

    def __str__(self):
        return f"NIW(d={self.d()}, lambda={self.lam:.4g}, nu={self.nu:.4g})"


def default_prior(d: int, lam: float = 1.0, psi_scale: float = 1.0) -> NIWParams:
    """
    eta = 0, lambda = 1, Psi = I, nu = d
    """
    return NIWParams(np.zeros(d), float(lam), psi_scale * np.eye(d), float(d)).validate()


@dataclass(frozen=True)
class StudentTParams:
    loc: np.ndarray
    scale: np.ndarray
    dof: float


@dataclass(frozen=True)
class GaussianClassParams:
    mu: np.ndarray
    sigma: np.ndarray
    prior_weight: float
    class_id: int = 0


def _as_features(data, d: int | None = None) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.size == 0:
        return np.zeros((0, d if d is not None else 0))
    x = x.reshape(-1, d if d is not None else x.shape[-1])
    if not all_finite(x):
        raise InvalidInput("Features must be finite")
    return x


def _check_covariance(sigma: np.ndarray, class_id) -> np.ndarray:
    eigenvalues = np.linalg.eigvalsh(sigma)
    if eigenvalues[0] < MIN_EIGENVALUE:
        raise SingularCovariance(context=(class_id, float(eigenvalues[0])))
    return sigma


def qda_fit_mle(
    features: dict[int, np.ndarray], shrinkage: float = 0.0
) -> list[GaussianClassParams]:
    """
    Per-class sample mean, biased covariance and empirical class weight

    ``shrinkage`` s blends each covariance toward trace(Sigma_pooled)/d * I;
    with s = 0 fewer than two samples or a flat direction is an error.
    """
    if len(features) == 0:
        raise InvalidInput("No classes to fit")
    data = {c: _as_features(x) for c, x in sorted(features.items())}
    total = sum(x.shape[0] for x in data.values())
    target = None
    if shrinkage > 0:
        pooled = np.concatenate([x - x.mean(axis=0) for x in data.values() if x.shape[0] > 0])
        d = pooled.shape[1]
        level = float(np.trace(pooled.T @ pooled) / max(pooled.shape[0], 1) / d)
        target = (level if level > 0 else 1.0) * np.eye(d)
    result = []
    for c, x in data.items():
        n = x.shape[0]
        if n == 0 or (n < 2 and shrinkage <= 0):
            raise SingularCovariance("Not enough samples for a covariance", context=(c, n))
        mu = x.mean(axis=0)
        centered = x - mu
        sigma = centered.T @ centered / n
        if target is not None:
            sigma = (1.0 - shrinkage) * sigma + shrinkage * target
        result.append(GaussianClassParams(mu, _check_covariance(sigma, c), n / total, int(c)))
    return result


def qda_discriminants(
    x: np.ndarray, classes: list[GaussianClassParams], textbook: bool = False
) -> np.ndarray:
    """
    -1/2 (x - mu)^T Sigma^-1 (x - mu) + ln pi, plus -1/2 ln|Sigma| when ``textbook``

    Rows of a 2-D ``x`` give one discriminant row each.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    scores = np.empty((x.shape[0], len(classes)))
    for k, params in enumerate(classes):
        try:
            chol = scipy.linalg.cholesky(params.sigma, lower=True)
        except scipy.linalg.LinAlgError as e:
            raise SingularCovariance(context=params.class_id, parent=e)
        white = scipy.linalg.solve_triangular(chol, (x - params.mu).T, lower=True)
        scores[:, k] = -0.5 * np.sum(white**2, axis=0) + math.log(params.prior_weight)
        if textbook:
            scores[:, k] -= 0.5 * log_det_from_cholesky(chol)
    return scores


def qda_decide(x: np.ndarray, classes: list[GaussianClassParams], textbook: bool = False):
    scores = qda_discriminants(x, classes, textbook)
    ids = np.array([c.class_id for c in classes])
    decided = ids[np.argmax(scores, axis=1)]
    return int(decided[0]) if np.ndim(x) == 1 else decided


def niw_update(prior: NIWParams, data) -> NIWParams:
    d = prior.d()
    x = _as_features(data, d)
    n = x.shape[0]
    if n == 0:
        return prior
    mean = x.mean(axis=0)
    centered = x - mean
    delta = mean - prior.eta
    lam_k = prior.lam + n
    psi_k = prior.psi + centered.T @ centered + (prior.lam * n / lam_k) * np.outer(delta, delta)
    return NIWParams(
        eta=(prior.lam * prior.eta + n * mean) / lam_k,
        lam=lam_k,
        psi=0.5 * (psi_k + psi_k.T),
        nu=prior.nu + n,
    )


def posterior_predictive(p: NIWParams, d: int | None = None) -> StudentTParams:
    d = p.d() if d is None else d
    dof = p.nu - d + 1
    if dof <= 0:
        raise InvalidDof(context=dof)
    return StudentTParams(
        loc=p.eta.copy(),
        scale=(p.lam + 1.0) / (p.lam * dof) * p.psi,
        dof=float(dof),
    )


def t_logpdf(x: np.ndarray, t: StudentTParams) -> float | np.ndarray:
    """
    Multivariate t log-density; rows of a 2-D ``x`` give one value each
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d = t.loc.shape[0]
    chol = cholesky_jitter(t.scale)
    white = scipy.linalg.solve_triangular(chol, (x - t.loc).T, lower=True)
    maha = np.sum(white**2, axis=0)
    v = t.dof
    value = (
        gammaln((v + d) / 2.0)
        - gammaln(v / 2.0)
        - d / 2.0 * np.log(v * np.pi)
        - 0.5 * log_det_from_cholesky(chol)
        - (v + d) / 2.0 * np.log1p(maha / v)
    )
    return float(value[0]) if single else value


def class_posterior(
    x: np.ndarray, per_class: list[StudentTParams], log_weights: np.ndarray | None = None
) -> np.ndarray:
    """
    T_k(x) / sum_i T_i(x) in the log domain; rows of a 2-D ``x`` give one vector each
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    logs = np.stack([np.atleast_1d(t_logpdf(x, t)) for t in per_class], axis=1)
    if log_weights is not None:
        logs = logs + np.asarray(log_weights, dtype=float)
    if not np.all(np.any(np.isfinite(logs), axis=1)):
        raise NumericalFailure("Every class density underflowed", context=x.shape)
    probabilities = np.exp(logs - logsumexp(logs, axis=1, keepdims=True))
    return probabilities[0] if single else probabilities


def class_predictives(
    phi: NIWParams, support: dict[int, np.ndarray], classes: list[int] | None = None
) -> list[StudentTParams]:
    classes = sorted(support) if classes is None else classes
    return [posterior_predictive(niw_update(phi, support.get(c, ()))) for c in classes]


def log_likelihood(
    phi: NIWParams,
    query: dict[int, np.ndarray],
    support: dict[int, np.ndarray] | None = None,
) -> float:
    """
    Sum of predictive log-densities of each class's query samples, the predictive
    of class k being the prior conditioned on that class's support samples
    (the prior predictive when ``support`` is None)
    """
    phi.validate()
    support = {} if support is None else support
    total = 0.0
    for c, points in sorted(query.items()):
        points = _as_features(points, phi.d())
        if points.shape[0] == 0:
            continue
        t = posterior_predictive(niw_update(phi, support.get(c, ())))
        total += float(np.sum(t_logpdf(points, t)))
    return total


FeatureTask = tuple[dict[int, np.ndarray], dict[int, np.ndarray]]


def meta_fit_prior(
    tasks: list[FeatureTask],
    phi0: NIWParams,
    lr: float = 1e-2,
    iterations: int = 500,
    stream: MetricsStream | None = None,
) -> NIWParams:
    """
    Gradient descent on the mean query negative log-likelihood in the unconstrained
    coordinates of the prior, one task per iteration, cycling through ``tasks``

    :raises TrainingFailure: on a non-finite loss; carries the last good prior
    """
    phi0.validate()
    if len(tasks) == 0 or iterations <= 0:
        return phi0
    d = phi0.d()
    theta = torch.tensor(phi0.to_theta(), dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.SGD([theta], lr=lr)
    last_good = phi0
    for iteration in range(iterations):
        task = tasks[iteration % len(tasks)]
        optimizer.zero_grad()
        try:
            loss = niw_parameterization.episodic_nll(theta, d, [task])
        except SingularScale as e:
            raise TrainingFailure(context=iteration, parent=e, last_good=last_good)
        loss.backward()
        value = float(loss.detach())
        if not all_finite(value, theta.grad.numpy()):
            raise TrainingFailure(context=iteration, last_good=last_good)
        last_good = NIWParams.from_theta(theta.detach().numpy(), d)
        optimizer.step()
        if stream is not None:
            stream.emit(iteration, query_nll=value)
        if iteration % 100 == 0:
            logger.debug("Prior iteration %d: query NLL %.6f", iteration, value)
    phi = NIWParams.from_theta(theta.detach().numpy(), d)
    if not all_finite(phi.eta, phi.psi, phi.lam, phi.nu):
        raise TrainingFailure("Prior diverged", last_good=last_good)
    logger.info("Meta-fitted prior %s over %d iterations", phi, iterations)
    return phi.validate()


def episode_features(episode: Episode, encoder: Network) -> tuple[np.ndarray, np.ndarray]:
    return (
        encode_batch(encoder, stack_signals(episode.support)),
        encode_batch(encoder, stack_signals(episode.query)),
    )


def group_by_class(features: np.ndarray, labels, classes: list[int]) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {c: features[labels == c] for c in classes}


def feature_task(episode: Episode, encoder: Network) -> FeatureTask:
    support, query = episode_features(episode, encoder)
    support_labels = np.array([s.label for s in episode.support])
    return (
        group_by_class(support, support_labels, episode.classes),
        group_by_class(query, episode.query_labels(), episode.classes),
    )


def lda_fit(features: dict[int, np.ndarray]) -> LinearDiscriminantAnalysis:
    """
    Shrinkage LDA with one pooled covariance
    """
    x = np.concatenate([_as_features(v) for _, v in sorted(features.items())])
    y = np.concatenate([np.full(len(v), c) for c, v in sorted(features.items())])
    model = LinearDiscriminantAnalysis(solver="lsqr", shrinkage="auto")
    return model.fit(x, y)


def lda_decide(model: LinearDiscriminantAnalysis, x: np.ndarray):
    decided = model.predict(np.atleast_2d(np.asarray(x, dtype=float)))
    return int(decided[0]) if np.ndim(x) == 1 else decided


def ensemble_predictive(
    phi: NIWParams,
    support: dict[int, np.ndarray],
    x: np.ndarray,
    rng: np.random.Generator,
    samples: int = ENSEMBLE_SIZE,
) -> np.ndarray:
    """
    Class probabilities under ``samples`` joint draws of (mu_k, Sigma_k) from the
    class posteriors; [samples x n x K] for the total/aleatoric/epistemic split
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    classes = sorted(support)
    posteriors = [niw_update(phi, support[c]) for c in classes]
    members = np.empty((samples, x.shape[0], len(classes)))
    for s in range(samples):
        logs = np.empty((x.shape[0], len(classes)))
        for k, post in enumerate(posteriors):
            sigma = np.atleast_2d(invwishart.rvs(df=post.nu, scale=post.psi, random_state=rng))
            mu = rng.multivariate_normal(post.eta, sigma / post.lam)
            logs[:, k] = multivariate_normal.logpdf(x, mean=mu, cov=sigma, allow_singular=True)
        members[s] = softmax(logs, axis=1)
    return members


class BayesQdaModel:
    """
    Episode classifier: class predictives from the meta-learned prior conditioned on the support
    """

    def __init__(self, encoder: Network, phi: NIWParams):
        self.encoder = encoder
        self.phi = phi

    def predict_proba(self, episode: Episode) -> np.ndarray:
        support, query = episode_features(episode, self.encoder)
        labels = np.array([s.label for s in episode.support])
        per_class = class_predictives(self.phi, group_by_class(support, labels, episode.classes))
        return class_posterior(query, per_class)

    def predict(self, episode: Episode) -> np.ndarray:
        return np.array(episode.classes)[np.argmax(self.predict_proba(episode), axis=1)]


class QdaMleModel:
    def __init__(self, encoder: Network, shrinkage: float = 0.0, textbook: bool = False):
        self.encoder = encoder
        self.shrinkage = shrinkage
        self.textbook = textbook

    def predict(self, episode: Episode) -> np.ndarray:
        support, query = episode_features(episode, self.encoder)
        labels = np.array([s.label for s in episode.support])
        fitted = qda_fit_mle(group_by_class(support, labels, episode.classes), self.shrinkage)
        return qda_decide(query, fitted, self.textbook)


class LdaModel:
    def __init__(self, encoder: Network):
        self.encoder = encoder

    def predict(self, episode: Episode) -> np.ndarray:
        support, query = episode_features(episode, self.encoder)
        labels = np.array([s.label for s in episode.support])
        if len(labels) <= len(episode.classes):
            # one shot everywhere: a pooled covariance is undefined, fall back to nearest mean
            centers = np.stack([support[labels == c].mean(axis=0) for c in episode.classes])
            distances = np.linalg.norm(query[:, None, :] - centers[None, :, :], axis=2)
            return np.array(episode.classes)[np.argmin(distances, axis=1)]
        return lda_decide(lda_fit(group_by_class(support, labels, episode.classes)), query)

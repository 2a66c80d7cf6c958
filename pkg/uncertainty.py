from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, xlogy

from ubmf_exceptions import InvalidInput, InvalidParameter

SIMPLEX_TOLERANCE = 1e-9
KL_FLOOR = 1e-12


@dataclass(frozen=True)
class PredictiveDecomposition:
    total: float
    aleatoric: float
    epistemic: float

    def to_dict(self) -> dict:
        return {"total": self.total, "aleatoric": self.aleatoric, "epistemic": self.epistemic}


def check_simplex(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.size == 0 or not np.all(np.isfinite(p)):
        raise InvalidInput("Probability vector must be finite and non-empty", context=p)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOLERANCE):
        raise InvalidInput("Not a probability vector", context=p)
    return p


def check_concentration(alpha: np.ndarray) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size == 0 or not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise InvalidParameter("Concentrations must be finite and positive", context=alpha)
    return alpha


def shannon_entropy(p: np.ndarray) -> float | np.ndarray:
    """
    -sum p ln p with 0 ln 0 = 0; rows of a 2-D input give one entropy each
    """
    p = check_simplex(p)
    h = -np.sum(xlogy(p, p), axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def decompose_predictive(ensemble: np.ndarray | list) -> PredictiveDecomposition:
    """
    total = H(mean member), aleatoric = mean H(member), epistemic = total - aleatoric
    """
    ensemble = np.asarray(ensemble, dtype=float)
    if ensemble.ndim != 2 or ensemble.shape[0] == 0:
        raise InvalidInput("Ensemble must be a non-empty [M x K] array", context=ensemble.shape)
    check_simplex(ensemble)
    total = shannon_entropy(ensemble.mean(axis=0))
    aleatoric = float(np.mean(shannon_entropy(ensemble)))
    return PredictiveDecomposition(total, aleatoric, total - aleatoric)


def kl_categorical(p: np.ndarray, q: np.ndarray) -> float:
    p = check_simplex(p)
    q = check_simplex(q)
    return float(np.sum(xlogy(p, p) - xlogy(p, np.maximum(q, KL_FLOOR))))


def expected_kl(ensemble: np.ndarray | list) -> float:
    """
    E_theta[ KL(mean member || member) ], the mutual information of the ensemble
    """
    ensemble = np.asarray(ensemble, dtype=float)
    if ensemble.ndim != 2 or ensemble.shape[0] == 0:
        raise InvalidInput("Ensemble must be a non-empty [M x K] array", context=ensemble.shape)
    mean = ensemble.mean(axis=0)
    return float(np.mean([kl_categorical(mean, member) for member in ensemble]))


def dirichlet_logpdf(mu: np.ndarray, alpha: np.ndarray) -> float:
    """
    ln Gamma(alpha0) - sum ln Gamma(alpha_k) + sum (alpha_k - 1) ln mu_k

    A zero mu_k with alpha_k != 1 returns the -inf sentinel.
    """
    alpha = check_concentration(alpha)
    mu = check_simplex(mu)
    if np.any((mu == 0) & (alpha != 1.0)):
        return -np.inf
    terms = np.where(alpha == 1.0, 0.0, (alpha - 1.0) * np.log(np.where(mu > 0, mu, 1.0)))
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + terms.sum())


def dirichlet_log_beta(alpha: np.ndarray) -> np.ndarray:
    return gammaln(alpha).sum(axis=-1) - gammaln(alpha.sum(axis=-1))


def dirichlet_diff_entropy(alpha: np.ndarray) -> float | np.ndarray:
    """
    ln B(alpha) + (alpha0 - K) psi(alpha0) - sum (alpha_k - 1) psi(alpha_k); rows give one value each
    """
    alpha = check_concentration(alpha)
    k = alpha.shape[-1]
    alpha0 = alpha.sum(axis=-1)
    h = (
        dirichlet_log_beta(alpha)
        + (alpha0 - k) * digamma(alpha0)
        - np.sum((alpha - 1.0) * digamma(alpha), axis=-1)
    )
    return float(h) if np.ndim(h) == 0 else h


def dirichlet_kl(alpha_p: np.ndarray, alpha_q: np.ndarray) -> float | np.ndarray:
    """
    KL(Dir(alpha_p) || Dir(alpha_q)) in closed form; rows give one value each
    """
    alpha_p = check_concentration(alpha_p)
    alpha_q = check_concentration(alpha_q)
    p0 = alpha_p.sum(axis=-1, keepdims=True)
    kl = (
        gammaln(p0[..., 0])
        - gammaln(alpha_p).sum(axis=-1)
        - gammaln(alpha_q.sum(axis=-1))
        + gammaln(alpha_q).sum(axis=-1)
        + np.sum((alpha_p - alpha_q) * (digamma(alpha_p) - digamma(p0)), axis=-1)
    )
    kl = np.maximum(kl, 0.0)
    return float(kl) if np.ndim(kl) == 0 else kl


def dirichlet_mean(alpha: np.ndarray) -> np.ndarray:
    alpha = check_concentration(alpha)
    return alpha / alpha.sum(axis=-1, keepdims=True)


def dirichlet_mutual_information(alpha: np.ndarray) -> float | np.ndarray:
    """
    Distributional uncertainty -sum mu_k (ln mu_k - psi(alpha_k + 1) + psi(alpha0 + 1))
    """
    alpha = check_concentration(alpha)
    alpha0 = alpha.sum(axis=-1, keepdims=True)
    mu = alpha / alpha0
    mi = -np.sum(mu * (np.log(mu) - digamma(alpha + 1.0) + digamma(alpha0 + 1.0)), axis=-1)
    return float(mi) if np.ndim(mi) == 0 else mi

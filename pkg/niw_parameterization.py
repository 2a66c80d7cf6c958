"""
Unconstrained coordinates of the NIW meta-prior and the differentiable episodic
query log-likelihood

theta = [eta (d), a, b, tril(L) (d(d+1)/2)] with
lambda = softplus(a), nu = d - 1 + softplus(b), Psi = L L^T and diag(L) = softplus(raw diag).
"""

import math
from typing import Callable

import numpy as np
import torch
from torch.nn.functional import softplus as softplus_tensor

from number_helper import CHOLESKY_JITTER, cholesky_jitter, softplus, softplus_inverse
from ubmf_exceptions import InvalidParameter, SingularScale


def theta_size(d: int) -> int:
    return d + 2 + d * (d + 1) // 2


def pack(eta: np.ndarray, lam: float, psi: np.ndarray, nu: float) -> np.ndarray:
    d = eta.shape[0]
    chol = cholesky_jitter(psi)
    raw = chol.copy()
    raw[np.diag_indices(d)] = softplus_inverse(np.diag(chol))
    return np.concatenate(
        [
            np.asarray(eta, dtype=float),
            [float(softplus_inverse(lam)), float(softplus_inverse(nu - (d - 1)))],
            raw[np.tril_indices(d)],
        ]
    )


def unpack(theta: np.ndarray, d: int) -> tuple[np.ndarray, float, np.ndarray, float, np.ndarray]:
    """
    :return: (eta, lambda, Psi, nu, L)
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (theta_size(d),):
        raise InvalidParameter("Parameter vector size mismatch", context=(theta.shape, d))
    eta = theta[:d].copy()
    lam = float(softplus(theta[d]))
    nu = float(d - 1 + softplus(theta[d + 1]))
    chol = np.zeros((d, d))
    chol[np.tril_indices(d)] = theta[d + 2 :]
    chol[np.diag_indices(d)] = softplus(np.diag(chol))
    return eta, lam, chol @ chol.T, nu, chol


def unpack_tensor(
    theta: torch.Tensor, d: int
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Differentiable (eta, lambda, Psi, nu)
    """
    if tuple(theta.shape) != (theta_size(d),):
        raise InvalidParameter("Parameter vector size mismatch", context=(tuple(theta.shape), d))
    rows, cols = torch.tril_indices(d, d)
    raw = torch.zeros((d, d), dtype=theta.dtype).index_put((rows, cols), theta[d + 2 :])
    chol = torch.tril(raw, diagonal=-1) + torch.diag(softplus_tensor(torch.diagonal(raw)))
    lam = softplus_tensor(theta[d])
    nu = d - 1 + softplus_tensor(theta[d + 1])
    return theta[:d], lam, chol @ chol.T, nu


def _cholesky(matrix: torch.Tensor) -> torch.Tensor:
    chol, info = torch.linalg.cholesky_ex(matrix)
    if int(info) == 0:
        return chol
    eye = torch.eye(matrix.shape[0], dtype=matrix.dtype)
    chol, info = torch.linalg.cholesky_ex(matrix + CHOLESKY_JITTER * eye)
    if int(info) != 0:
        raise SingularScale(context=f"shape={tuple(matrix.shape)}")
    return chol


def class_query_loglik(
    eta: torch.Tensor,
    lam: torch.Tensor,
    psi: torch.Tensor,
    nu: torch.Tensor,
    support: np.ndarray,
    query: np.ndarray,
) -> torch.Tensor:
    """
    Sum of Student-t predictive log-densities of ``query`` after conditioning on ``support``
    """
    d = eta.shape[0]
    support = torch.as_tensor(np.asarray(support, dtype=float).reshape(-1, d))
    query = torch.as_tensor(np.asarray(query, dtype=float).reshape(-1, d))
    n = support.shape[0]
    lam_k = lam + n
    if n > 0:
        mean = support.mean(dim=0)
        centered = support - mean
        delta = mean - eta
        psi_k = psi + centered.T @ centered + (lam * n / lam_k) * torch.outer(delta, delta)
        loc = (lam * eta + n * mean) / lam_k
    else:
        psi_k = psi
        loc = eta
    v = nu + n - d + 1
    c = (lam_k + 1.0) / (lam_k * v)

    chol = _cholesky(psi_k)
    residual = query - loc
    solved = torch.cholesky_solve(residual.T, chol).T
    q = (residual * solved).sum(dim=1) / c
    m = query.shape[0]
    log_det = d * torch.log(c) + 2.0 * torch.log(torch.diagonal(chol)).sum()
    return m * (
        torch.lgamma((v + d) / 2.0)
        - torch.lgamma(v / 2.0)
        - d / 2.0 * torch.log(v * math.pi)
        - 0.5 * log_det
    ) - torch.sum((v + d) / 2.0 * torch.log1p(q / v))


def episodic_nll(theta: torch.Tensor, d: int, tasks: list[tuple[dict, dict]]) -> torch.Tensor:
    """
    Mean negative query log-likelihood per query point over ``tasks``

    Each task is (support, query), both mapping class id -> [n x d] features;
    every query class must appear in the support mapping (it may be empty there).
    """
    eta, lam, psi, nu = unpack_tensor(theta, d)
    total = 0.0 * theta.sum()
    count = 0
    for support, query in tasks:
        for c, points in query.items():
            points = np.asarray(points, dtype=float).reshape(-1, d)
            if points.shape[0] == 0:
                continue
            total = total + class_query_loglik(
                eta, lam, psi, nu, support.get(c, np.zeros((0, d))), points
            )
            count += points.shape[0]
    if count == 0:
        return total
    return -total / count


def task_alignment_kl(
    theta: torch.Tensor, d: int, task_mean: np.ndarray, task_var: np.ndarray
) -> torch.Tensor:
    """
    KL( N(task_mean, diag task_var) || N(eta, diag(c0 Psi_jj)) ) with c0 = (lambda+1)/(lambda (nu-d+1))

    The global Gaussian is the marginal prior predictive spread, owned by the NIW parameters.
    """
    eta, lam, psi, nu = unpack_tensor(theta, d)
    c0 = (lam + 1.0) / (lam * (nu - d + 1.0))
    var_q = c0 * torch.diagonal(psi)
    mean_p = torch.as_tensor(np.asarray(task_mean, dtype=float))
    var_p = torch.as_tensor(np.asarray(task_var, dtype=float))
    return torch.sum(
        0.5 * torch.log(var_q / var_p) + (var_p + (mean_p - eta) ** 2) / (2.0 * var_q) - 0.5
    )


def value_and_grad(
    fn: Callable[[torch.Tensor], torch.Tensor], theta: np.ndarray
) -> tuple[float, np.ndarray]:
    vector = torch.tensor(np.asarray(theta, dtype=float), dtype=torch.float64, requires_grad=True)
    loss = fn(vector)
    (grad,) = torch.autograd.grad(loss, vector)
    return float(loss.detach()), grad.numpy()


def episodic_nll_and_grad(
    theta: np.ndarray, d: int, tasks: list[tuple[dict, dict]]
) -> tuple[float, np.ndarray]:
    return value_and_grad(lambda vector: episodic_nll(vector, d, tasks), theta)


def task_alignment_kl_and_grad(
    theta: np.ndarray, d: int, task_mean: np.ndarray, task_var: np.ndarray
) -> tuple[float, np.ndarray]:
    return value_and_grad(lambda vector: task_alignment_kl(vector, d, task_mean, task_var), theta)

import numpy as np
import scipy.linalg

from ubmf_exceptions import SingularScale

number_precision_decimals = 12

CHOLESKY_JITTER = 1e-8


def number_fix(value: float | None, decimals: int | None = None) -> float | None:
    if value is None:
        return None
    return round(float(value), number_precision_decimals if decimals is None else decimals)


def all_finite(*arrays) -> bool:
    return all(bool(np.all(np.isfinite(np.asarray(a, dtype=float)))) for a in arrays)


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    """
    Inverse of softplus for y > 0
    """
    y = np.asarray(y, dtype=float)
    # log(exp(y) - 1) without overflow for large y
    return y + np.log(-np.expm1(-y))


def cholesky_jitter(matrix: np.ndarray, jitter: float = CHOLESKY_JITTER) -> np.ndarray:
    """
    Lower Cholesky factor, retried once with jitter * I on failure

    :raises SingularScale: when the jittered matrix is still not positive definite
    """
    matrix = np.asarray(matrix, dtype=float)
    try:
        return scipy.linalg.cholesky(matrix, lower=True)
    except scipy.linalg.LinAlgError:
        pass
    try:
        return scipy.linalg.cholesky(
            matrix + jitter * np.eye(matrix.shape[0]), lower=True
        )
    except scipy.linalg.LinAlgError as e:
        raise SingularScale(context=f"shape={matrix.shape}", parent=e)


def log_det_from_cholesky(chol: np.ndarray) -> float:
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

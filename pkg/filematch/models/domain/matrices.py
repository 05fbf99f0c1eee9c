"""Small helpers shared by the domain value objects."""
from typing import Optional, Tuple

import numpy as np
from numpy.linalg import LinAlgError
from numpy.typing import ArrayLike
from scipy.linalg import cho_factor

from filematch.core.exceptions import DimensionMismatchError, SingularCovarianceError

SYMMETRY_RTOL = 1e-10
SINGULAR_RTOL = 1e-14


def frozen(
    values: ArrayLike,
    shape: Optional[Tuple[int, ...]] = None,
    name: str = "matrix",
) -> np.ndarray:
    """
    Copies ``values`` into a read-only float array.

    Scalars are accepted where a 1 x 1 matrix is expected.

    Raises:
        DimensionMismatchError: If ``shape`` is given and does not match.
    """
    array = np.array(values, dtype=float)
    if shape is not None and array.size == 1 and len(shape) == 2 and shape == (1, 1):
        array = array.reshape(1, 1)
    if shape is not None and array.shape != shape:
        raise DimensionMismatchError(f"{name} has shape {array.shape}, expected {shape}.")
    array.setflags(write=False)
    return array


def exact_symmetric(matrix: np.ndarray) -> np.ndarray:
    """Mirrors the upper triangle so the result is bit-for-bit symmetric."""
    return np.triu(matrix) + np.triu(matrix, 1).T


def is_symmetric(matrix: np.ndarray, rtol: float = SYMMETRY_RTOL) -> bool:
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    scale = max(float(np.max(np.abs(matrix), initial=0.0)), 1.0)
    return bool(np.max(np.abs(matrix - matrix.T), initial=0.0) <= rtol * scale)


def symmetric_block(values: ArrayLike, size: int, name: str) -> np.ndarray:
    """Validates a square symmetric block and returns an exactly symmetric copy."""
    array = np.array(frozen(values, (size, size), name))
    if not is_symmetric(array):
        raise DimensionMismatchError(f"{name} is not symmetric.")
    return frozen(exact_symmetric(array), name=name)


def cholesky(matrix: np.ndarray, name: str = "covariance") -> Tuple[np.ndarray, bool]:
    """
    Lower Cholesky factor in the form accepted by ``scipy.linalg.cho_solve``.

    Raises:
        SingularCovarianceError: If the matrix is not numerically positive definite.
    """
    try:
        factor = cho_factor(matrix, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise SingularCovarianceError(f"{name} is not positive definite.") from exc
    pivots = np.diag(factor[0])
    if pivots.min() ** 2 <= SINGULAR_RTOL * pivots.max() ** 2:
        raise SingularCovarianceError(f"{name} is numerically singular.")
    return factor


def log_determinant(factor: Tuple[np.ndarray, bool]) -> float:
    """log|A| from the factor returned by :func:`cholesky`."""
    return float(2.0 * np.sum(np.log(np.diag(factor[0]))))

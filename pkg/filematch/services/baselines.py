"""Reference estimators of the unobserved YZ covariance block.

* conditional independence of Y and Z given X;
* membership in the identified set (positive definiteness of the assembled matrix);
* low-rank completion of the stacked data matrix, by alternating least squares,
  Soft-Impute (nuclear-norm shrinkage) or hard rank-q SVD imputation, followed by the
  sample cross-covariance of the completed columns.

The stacked data matrix D has the n_A rows of dataset A on top of the n_B rows of
dataset B and columns ordered (X, Y, Z); Z is missing in the A rows and Y in the B rows.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg
from scipy.linalg import cho_solve

from filematch.core.config import settings
from filematch.core.exceptions import (
    DimensionMismatchError,
    InvalidArgumentError,
    NonFiniteError,
    SingularSubproblemError,
)
from filematch.core.rng import stream
from filematch.models.domain.covariance import PartialCovariance
from filematch.models.domain.matrices import cholesky
from filematch.models.domain.partition import PartitionSpec

log = logging.getLogger(__name__)

FILL_PATTERN = ("Z_A", "Y_B")


class ImputedDataset:
    """
    Completed data matrix.

    Attributes:
        d_hat: n x p matrix; observed entries are the source values, the Z_A and Y_B
            blocks hold the low-rank reconstruction.
        low_rank: n x p reconstruction from which the missing blocks were taken.
        mask: Boolean n x p matrix of observed entries.
        n_a: Number of rows coming from dataset A.
        partition: Variable partition.
        method_tag: Name of the completion method.
        objective_trace: Objective values recorded by the solver.
        fill_pattern: Names of the imputed blocks.
        lambda_: Regularisation level of Soft-Impute (None for the other methods).
    """

    def __init__(
        self,
        d_hat: np.ndarray,
        low_rank: np.ndarray,
        mask: np.ndarray,
        n_a: int,
        partition: PartitionSpec,
        method_tag: str,
        objective_trace: Sequence[float] = (),
        lambda_: Optional[float] = None,
    ) -> None:
        self.d_hat = d_hat
        self.low_rank = low_rank
        self.mask = mask
        self.n_a = n_a
        self.partition = partition
        self.method_tag = method_tag
        self.objective_trace = tuple(float(v) for v in objective_trace)
        self.fill_pattern = FILL_PATTERN
        self.lambda_ = lambda_

    @property
    def n(self) -> int:
        return int(self.d_hat.shape[0])

    def observed_residual(self) -> float:
        """Half the squared error of the reconstruction on the observed entries."""
        diff = np.where(self.mask, self.d_hat - self.low_rank, 0.0)
        return 0.5 * float(np.sum(diff ** 2))

    def __repr__(self) -> str:
        return f"ImputedDataset(method={self.method_tag!r}, n={self.n}, {self.partition!r})"


def cia_estimate(partial: PartialCovariance) -> np.ndarray:
    """
    Sigma_YX Sigma_XX^{-1} Sigma_XZ.

    Raises:
        SingularCovarianceError: If Sigma_XX is not positive definite.
    """
    factor = cholesky(partial.xx, "Sigma_XX")
    return partial.xy.T @ cho_solve(factor, partial.xz)


def in_identified_set(partial: PartialCovariance, yz: ArrayLike, tol: float = 0.0) -> bool:
    """True when the covariance assembled with ``yz`` has smallest eigenvalue > tol."""
    full = partial.assemble_full(yz)
    return bool(linalg.eigvalsh(full)[0] > tol)


def stack_pair(
    data_a: ArrayLike, data_b: ArrayLike, partition: PartitionSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stacks the two files into the n x p matrix D (zeros in the missing blocks).

    Returns:
        D and the boolean mask of observed entries.
    """
    data_a = np.asarray(data_a, dtype=float)
    data_b = np.asarray(data_b, dtype=float)
    if data_a.ndim != 2 or data_a.shape[1] != partition.p_a:
        raise DimensionMismatchError(f"data_a must have {partition.p_a} columns.")
    if data_b.ndim != 2 or data_b.shape[1] != partition.p_b:
        raise DimensionMismatchError(f"data_b must have {partition.p_b} columns.")
    n_a, n_b = data_a.shape[0], data_b.shape[0]
    D = np.zeros((n_a + n_b, partition.p))
    mask = np.zeros_like(D, dtype=bool)
    D[:n_a, : partition.p_a] = data_a
    mask[:n_a, : partition.p_a] = True
    D[n_a:, partition.index_b] = data_b
    mask[n_a:, partition.index_b] = True
    return D, mask


def _mean_filled(D: np.ndarray, mask: np.ndarray) -> np.ndarray:
    counts = mask.sum(axis=0)
    means = np.where(mask, D, 0.0).sum(axis=0) / np.maximum(counts, 1)
    return np.where(mask, D, means)


def _objective(D: np.ndarray, mask: np.ndarray, low_rank: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.where(mask, D - low_rank, 0.0) ** 2))


def _least_squares(design: np.ndarray, target: np.ndarray, what: str) -> np.ndarray:
    """Solves design @ coef = target, refusing rank-deficient designs."""
    singular = linalg.svd(design, compute_uv=False)
    floor = settings.RANK_TOL * max(float(singular[0]), np.finfo(float).tiny)
    if singular.size < design.shape[1] or singular[-1] <= floor:
        raise SingularSubproblemError(f"Least-squares subproblem for {what} is rank deficient.")
    coef, *_ = linalg.lstsq(design, target)
    return coef


def _split(
    data_a: ArrayLike, data_b: ArrayLike, partition: PartitionSpec
) -> Tuple[np.ndarray, np.ndarray, int]:
    D, mask = stack_pair(data_a, data_b, partition)
    return D, mask, int(np.asarray(data_a).shape[0])


def _result(
    D: np.ndarray,
    mask: np.ndarray,
    low_rank: np.ndarray,
    n_a: int,
    partition: PartitionSpec,
    tag: str,
    trace: Sequence[float],
    lambda_: Optional[float] = None,
) -> ImputedDataset:
    return ImputedDataset(
        d_hat=np.where(mask, D, low_rank),
        low_rank=low_rank,
        mask=mask,
        n_a=n_a,
        partition=partition,
        method_tag=tag,
        objective_trace=trace,
        lambda_=lambda_,
    )


def als_complete(
    data_a: ArrayLike,
    data_b: ArrayLike,
    partition: PartitionSpec,
    q: int,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> ImputedDataset:
    """
    Rank-q completion by alternating least squares on the observed entries.

    Minimises f(G, H) = 1/2 sum over observed (i, j) of (D_ij - [G H]_ij)^2. H starts
    from the top-q right singular vectors of the mean-filled matrix; the G half-step
    solves one least-squares problem per file (rows of a file share their pattern),
    the H half-step one per variable group.

    Raises:
        InvalidArgumentError: If q is not in 1..min(n, p).
        SingularSubproblemError: If a half-step design has rank below q.
    """
    D, mask, n_a = _split(data_a, data_b, partition)
    n, p = D.shape
    if q < 1 or q > min(n, p):
        raise InvalidArgumentError(f"q must be in 1..{min(n, p)}, got {q}.")
    max_iter = settings.ALS_MAX_ITER if max_iter is None else max_iter
    tol = settings.ALS_TOL if tol is None else tol

    _, _, vt = linalg.svd(_mean_filled(D, mask), full_matrices=False)
    H = vt[:q].copy()
    G = np.zeros((n, q))
    cols_a = np.arange(partition.p_a)
    cols_b = partition.index_b
    x, y, z = partition.x, partition.y, partition.z
    rows_a, rows_b = slice(0, n_a), slice(n_a, n)

    trace: List[float] = []
    previous = np.inf
    for iteration in range(max_iter):
        G[rows_a] = _least_squares(H[:, cols_a].T, D[rows_a][:, cols_a].T, "G_A").T
        G[rows_b] = _least_squares(H[:, cols_b].T, D[rows_b][:, cols_b].T, "G_B").T
        trace.append(_objective(D, mask, G @ H))

        H[:, x] = _least_squares(G, D[:, x], "H_X")
        H[:, y] = _least_squares(G[rows_a], D[rows_a, y], "H_Y")
        H[:, z] = _least_squares(G[rows_b], D[rows_b, z], "H_Z")
        current = _objective(D, mask, G @ H)
        trace.append(current)
        if not np.isfinite(current):
            raise NonFiniteError("ALS objective became non-finite.")
        if np.isfinite(previous) and previous - current <= tol * previous:
            log.debug("ALS converged after %d iterations (objective %.3g).", iteration + 1, current)
            break
        previous = current
    return _result(D, mask, G @ H, n_a, partition, "als", trace)


def _shrink(matrix: np.ndarray, lam: float, rank: Optional[int]) -> np.ndarray:
    u, s, vt = linalg.svd(matrix, full_matrices=False)
    s = np.maximum(s - lam, 0.0)
    if rank is not None:
        s[rank:] = 0.0
    keep = s > 0
    return (u[:, keep] * s[keep]) @ vt[keep]


def _soft_impute_path(
    D: np.ndarray,
    mask: np.ndarray,
    grid: Sequence[float],
    rank: Optional[int],
    max_iter: int,
    tol: float,
) -> List[np.ndarray]:
    """Soft-Impute solutions along a decreasing grid, each warm-started from the last."""
    observed = np.where(mask, D, 0.0)
    Z = np.zeros_like(D)
    path = []
    for lam in grid:
        for _ in range(max_iter):
            Z_new = _shrink(observed + np.where(mask, 0.0, Z), lam, rank)
            change = float(np.sum((Z_new - Z) ** 2))
            scale = float(np.sum(Z ** 2))
            Z = Z_new
            if change <= tol * max(scale, np.finfo(float).tiny):
                break
        path.append(Z.copy())
    return path


def default_lambda_grid(
    data_a: ArrayLike,
    data_b: ArrayLike,
    partition: PartitionSpec,
    size: Optional[int] = None,
) -> np.ndarray:
    """Log-spaced values from the spectral norm of the zero-filled matrix down to 1e-3 of it."""
    D, mask = stack_pair(data_a, data_b, partition)
    top = float(linalg.norm(np.where(mask, D, 0.0), 2))
    size = settings.SOFT_IMPUTE_GRID if size is None else size
    if top == 0.0:
        return np.zeros(1)
    return np.geomspace(top, 1e-3 * top, size)


def soft_impute(
    data_a: ArrayLike,
    data_b: ArrayLike,
    partition: PartitionSpec,
    lambda_grid: Optional[Sequence[float]] = None,
    rank: Optional[int] = None,
    seed: Optional[int] = None,
    holdout: Optional[float] = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> ImputedDataset:
    """
    Nuclear-norm regularised completion with a decreasing lambda path.

    With more than one lambda the level is chosen by the squared error on a seeded
    random hold-out of the observed entries; the returned reconstruction is the full
    data path stopped at that level.

    Args:
        lambda_grid: Shrinkage levels (sorted decreasing internally); default
            :func:`default_lambda_grid`.
        rank: Optional cap on the rank of every iterate.
        seed: Seed of the hold-out mask.
        holdout: Held-out fraction of observed entries.
    """
    D, mask, n_a = _split(data_a, data_b, partition)
    grid = np.sort(
        np.asarray(
            default_lambda_grid(data_a, data_b, partition) if lambda_grid is None else lambda_grid,
            dtype=float,
        )
    )[::-1]
    if grid.size == 0 or np.any(grid < 0):
        raise InvalidArgumentError("lambda_grid must hold non-negative values.")
    max_iter = settings.ALS_MAX_ITER if max_iter is None else max_iter
    tol = settings.ALS_TOL if tol is None else tol
    fraction = settings.SOFT_IMPUTE_HOLDOUT if holdout is None else holdout

    chosen = 0
    if grid.size > 1 and fraction > 0:
        rng = stream(seed, 0)
        held = mask & (rng.random(mask.shape) < fraction)
        train = mask & ~held
        path = _soft_impute_path(D, train, grid, rank, max_iter, tol)
        errors = [float(np.sum(np.where(held, D - Z, 0.0) ** 2)) for Z in path]
        chosen = int(np.argmin(errors))
        log.debug("Soft-Impute hold-out errors %s, chose lambda=%.4g.", errors, grid[chosen])

    path = _soft_impute_path(D, mask, grid[: chosen + 1], rank, max_iter, tol)
    trace = [_objective(D, mask, Z) for Z in path]
    return _result(D, mask, path[-1], n_a, partition, "softimpute", trace, float(grid[chosen]))


def svd_impute(
    data_a: ArrayLike,
    data_b: ArrayLike,
    partition: PartitionSpec,
    q: int,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> ImputedDataset:
    """
    Hard rank-q SVD imputation: fill the missing blocks with the rank-q truncation of
    the current completed matrix until the observed-entry objective settles.
    """
    D, mask, n_a = _split(data_a, data_b, partition)
    n, p = D.shape
    if q < 1 or q > min(n, p):
        raise InvalidArgumentError(f"q must be in 1..{min(n, p)}, got {q}.")
    max_iter = settings.ALS_MAX_ITER if max_iter is None else max_iter
    tol = settings.ALS_TOL if tol is None else tol

    filled = _mean_filled(D, mask)
    trace: List[float] = []
    previous = np.inf
    low_rank = filled
    for _ in range(max_iter):
        u, s, vt = linalg.svd(filled, full_matrices=False)
        low_rank = (u[:, :q] * s[:q]) @ vt[:q]
        filled = np.where(mask, D, low_rank)
        current = _objective(D, mask, low_rank)
        trace.append(current)
        if np.isfinite(previous) and previous - current <= tol * previous:
            break
        previous = current
    return _result(D, mask, low_rank, n_a, partition, "svdimpute", trace)


def covariance_from_imputed(imputed: ImputedDataset) -> np.ndarray:
    """
    Sample cross-covariance (denominator n) of the stacked columns (Y_A; Y_B hat)
    and (Z_A hat; Z_B).
    """
    pt = imputed.partition
    Y = imputed.d_hat[:, pt.y]
    Z = imputed.d_hat[:, pt.z]
    Y = Y - Y.mean(axis=0)
    Z = Z - Z.mean(axis=0)
    return Y.T @ Z / imputed.n

"""Constructive completion of the YZ block of a rank-q Gram matrix.

The (X, Y) and (X, Z) blocks of Lambda Lambda^T are each factored by their top q
eigenpairs. The two factorisations agree on the X rows up to an orthogonal rotation,
which an orthogonal Procrustes fit recovers; the rotated factors then give
Lambda_Y Lambda_Z^T.
"""
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

from filematch.core.config import settings
from filematch.core.exceptions import (
    DimensionMismatchError,
    InvalidArgumentError,
    RankDeficientError,
)
from filematch.models.domain.covariance import PartialCovariance
from filematch.models.domain.matrices import exact_symmetric
from filematch.models.domain.partition import PartitionSpec

log = logging.getLogger(__name__)


class CanonicalFactors:
    """
    Eigen-factors of the two marginal Gram blocks.

    Attributes:
        factors_a: (p_X + p_Y) x q matrix V_A D_A^{1/2}.
        factors_b: (p_X + p_Z) x q matrix V_B D_B^{1/2}.
        eigenvalues_a, eigenvalues_b: Top q eigenvalues, nonincreasing.
        partition: Variable partition.
    """

    def __init__(
        self,
        factors_a: np.ndarray,
        factors_b: np.ndarray,
        eigenvalues_a: np.ndarray,
        eigenvalues_b: np.ndarray,
        partition: PartitionSpec,
    ) -> None:
        if factors_a.shape != (partition.p_a, factors_b.shape[1]):
            raise DimensionMismatchError(
                f"factors_a has shape {factors_a.shape}, expected ({partition.p_a}, q)."
            )
        if factors_b.shape[0] != partition.p_b:
            raise DimensionMismatchError(
                f"factors_b has {factors_b.shape[0]} rows, expected {partition.p_b}."
            )
        self.factors_a = factors_a
        self.factors_b = factors_b
        self.eigenvalues_a = eigenvalues_a
        self.eigenvalues_b = eigenvalues_b
        self.partition = partition

    @property
    def q(self) -> int:
        return int(self.factors_a.shape[1])

    @property
    def lambda_x_a(self) -> np.ndarray:
        return self.factors_a[: self.partition.p_x]

    @property
    def lambda_y_a(self) -> np.ndarray:
        return self.factors_a[self.partition.p_x :]

    @property
    def lambda_x_b(self) -> np.ndarray:
        return self.factors_b[: self.partition.p_x]

    @property
    def lambda_z_b(self) -> np.ndarray:
        return self.factors_b[self.partition.p_x :]


def top_q_factors(
    gram: ArrayLike, q: int, tol: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Top-q eigen-factor V D^{1/2} of a symmetric PSD matrix.

    Args:
        gram: Symmetric m x m matrix.
        q: Number of factors.
        tol: Eigenvalue threshold (default 1e-8 times the largest eigenvalue magnitude).

    Returns:
        The m x q factor and its q eigenvalues in nonincreasing order.

    Raises:
        RankDeficientError: If fewer than q eigenvalues exceed ``tol``.
    """
    gram = np.asarray(gram, dtype=float)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise DimensionMismatchError(f"Gram matrix must be square, got {gram.shape}.")
    m = gram.shape[0]
    if q < 1 or q > m:
        raise InvalidArgumentError(f"Need 1 <= q <= {m}, got q={q}.")

    eigenvalues, vectors = linalg.eigh(exact_symmetric(gram))
    eigenvalues = eigenvalues[::-1]
    vectors = vectors[:, ::-1]
    scale = float(np.max(np.abs(eigenvalues)))
    threshold = settings.RANK_TOL * scale if tol is None else tol
    rank = int(np.sum(eigenvalues > threshold))
    if scale == 0.0 or rank < q:
        raise RankDeficientError(
            f"Only {rank} eigenvalues exceed {threshold:.3g}; {q} factors requested."
        )
    top = np.clip(eigenvalues[:q], 0.0, None)
    return vectors[:, :q] * np.sqrt(top), top


def procrustes_align(
    target: ArrayLike, source: ArrayLike, tol: Optional[float] = None
) -> np.ndarray:
    """
    Orthogonal R minimising ||target - source R||_F.

    With W D Q^T the SVD of source^T target, R = W Q^T.

    Raises:
        RankDeficientError: If source^T target has a singular value at or below
            ``tol`` (default 1e-8 times the largest), so R is not unique.
    """
    target = np.atleast_2d(np.asarray(target, dtype=float))
    source = np.atleast_2d(np.asarray(source, dtype=float))
    if target.shape != source.shape:
        raise DimensionMismatchError(
            f"target {target.shape} and source {source.shape} differ in shape."
        )
    W, d, Qt = linalg.svd(source.T @ target)
    threshold = settings.RANK_TOL * float(d[0]) if tol is None else tol
    if d[0] == 0.0 or d[-1] <= threshold:
        raise RankDeficientError(
            f"Procrustes alignment is not unique (smallest singular value {d[-1]:.3g})."
        )
    return W @ Qt


def canonical_factors(
    observed: PartialCovariance, q: int, tol: Optional[float] = None
) -> CanonicalFactors:
    """
    Factors the (X, Y) and (X, Z) Gram blocks of ``observed``.

    Raises:
        RankDeficientError: If the XX block has rank below q or either marginal
            block has fewer than q significant eigenvalues.
    """
    pt = observed.partition
    if q > pt.p_x:
        raise RankDeficientError(f"Sigma_XX is {pt.p_x} x {pt.p_x}; it cannot have rank {q}.")
    xx_eigen = linalg.eigvalsh(observed.xx)
    xx_scale = float(np.max(np.abs(xx_eigen)))
    xx_threshold = settings.RANK_TOL * xx_scale if tol is None else tol
    xx_rank = int(np.sum(xx_eigen > xx_threshold))
    if xx_scale == 0.0 or xx_rank < q:
        raise RankDeficientError(f"The XX Gram block has rank {xx_rank} < q={q}.")

    factors_a, eigen_a = top_q_factors(observed.sigma_a(), q, tol)
    factors_b, eigen_b = top_q_factors(observed.sigma_b(), q, tol)
    return CanonicalFactors(factors_a, factors_b, eigen_a, eigen_b, pt)


def complete_from_factors(factors: CanonicalFactors, tol: Optional[float] = None) -> np.ndarray:
    """Lambda_Y^A (Lambda_Z^B R)^T with R aligning the X rows of B onto those of A."""
    rotation = procrustes_align(factors.lambda_x_a, factors.lambda_x_b, tol)
    return factors.lambda_y_a @ (factors.lambda_z_b @ rotation).T


def complete_gram(
    observed: PartialCovariance, q: int, tol: Optional[float] = None
) -> np.ndarray:
    """
    Recovers Lambda_Y Lambda_Z^T from the observed blocks of a rank-q Gram matrix.

    Args:
        observed: Gram blocks (a covariance with the uniquenesses already removed,
            see PartialCovariance.minus_uniquenesses).
        q: Rank of the Gram matrix.
        tol: Rank threshold shared by the eigen and Procrustes steps.

    Returns:
        p_Y x p_Z matrix; exact when the inputs have rank exactly q.
    """
    factors = canonical_factors(observed, q, tol)
    completed = complete_from_factors(factors, tol)
    log.debug("Gram completion with q=%d: leading eigenvalues %s / %s",
              q, factors.eigenvalues_a[:1], factors.eigenvalues_b[:1])
    return completed

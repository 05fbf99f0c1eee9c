"""Domain model for the sufficient statistics of the two observed files.

P is the scatter of the centred (X, Y) rows of dataset A and T the scatter of the
centred (X, Z) rows of dataset B; together with the row counts they are all the EM
algorithm needs.
"""
from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike

from filematch.core.exceptions import DimensionMismatchError, InvalidArgumentError
from filematch.models.domain.matrices import exact_symmetric, frozen, is_symmetric
from filematch.models.domain.partition import PartitionSpec

PSD_RTOL = 1e-10


class ObservedScatter:
    """
    Scatter matrices P (dataset A) and T (dataset B) with their sample counts.

    Attributes:
        P: (p_X + p_Y) x (p_X + p_Y) scatter of dataset A.
        T: (p_X + p_Z) x (p_X + p_Z) scatter of dataset B.
        n_a: Rows in dataset A.
        n_b: Rows in dataset B.
        partition: Variable partition.
    """

    P: np.ndarray
    T: np.ndarray
    n_a: int
    n_b: int
    partition: PartitionSpec

    def __init__(
        self,
        P: ArrayLike,
        T: ArrayLike,
        n_a: int,
        n_b: int,
        partition: PartitionSpec,
    ) -> None:
        """
        Validates shapes, symmetry, positive semidefiniteness and counts.

        Raises:
            DimensionMismatchError: If a scatter has the wrong shape or is not
                symmetric positive semidefinite.
            InvalidArgumentError: If a count is negative or both are zero.
        """
        self.partition = partition
        P = np.array(frozen(P, (partition.p_a, partition.p_a), "P"))
        T = np.array(frozen(T, (partition.p_b, partition.p_b), "T"))
        for name, matrix in (("P", P), ("T", T)):
            if not is_symmetric(matrix):
                raise DimensionMismatchError(f"Scatter {name} is not symmetric.")
            smallest = float(np.linalg.eigvalsh(exact_symmetric(matrix))[0])
            scale = max(float(np.max(np.abs(np.diag(matrix)), initial=0.0)), 1.0)
            if smallest < -PSD_RTOL * scale * matrix.shape[0]:
                raise DimensionMismatchError(
                    f"Scatter {name} is not positive semidefinite (eigenvalue {smallest:.3g})."
                )
        if n_a < 0 or n_b < 0 or n_a + n_b <= 0:
            raise InvalidArgumentError(
                f"Sample counts must be non-negative with a positive total, got {n_a}, {n_b}."
            )
        self.P = frozen(exact_symmetric(P), name="P")
        self.T = frozen(exact_symmetric(T), name="T")
        self.n_a = int(n_a)
        self.n_b = int(n_b)

    @classmethod
    def population(
        cls, sigma: ArrayLike, partition: PartitionSpec, n_a: int, n_b: int
    ) -> ObservedScatter:
        """Scatters equal to n_A * Sigma_A and n_B * Sigma_B (noise-free input)."""
        sigma = np.asarray(sigma, dtype=float)
        ia, ib = partition.index_a, partition.index_b
        return cls(
            P=n_a * sigma[np.ix_(ia, ia)],
            T=n_b * sigma[np.ix_(ib, ib)],
            n_a=n_a,
            n_b=n_b,
            partition=partition,
        )

    @property
    def n(self) -> int:
        return self.n_a + self.n_b

    @property
    def p_xx(self) -> np.ndarray:
        x = self.partition.x
        return self.P[x, x]

    @property
    def p_xy(self) -> np.ndarray:
        return self.P[self.partition.x, self.partition.p_x:]

    @property
    def p_yy(self) -> np.ndarray:
        px = self.partition.p_x
        return self.P[px:, px:]

    @property
    def t_xx(self) -> np.ndarray:
        x = self.partition.x
        return self.T[x, x]

    @property
    def t_xz(self) -> np.ndarray:
        return self.T[self.partition.x, self.partition.p_x:]

    @property
    def t_zz(self) -> np.ndarray:
        px = self.partition.p_x
        return self.T[px:, px:]

    def variances(self) -> np.ndarray:
        """
        Per-variable variance estimates in (X, Y, Z) order.

        X entries average both files weighted by their counts.
        """
        pt = self.partition
        out = np.empty(pt.p)
        out[pt.x] = (np.diag(self.p_xx) + np.diag(self.t_xx)) / self.n
        out[pt.y] = np.diag(self.p_yy) / max(self.n_a, 1)
        out[pt.z] = np.diag(self.t_zz) / max(self.n_b, 1)
        return out

    def __repr__(self) -> str:
        return f"ObservedScatter({self.partition!r}, n_a={self.n_a}, n_b={self.n_b})"

"""Domain model for a factor analysis model on (X, Y, Z).

The model covariance is Sigma = Lambda Lambda^T + Psi with Psi diagonal; its YZ block
Lambda_Y Lambda_Z^T is the quantity the two files cannot observe directly.
"""
from __future__ import annotations

from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike

from filematch.core.exceptions import DimensionMismatchError, InvalidArgumentError
from filematch.models.domain.covariance import PartialCovariance
from filematch.models.domain.matrices import exact_symmetric, frozen
from filematch.models.domain.partition import PartitionSpec


class FactorModel:
    """
    Loadings and uniquenesses of a q-factor model.

    Attributes:
        loadings: p x q loadings matrix, rows ordered (X, Y, Z).
        psi: Length-p vector with the diagonal of Psi.
        partition: Variable partition.
    """

    loadings: np.ndarray
    psi: np.ndarray
    partition: PartitionSpec

    def __init__(
        self,
        loadings: ArrayLike,
        psi: ArrayLike,
        partition: PartitionSpec,
        psi_floor: float = 0.0,
    ) -> None:
        """
        Validates the parameter pair.

        Args:
            loadings: p x q loadings (a length-p vector is read as q = 1).
            psi: Length-p uniquenesses.
            partition: Variable partition.
            psi_floor: Lower bound every uniqueness must respect.

        Raises:
            DimensionMismatchError: If shapes disagree with the partition.
            InvalidArgumentError: If a uniqueness is below the floor or not finite.
        """
        loadings = np.array(loadings, dtype=float)
        if loadings.ndim == 1:
            loadings = loadings.reshape(-1, 1)
        if loadings.ndim != 2 or loadings.shape[0] != partition.p:
            raise DimensionMismatchError(
                f"Loadings have shape {loadings.shape}, expected ({partition.p}, q)."
            )
        psi = frozen(psi, (partition.p,), "psi")
        if not np.all(np.isfinite(psi)) or not np.all(np.isfinite(loadings)):
            raise InvalidArgumentError("Model parameters must be finite.")
        if np.any(psi < psi_floor):
            raise InvalidArgumentError(
                f"Uniquenesses must be >= {psi_floor:.3g}, smallest is {psi.min():.3g}."
            )
        self.loadings = frozen(loadings, name="loadings")
        self.psi = psi
        self.partition = partition

    @property
    def q(self) -> int:
        return int(self.loadings.shape[1])

    @property
    def p(self) -> int:
        return self.partition.p

    @property
    def lambda_x(self) -> np.ndarray:
        return self.loadings[self.partition.x]

    @property
    def lambda_y(self) -> np.ndarray:
        return self.loadings[self.partition.y]

    @property
    def lambda_z(self) -> np.ndarray:
        return self.loadings[self.partition.z]

    @property
    def lambda_a(self) -> np.ndarray:
        """Loadings of the variables observed in dataset A, (X, Y)."""
        return self.loadings[self.partition.index_a]

    @property
    def lambda_b(self) -> np.ndarray:
        """Loadings of the variables observed in dataset B, (X, Z)."""
        return self.loadings[self.partition.index_b]

    def gram(self) -> np.ndarray:
        """Low-rank part Lambda Lambda^T, exactly symmetric."""
        return exact_symmetric(self.loadings @ self.loadings.T)

    def full_covariance(self) -> np.ndarray:
        """Implied p x p covariance, exactly symmetric."""
        return self.gram() + np.diag(self.psi)

    def marginal_covariances(self) -> Tuple[np.ndarray, np.ndarray]:
        """Implied covariances of (X, Y) and (X, Z)."""
        sigma = self.full_covariance()
        ia, ib = self.partition.index_a, self.partition.index_b
        return sigma[np.ix_(ia, ia)], sigma[np.ix_(ib, ib)]

    def implied_covariance(self) -> PartialCovariance:
        """Implied covariance split into blocks, YZ included."""
        return PartialCovariance.from_full(self.full_covariance(), self.partition)

    def implied_yz(self) -> np.ndarray:
        return self.full_covariance()[self.partition.y, self.partition.z]

    def rotated(self, rotation: ArrayLike) -> FactorModel:
        """Same model with loadings post-multiplied by a q x q matrix."""
        rotation = frozen(rotation, (self.q, self.q), "rotation")
        return FactorModel(self.loadings @ rotation, self.psi, self.partition)

    def __repr__(self) -> str:
        return f"FactorModel(q={self.q}, {self.partition!r})"


def implied_covariance(model: FactorModel) -> PartialCovariance:
    """Returns Lambda Lambda^T + Psi partitioned into its nine blocks."""
    return model.implied_covariance()

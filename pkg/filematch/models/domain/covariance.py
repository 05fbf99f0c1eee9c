"""Domain model for a covariance matrix with an unobserved YZ block.

PartialCovariance stores the blocks the two files identify (XX, XY, XZ, YY, ZZ) and,
optionally, a YZ block. It is the common currency of the conditional-independence
estimator, the identified-set test and the Gram completion.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Optional

import numpy as np
from numpy.typing import ArrayLike

from filematch.core.exceptions import DimensionMismatchError
from filematch.models.domain.matrices import exact_symmetric, frozen, symmetric_block
from filematch.models.domain.partition import PartitionSpec

if TYPE_CHECKING:
    from filematch.models.domain.scatter import ObservedScatter


class PartialCovariance:
    """
    Block covariance of (X, Y, Z) whose YZ block may be unknown.

    Attributes:
        xx, xy, xz, yy, zz: Identified blocks (read-only arrays).
        yz: Optional p_Y x p_Z block.
        partition: Variable partition the blocks follow.
    """

    xx: np.ndarray
    xy: np.ndarray
    xz: np.ndarray
    yy: np.ndarray
    zz: np.ndarray
    yz: Optional[np.ndarray]
    partition: PartitionSpec

    def __init__(
        self,
        xx: ArrayLike,
        xy: ArrayLike,
        xz: ArrayLike,
        yy: ArrayLike,
        zz: ArrayLike,
        partition: PartitionSpec,
        yz: Optional[ArrayLike] = None,
    ) -> None:
        """
        Validates block shapes against the partition.

        Raises:
            DimensionMismatchError: If a block has the wrong shape or a diagonal
                block is not symmetric.
        """
        px, py, pz = partition.p_x, partition.p_y, partition.p_z
        self.partition = partition
        self.xx = symmetric_block(xx, px, "Sigma_XX")
        self.yy = symmetric_block(yy, py, "Sigma_YY")
        self.zz = symmetric_block(zz, pz, "Sigma_ZZ")
        self.xy = frozen(xy, (px, py), "Sigma_XY")
        self.xz = frozen(xz, (px, pz), "Sigma_XZ")
        self.yz = None if yz is None else frozen(yz, (py, pz), "Sigma_YZ")

    @classmethod
    def from_full(
        cls, sigma: ArrayLike, partition: PartitionSpec, keep_yz: bool = True
    ) -> PartialCovariance:
        """Splits a full p x p covariance into its blocks."""
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != (partition.p, partition.p):
            raise DimensionMismatchError(
                f"Covariance has shape {sigma.shape}, expected ({partition.p}, {partition.p})."
            )
        x, y, z = partition.x, partition.y, partition.z
        return cls(
            xx=sigma[x, x],
            xy=sigma[x, y],
            xz=sigma[x, z],
            yy=sigma[y, y],
            zz=sigma[z, z],
            partition=partition,
            yz=sigma[y, z] if keep_yz else None,
        )

    @classmethod
    def from_scatter(cls, scatter: ObservedScatter) -> PartialCovariance:
        """
        Sample covariance blocks from observed scatters.

        XY and YY come from P / n_A, XZ and ZZ from T / n_B; the XX block pools both
        files, (P_XX + T_XX) / n.
        """
        pt = scatter.partition
        xx = (scatter.p_xx + scatter.t_xx) / scatter.n
        return cls(
            xx=exact_symmetric(xx),
            xy=scatter.p_xy / scatter.n_a,
            xz=scatter.t_xz / scatter.n_b,
            yy=scatter.p_yy / scatter.n_a,
            zz=scatter.t_zz / scatter.n_b,
            partition=pt,
        )

    def sigma_a(self) -> np.ndarray:
        """Covariance of (X, Y), the marginal observed in dataset A."""
        return np.block([[self.xx, self.xy], [self.xy.T, self.yy]])

    def sigma_b(self) -> np.ndarray:
        """Covariance of (X, Z), the marginal observed in dataset B."""
        return np.block([[self.xx, self.xz], [self.xz.T, self.zz]])

    def assemble_full(self, yz: ArrayLike) -> np.ndarray:
        """
        Full symmetric covariance with a candidate YZ block inserted.

        Raises:
            DimensionMismatchError: If ``yz`` is not p_Y x p_Z.
        """
        yz = frozen(yz, (self.partition.p_y, self.partition.p_z), "Sigma_YZ")
        return np.block(
            [
                [self.xx, self.xy, self.xz],
                [self.xy.T, self.yy, yz],
                [self.xz.T, yz.T, self.zz],
            ]
        )

    def full(self) -> np.ndarray:
        """Full covariance using the stored YZ block."""
        if self.yz is None:
            raise DimensionMismatchError("The YZ block is not available.")
        return self.assemble_full(self.yz)

    def with_yz(self, yz: ArrayLike) -> PartialCovariance:
        return PartialCovariance(
            self.xx, self.xy, self.xz, self.yy, self.zz, self.partition, yz=yz
        )

    def minus_uniquenesses(self, psi: ArrayLike) -> PartialCovariance:
        """
        Subtracts diag(psi) from the diagonal blocks, leaving the Gram blocks.

        Raises:
            DimensionMismatchError: If ``psi`` does not have p entries.
        """
        psi = frozen(psi, (self.partition.p,), "psi")
        pt = self.partition
        return PartialCovariance(
            xx=self.xx - np.diag(psi[pt.x]),
            xy=self.xy,
            xz=self.xz,
            yy=self.yy - np.diag(psi[pt.y]),
            zz=self.zz - np.diag(psi[pt.z]),
            partition=pt,
            yz=self.yz,
        )

    def __repr__(self) -> str:
        state = "with YZ" if self.yz is not None else "YZ unknown"
        return f"PartialCovariance({self.partition!r}, {state})"


def assemble_full(partial: PartialCovariance, yz: ArrayLike) -> np.ndarray:
    """Full symmetric covariance with ``yz`` inserted in the YZ position."""
    return partial.assemble_full(yz)

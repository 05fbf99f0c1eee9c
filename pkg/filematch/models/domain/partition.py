"""Domain model for the variable partition of a file-matching problem.

Dataset A observes the shared variables X and its own variables Y; dataset B observes
X and its own variables Z. Variables are always ordered (X, Y, Z).
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from filematch.core.enums import Block
from filematch.core.exceptions import InvalidPartitionError


class PartitionSpec:
    """
    Sizes (and optional names) of the X, Y and Z variable groups.

    Attributes:
        p_x: Number of shared variables.
        p_y: Number of variables observed only in dataset A.
        p_z: Number of variables observed only in dataset B.
        labels: Optional variable names ordered (X, Y, Z).
    """

    p_x: int
    p_y: int
    p_z: int
    labels: Optional[Tuple[str, ...]]

    def __init__(
        self,
        p_x: int,
        p_y: int,
        p_z: int,
        labels: Optional[Sequence[str]] = None,
    ) -> None:
        """
        Validates and stores the partition.

        Raises:
            InvalidPartitionError: If a group is empty or labels are inconsistent.
        """
        for name, value in (("p_X", p_x), ("p_Y", p_y), ("p_Z", p_z)):
            if int(value) != value or value < 1:
                raise InvalidPartitionError(f"{name} must be a positive integer, got {value}.")
        self.p_x, self.p_y, self.p_z = int(p_x), int(p_y), int(p_z)

        if labels is not None:
            labels = tuple(str(label) for label in labels)
            if len(labels) != self.p:
                raise InvalidPartitionError(
                    f"Expected {self.p} labels, got {len(labels)}."
                )
            if len(set(labels)) != len(labels):
                raise InvalidPartitionError("Variable labels must be unique.")
        self.labels = labels

    @property
    def p(self) -> int:
        return self.p_x + self.p_y + self.p_z

    @property
    def p_a(self) -> int:
        """Number of variables observed in dataset A."""
        return self.p_x + self.p_y

    @property
    def p_b(self) -> int:
        """Number of variables observed in dataset B."""
        return self.p_x + self.p_z

    @property
    def x(self) -> slice:
        return slice(0, self.p_x)

    @property
    def y(self) -> slice:
        return slice(self.p_x, self.p_x + self.p_y)

    @property
    def z(self) -> slice:
        return slice(self.p_x + self.p_y, self.p)

    @property
    def index_a(self) -> np.ndarray:
        """Positions of (X, Y) inside the full (X, Y, Z) ordering."""
        return np.arange(self.p_a)

    @property
    def index_b(self) -> np.ndarray:
        """Positions of (X, Z) inside the full (X, Y, Z) ordering."""
        return np.concatenate([np.arange(self.p_x), np.arange(self.p_a, self.p)])

    def labels_of(self, block: Union[Block, str]) -> Tuple[str, ...]:
        """Labels of one block, generated names when the partition has none."""
        part = {Block.X: self.x, Block.Y: self.y, Block.Z: self.z}[Block(block)]
        return self.default_labels()[part]

    def default_labels(self) -> Tuple[str, ...]:
        """Labels, or generated names x1.., y1.., z1.. when none were given."""
        if self.labels is not None:
            return self.labels
        return (
            tuple(f"x{i + 1}" for i in range(self.p_x))
            + tuple(f"y{i + 1}" for i in range(self.p_y))
            + tuple(f"z{i + 1}" for i in range(self.p_z))
        )

    def observed_mask(self) -> np.ndarray:
        """Boolean p x p mask of covariance entries identified by the two files."""
        mask = np.ones((self.p, self.p), dtype=bool)
        mask[self.y, self.z] = False
        mask[self.z, self.y] = False
        return mask

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PartitionSpec):
            return NotImplemented
        return (self.p_x, self.p_y, self.p_z, self.labels) == (
            other.p_x,
            other.p_y,
            other.p_z,
            other.labels,
        )

    def __hash__(self) -> int:
        return hash((self.p_x, self.p_y, self.p_z, self.labels))

    def __repr__(self) -> str:
        return f"PartitionSpec(p_x={self.p_x}, p_y={self.p_y}, p_z={self.p_z})"

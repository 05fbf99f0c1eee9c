"""Abstract repository interface for fitted models.

Defines the contract for storing and retrieving model files.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from pathlib import Path
from typing import TYPE_CHECKING, Union

if TYPE_CHECKING:
    from filematch.models.schemas import ModelFile

PathLike = Union[str, Path]


class ModelRepository(ABC):
    """
    Abstract store of fitted factor models.

    Any implementation (JSON files, a database, ...) must implement these methods.
    """

    @abstractmethod
    def save(self, model_file: ModelFile, path: PathLike) -> None:
        """
        Writes a model file.

        Args:
            model_file: Validated model representation.
            path: Destination.
        """

    @abstractmethod
    def dumps(self, model_file: ModelFile) -> str:
        """Serialised text of a model file, for writing to a stream."""

    @abstractmethod
    def load(self, path: PathLike) -> ModelFile:
        """
        Reads a model file.

        Raises:
            SchemaMismatchError: If the content does not match the schema.
            VersionMismatchError: If the schema version is not supported.
        """

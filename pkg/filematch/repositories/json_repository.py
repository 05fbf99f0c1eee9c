"""JSON implementation of the model repository.

Model files are versioned JSON documents:
``{version, q, partition{p_x, p_y, p_z, labels}, lambda, psi, loglik, converged, seed}``
with ``lambda`` stored row by row. Floats are written in their shortest round-trip
form, so reading a file back reproduces every value bit for bit.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

from pydantic import ValidationError

from filematch.core.config import settings
from filematch.core.exceptions import SchemaMismatchError, VersionMismatchError
from filematch.models.schemas import ModelFile
from filematch.repositories.base_repository import ModelRepository, PathLike

log = logging.getLogger(__name__)


class JsonModelRepository(ModelRepository):
    """Stores each model as one JSON file."""

    def __init__(self, version: int = settings.MODEL_FILE_VERSION) -> None:
        self.version = version

    def dumps(self, model_file: ModelFile) -> str:
        """JSON text of a model file, as written by :meth:`save`."""
        document = model_file.model_dump(mode="json", by_alias=True)
        return json.dumps(document, indent=2) + "\n"

    def save(self, model_file: ModelFile, path: PathLike) -> None:
        Path(path).write_text(self.dumps(model_file), encoding="utf-8")
        log.info("Model written to %s (q=%d).", path, model_file.q)

    def load(self, path: PathLike) -> ModelFile:
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaMismatchError(f"{path}: not valid JSON ({exc}).") from exc
        if not isinstance(document, dict) or "version" not in document:
            raise SchemaMismatchError(f"{path}: missing 'version' field.")
        if document["version"] != self.version:
            raise VersionMismatchError(
                f"{path}: schema version {document['version']!r}, expected {self.version}."
            )
        try:
            model_file = ModelFile.model_validate(document)
        except ValidationError as exc:
            raise SchemaMismatchError(
                f"{path}: {exc.error_count()} schema errors: {exc}"
            ) from exc

        stored = model_file.partition
        p = stored.p_x + stored.p_y + stored.p_z
        rows = model_file.loadings
        if len(rows) != p or any(len(row) != model_file.q for row in rows):
            raise SchemaMismatchError(
                f"{path}: lambda must be {p} x {model_file.q} for the stored partition."
            )
        if len(model_file.psi) != p:
            raise SchemaMismatchError(
                f"{path}: psi has {len(model_file.psi)} entries, expected {p}."
            )
        labels = model_file.partition.labels
        if labels is not None and len(labels) != p:
            raise SchemaMismatchError(f"{path}: {len(labels)} labels for {p} variables.")
        return model_file

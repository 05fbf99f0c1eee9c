"""Reading, preparing and writing the two half-observed datasets, and model files.

Dataset A observes the shared columns X and its own columns Y; dataset B observes X and
Z. After loading, columns are always ordered (X, Y, Z).
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from filematch.core.enums import Centering, Scaling
from filematch.core.exceptions import (
    DimensionMismatchError,
    EmptyFileError,
    InputError,
    InvalidArgumentError,
    MissingColumnError,
    NonNumericCellError,
    SchemaMismatchError,
    ZeroVarianceError,
)
from filematch.models.domain.factor_model import FactorModel
from filematch.models.domain.partition import PartitionSpec
from filematch.models.domain.report import FitReport
from filematch.models.domain.scatter import ObservedScatter
from filematch.models.schemas import ModelFile
from filematch.repositories.base_repository import ModelRepository
from filematch.repositories.json_repository import JsonModelRepository

log = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"
ZERO_VARIANCE_RTOL = 1e-12


class DatasetPair:
    """
    The two files of a file-matching problem with canonical column order.

    Attributes:
        data_a: n_A x (p_X + p_Y) frame, columns X then Y.
        data_b: n_B x (p_X + p_Z) frame, columns X then Z.
        shared_columns: Names of the X columns.
    """

    def __init__(
        self,
        data_a: pd.DataFrame,
        data_b: pd.DataFrame,
        shared_columns: Sequence[str],
    ) -> None:
        shared = list(shared_columns)
        for name, frame in (("A", data_a), ("B", data_b)):
            if frame.columns.duplicated().any():
                raise InvalidArgumentError(f"Dataset {name} has duplicate column names.")
            if list(frame.columns[: len(shared)]) != shared:
                raise DimensionMismatchError(
                    f"Dataset {name} must start with the shared columns {shared}."
                )
        self.data_a = data_a.astype(float)
        self.data_b = data_b.astype(float)
        self.shared_columns = tuple(shared)
        self.partition = PartitionSpec(
            len(shared),
            data_a.shape[1] - len(shared),
            data_b.shape[1] - len(shared),
            labels=list(data_a.columns) + list(data_b.columns[len(shared):]),
        )

    @classmethod
    def from_arrays(
        cls, data_a: ArrayLike, data_b: ArrayLike, partition: PartitionSpec
    ) -> DatasetPair:
        """Wraps raw (X, Y) and (X, Z) matrices, naming columns by the partition labels."""
        labels = partition.default_labels()
        columns_a = [labels[i] for i in partition.index_a]
        columns_b = [labels[i] for i in partition.index_b]
        return cls(
            pd.DataFrame(np.asarray(data_a, dtype=float), columns=columns_a),
            pd.DataFrame(np.asarray(data_b, dtype=float), columns=columns_b),
            columns_a[: partition.p_x],
        )

    @property
    def n_a(self) -> int:
        return int(self.data_a.shape[0])

    @property
    def n_b(self) -> int:
        return int(self.data_b.shape[0])

    def __repr__(self) -> str:
        return f"DatasetPair({self.partition!r}, n_a={self.n_a}, n_b={self.n_b})"


def _read_csv(path: PathLike, **kwargs: Any) -> pd.DataFrame:
    try:
        return pd.read_csv(path, **kwargs)
    except pd.errors.EmptyDataError as exc:
        raise EmptyFileError(f"{path}: file is empty.") from exc
    except UnicodeDecodeError as exc:
        raise InvalidArgumentError(f"{path}: not UTF-8 text ({exc.reason}).") from exc
    except pd.errors.ParserError as exc:
        raise InvalidArgumentError(f"{path}: malformed CSV ({exc}).") from exc


def _to_float(cell: str) -> float:
    # exact on 17-digit text, unlike pd.to_numeric
    try:
        return float(cell)
    except ValueError:
        return np.nan


def _read_numeric_csv(path: PathLike) -> pd.DataFrame:
    """Reads a CSV with a mandatory header, rejecting duplicate names and non-numeric cells."""
    header = _read_csv(path, header=None, nrows=1, dtype=str, keep_default_na=False)
    names = [str(v).strip() for v in header.iloc[0].tolist()]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise InvalidArgumentError(f"{path}: duplicate column names {duplicates}.")

    raw = _read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, index_col=False)
    raw.columns = names
    if raw.empty:
        raise EmptyFileError(f"{path}: no data rows.")

    numeric = raw.apply(lambda column: column.str.strip().map(_to_float))
    values = numeric.to_numpy(dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonNumericCellError(str(path), int(row) + 2, names[col], str(raw.iat[row, col]))
    return pd.DataFrame(values, columns=names)


def load_pair(
    path_a: PathLike,
    path_b: PathLike,
    shared: Optional[Sequence[str]] = None,
) -> DatasetPair:
    """
    Loads the two files and orders their columns (X, Y, Z).

    Args:
        path_a: CSV of dataset A.
        path_b: CSV of dataset B.
        shared: Names of the shared columns; None takes the header intersection in
            the order of file A.

    Raises:
        MissingColumnError: If no column is shared, or a named column is absent.
        NonNumericCellError: If a cell is not a finite number.
        EmptyFileError: If a file has no header or no rows.
    """
    frame_a = _read_numeric_csv(path_a)
    frame_b = _read_numeric_csv(path_b)
    if shared is None:
        in_b = set(frame_b.columns)
        shared = [c for c in frame_a.columns if c in in_b]
        if not shared:
            raise MissingColumnError(None, f"{path_a} and {path_b} have disjoint headers.")
    else:
        shared = [str(c).strip() for c in shared]
        for column in shared:
            for path, frame in ((path_a, frame_a), (path_b, frame_b)):
                if column not in frame.columns:
                    raise MissingColumnError(column, f"It is missing from {path}.")
    own_a = [c for c in frame_a.columns if c not in shared]
    own_b = [c for c in frame_b.columns if c not in shared]
    pair = DatasetPair(frame_a[shared + own_a], frame_b[shared + own_b], shared)
    log.info("Loaded %r from %s and %s.", pair, path_a, path_b)
    return pair


def save_pair(pair: DatasetPair, path_a: PathLike, path_b: PathLike) -> None:
    """Writes both files with 17 significant digits, header included."""
    pair.data_a.to_csv(path_a, index=False, float_format=FLOAT_FORMAT)
    pair.data_b.to_csv(path_b, index=False, float_format=FLOAT_FORMAT)


def prepare(
    pair: DatasetPair,
    centering: Union[Centering, str] = Centering.PER_DATASET,
    scaling: Union[Scaling, str] = Scaling.NONE,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Centred (and optionally scaled) data matrices of the two files.

    Per-dataset centering removes each file's own column means; pooled-X centering
    uses the mean of the n_A + n_B stacked values for the X columns. Unit-variance
    scaling divides by standard deviations with denominator n, pooled over both
    files for X.

    Raises:
        InvalidArgumentError: If a file has fewer than two rows.
        ZeroVarianceError: If a column is constant under unit-variance scaling.
    """
    centering, scaling = Centering(centering), Scaling(scaling)
    if pair.n_a < 2 or pair.n_b < 2:
        raise InvalidArgumentError(
            f"Each dataset needs at least two rows, got {pair.n_a} and {pair.n_b}."
        )
    pt = pair.partition
    a = pair.data_a.to_numpy(dtype=float, copy=True)
    b = pair.data_b.to_numpy(dtype=float, copy=True)
    x = pt.x

    if centering is Centering.POOLED_X:
        x_mean = np.vstack([a[:, x], b[:, x]]).mean(axis=0)
        a[:, x] -= x_mean
        b[:, x] -= x_mean
        a[:, pt.p_x :] -= a[:, pt.p_x :].mean(axis=0)
        b[:, pt.p_x :] -= b[:, pt.p_x :].mean(axis=0)
    else:
        a -= a.mean(axis=0)
        b -= b.mean(axis=0)

    if scaling is Scaling.UNIT_VARIANCE:
        x_squares = np.sum(a[:, x] ** 2, axis=0) + np.sum(b[:, x] ** 2, axis=0)
        sd_x = np.sqrt(x_squares / (pair.n_a + pair.n_b))
        sd_a = np.concatenate([sd_x, np.sqrt(np.mean(a[:, pt.p_x :] ** 2, axis=0))])
        sd_b = np.concatenate([sd_x, np.sqrt(np.mean(b[:, pt.p_x :] ** 2, axis=0))])
        for sd, frame in ((sd_a, pair.data_a), (sd_b, pair.data_b)):
            scale = np.maximum(np.abs(frame.to_numpy()).max(axis=0), 1.0)
            flat = sd <= ZERO_VARIANCE_RTOL * scale
            if flat.any():
                column = frame.columns[int(np.argmax(flat))]
                raise ZeroVarianceError(f"Column '{column}' has zero variance.")
        a /= sd_a
        b /= sd_b
    return a, b


def to_scatter(
    pair: DatasetPair,
    centering: Union[Centering, str] = Centering.PER_DATASET,
    scaling: Union[Scaling, str] = Scaling.NONE,
) -> ObservedScatter:
    """Scatter matrices P = sum (x, y)(x, y)^T and T = sum (x, z)(x, z)^T of the prepared data."""
    a, b = prepare(pair, centering, scaling)
    return ObservedScatter(a.T @ a, b.T @ b, pair.n_a, pair.n_b, pair.partition)


def save_model(
    model: Union[FactorModel, FitReport],
    path: PathLike,
    repository: Optional[ModelRepository] = None,
) -> None:
    """Writes a model (with its fit metadata when given a FitReport)."""
    repository = repository or JsonModelRepository()
    if isinstance(model, FitReport):
        model_file = ModelFile.from_report(model)
    else:
        model_file = ModelFile.from_model(model)
    repository.save(model_file, path)


def load_model_file(path: PathLike, repository: Optional[ModelRepository] = None) -> ModelFile:
    """Reads and validates a model file, metadata included."""
    return (repository or JsonModelRepository()).load(path)


def load_model(path: PathLike, repository: Optional[ModelRepository] = None) -> FactorModel:
    """
    Reads a model file back into a FactorModel.

    Raises:
        SchemaMismatchError: If the file does not match the schema.
        VersionMismatchError: If the schema version is not supported.
    """
    model_file = load_model_file(path, repository)
    try:
        return model_file.to_model()
    except InputError as exc:
        raise SchemaMismatchError(f"{path}: {exc}") from exc


def load_table(path: PathLike) -> pd.DataFrame:
    """Reads one numeric CSV with a header row (e.g. a complete dataset)."""
    return _read_numeric_csv(path)


def _square(frame: pd.DataFrame, path: PathLike) -> pd.DataFrame:
    if frame.shape[0] != frame.shape[1]:
        raise DimensionMismatchError(
            f"{path}: covariance has {frame.shape[0]} rows and {frame.shape[1]} columns."
        )
    frame.index = frame.columns
    return frame


def load_scatter(
    path_a: PathLike,
    path_b: PathLike,
    n_a: int,
    n_b: int,
    shared: Optional[Sequence[str]] = None,
) -> ObservedScatter:
    """
    Builds the observed scatters from two covariance matrices.

    Each file holds a square matrix whose header names the variables; rows follow the
    header order. The scatters are n_A * Sigma_A and n_B * Sigma_B with the variables
    ordered (X, Y, Z) as in :func:`load_pair`.

    Raises:
        MissingColumnError: If no variable is shared, or a named one is absent.
        DimensionMismatchError: If a matrix is not square or not symmetric PSD.
    """
    cov_a = _square(_read_numeric_csv(path_a), path_a)
    cov_b = _square(_read_numeric_csv(path_b), path_b)
    if shared is None:
        in_b = set(cov_b.columns)
        shared = [c for c in cov_a.columns if c in in_b]
        if not shared:
            raise MissingColumnError(None, f"{path_a} and {path_b} have disjoint headers.")
    else:
        shared = [str(c).strip() for c in shared]
        for column in shared:
            for path, frame in ((path_a, cov_a), (path_b, cov_b)):
                if column not in frame.columns:
                    raise MissingColumnError(column, f"It is missing from {path}.")
    order_a = shared + [c for c in cov_a.columns if c not in shared]
    order_b = shared + [c for c in cov_b.columns if c not in shared]
    partition = PartitionSpec(
        len(shared),
        len(order_a) - len(shared),
        len(order_b) - len(shared),
        labels=order_a + order_b[len(shared):],
    )
    sigma_a = cov_a.loc[order_a, order_a].to_numpy(dtype=float)
    sigma_b = cov_b.loc[order_b, order_b].to_numpy(dtype=float)
    return ObservedScatter(n_a * sigma_a, n_b * sigma_b, n_a, n_b, partition)

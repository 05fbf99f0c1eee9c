"""Exception hierarchy for filematch.

Every error raised on purpose by the library derives from FileMatchError and carries
the process exit code the CLI reports for it: 1 for numerical failures, 2 for bad
input or usage.
"""
from __future__ import annotations

from typing import Optional

EXIT_NUMERICAL = 1
EXIT_USAGE = 2


class FileMatchError(Exception):
    """Base exception for filematch errors.

    Args:
        message: Error description.
        exit_code: Optional override of the family exit code.
    """

    exit_code: int = EXIT_NUMERICAL

    def __init__(self, message: str, exit_code: Optional[int] = None):
        super().__init__(message)
        if exit_code is not None:
            self.exit_code = exit_code


class NumericalError(FileMatchError):
    """A computation could not be carried out reliably."""

    exit_code = EXIT_NUMERICAL


class RankDeficientError(NumericalError):
    """Fewer than the required number of directions exceed the rank tolerance."""


class SingularCovarianceError(NumericalError):
    """A covariance matrix that must be positive definite is numerically singular."""


class SingularMStepError(NumericalError):
    """The q x q system of the M-step is numerically singular."""


class SingularSubproblemError(NumericalError):
    """A least-squares subproblem of the alternating solver is rank deficient."""


class NonFiniteError(NumericalError):
    """A log-likelihood or objective became NaN or infinite."""


class InputError(FileMatchError):
    """Invalid arguments or malformed input data."""

    exit_code = EXIT_USAGE


class InvalidArgumentError(InputError):
    """An argument is outside its documented domain."""


class InvalidPartitionError(InputError):
    """The X/Y/Z partition violates its invariants."""


class DimensionMismatchError(InputError):
    """Matrix shapes do not agree with each other or with the partition."""


class MissingColumnError(InputError):
    """A required column is absent from an input file.

    Args:
        column: Name of the missing column (None when no shared column exists).
        detail: Extra context for the message.
    """

    def __init__(self, column: Optional[str], detail: str = ""):
        self.column = column
        if column is None:
            message = f"No shared columns found. {detail}".strip()
        else:
            message = f"Column '{column}' not found. {detail}".strip()
        super().__init__(message)


class NonNumericCellError(InputError):
    """A CSV cell could not be parsed as a number.

    Args:
        path: File the cell belongs to.
        row: 1-based line number in the file (the header is line 1).
        column: Column name.
        value: Raw cell content.
    """

    def __init__(self, path: str, row: int, column: str, value: str):
        self.path = path
        self.row = row
        self.column = column
        super().__init__(
            f"{path}: non-numeric cell {value!r} at line {row}, column '{column}'."
        )


class EmptyFileError(InputError):
    """An input file has no header or no data rows."""


class ZeroVarianceError(InputError):
    """A column has zero variance and cannot be scaled to unit variance."""


class SchemaMismatchError(InputError):
    """A model file does not match the expected schema."""


class VersionMismatchError(InputError):
    """A model file was written with an unsupported schema version."""

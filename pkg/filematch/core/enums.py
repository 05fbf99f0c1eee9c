"""Enumerations shared across filematch.

Identifiability criteria, preprocessing choices, estimation methods and CLI modes.
"""
from enum import Enum


class Criterion(str, Enum):
    """Identifiability criteria used to bound the number of factors."""
    C = "C"
    C_M = "C_M"
    ASSUMPTION2 = "Assumption2"

    def __str__(self) -> str:
        return self.value


class Block(str, Enum):
    """Variable groups of the file-matching pattern."""
    X = "X"
    Y = "Y"
    Z = "Z"

    def __str__(self) -> str:
        return self.value


class Centering(str, Enum):
    """How column means are removed before scatters are formed."""
    PER_DATASET = "per-dataset"
    POOLED_X = "pooled-X"

    def __str__(self) -> str:
        return self.value


class Scaling(str, Enum):
    """Optional rescaling applied after centering."""
    NONE = "none"
    UNIT_VARIANCE = "unit-variance"

    def __str__(self) -> str:
        return self.value


class Method(str, Enum):
    """Estimators of the unobserved YZ block compared by the benchmark."""
    FM = "fm"
    FM_WARM = "fm_warm"
    CIA = "cia"
    ALS = "als"
    SOFT_IMPUTE = "softimpute"
    SVD_IMPUTE = "svdimpute"
    COMPLETE = "complete"

    def __str__(self) -> str:
        return self.value


class CompletionMode(str, Enum):
    """How the `complete` subcommand recovers the YZ block."""
    EM = "em"
    GRAM = "gram"

    def __str__(self) -> str:
        return self.value


class Experiment(str, Enum):
    """Experiments available under the `simulate` subcommand."""
    IDENTIFIABILITY = "identifiability"
    BIC = "bic"
    DATA = "data"

    def __str__(self) -> str:
        return self.value

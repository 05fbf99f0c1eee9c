"""Shared fixtures for the filematch test suite."""
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd
import pytest

from filematch.models.domain.factor_model import FactorModel
from filematch.models.domain.partition import PartitionSpec
from filematch.models.domain.scatter import ObservedScatter


@pytest.fixture
def partition_222() -> PartitionSpec:
    """Two variables in each group."""
    return PartitionSpec(2, 2, 2)


@pytest.fixture
def partition_333() -> PartitionSpec:
    return PartitionSpec(3, 3, 3)


@pytest.fixture
def one_factor_model(partition_222: PartitionSpec) -> FactorModel:
    """Well-conditioned one-factor model on six variables."""
    loadings = np.array([1.5, 1.2, 0.9, 1.4, 1.1, 0.8])
    psi = np.array([0.6, 0.8, 0.7, 0.5, 0.9, 0.6])
    return FactorModel(loadings, psi, partition_222)


@pytest.fixture
def two_factor_model(partition_333: PartitionSpec) -> FactorModel:
    """Random two-factor model on nine variables (fixed seed)."""
    rng = np.random.default_rng(7)
    loadings = rng.normal(1.0, 1.0, size=(9, 2))
    psi = rng.uniform(0.5, 1.5, size=9)
    return FactorModel(loadings, psi, partition_333)


@pytest.fixture
def population_scatter(one_factor_model: FactorModel) -> ObservedScatter:
    """Scatters equal to n * Sigma_A and n * Sigma_B of the one-factor model."""
    return ObservedScatter.population(
        one_factor_model.full_covariance(), one_factor_model.partition, 400, 600
    )


@pytest.fixture
def csv_pair(tmp_path: Path) -> Tuple[Path, Path]:
    """Two small CSV files sharing x1 and x2."""
    rng = np.random.default_rng(3)
    path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
    pd.DataFrame(rng.normal(size=(8, 3)), columns=["x1", "x2", "y1"]).to_csv(path_a, index=False)
    pd.DataFrame(rng.normal(size=(6, 3)), columns=["x1", "x2", "z1"]).to_csv(path_b, index=False)
    return path_a, path_b

"""Pydantic schemas for configuration objects, result tables and the model file.

This module defines the validated structures passed between the services and the CLI:
EM configuration (with its two initialisation variants), simulation designs,
identifiability reports, BIC tables, experiment records and the persisted model file.
"""

from __future__ import annotations

from fractions import Fraction
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from filematch.core.config import settings
from filematch.core.enums import Criterion, Method
from filematch.models.domain.factor_model import FactorModel
from filematch.models.domain.partition import PartitionSpec
from filematch.models.domain.report import FitReport


class TunedModel(BaseModel):
    """
    Base pydantic model with the shared configuration.

    Instances are immutable and may hold the numpy-backed domain objects.
    """
    model_config = ConfigDict(
        frozen=True,
        arbitrary_types_allowed=True,
        use_enum_values=True,
    )


class RandomInit(TunedModel):
    """
    Random-start protocol: ``restarts`` short runs of ``burn_iters`` iterations from
    standard normal loadings, the best of which is iterated to convergence.
    """
    kind: Literal["random"] = "random"
    restarts: int = Field(default_factory=lambda: settings.EM_RESTARTS, ge=1)
    burn_iters: int = Field(default_factory=lambda: settings.EM_BURN_ITERS, ge=0)


class SuppliedInit(TunedModel):
    """Start EM from a given model."""
    kind: Literal["supplied"] = "supplied"
    model: FactorModel


InitSpec = Annotated[Union[RandomInit, SuppliedInit], Field(discriminator="kind")]


class EMConfig(TunedModel):
    """
    Settings of one EM fit.

    Attributes:
        max_iter: Iteration cap of the main run.
        tol: Relative log-likelihood change |dl| / (|l| + 1) that ends the run.
        seed: Seed of the random-init protocol (None selects the configured default).
        init: RandomInit or SuppliedInit.
        psi_floor_scale: Uniqueness floor relative to the largest observed variance.
        stop_early: End the main run once the change falls below ``tol``; when False
            the run always takes ``max_iter`` iterations.
    """
    max_iter: int = Field(default_factory=lambda: settings.EM_MAX_ITER, ge=1)
    tol: float = Field(default_factory=lambda: settings.EM_TOL, gt=0)
    seed: Optional[int] = None
    init: InitSpec = Field(default_factory=RandomInit)
    psi_floor_scale: float = Field(default_factory=lambda: settings.PSI_FLOOR_SCALE, ge=0)
    stop_early: bool = True


class SimDesign(TunedModel):
    """
    Generative design of a simulation.

    Loadings are drawn from N(loading_mean, loading_sd^2); uniquenesses are D_j^2 with
    D_j ~ N(uniqueness_base, uniqueness_sd^2).
    """
    partition: PartitionSpec
    q_true: int = Field(ge=1)
    n_a: int = Field(default=1000, ge=1)
    n_b: int = Field(default=1000, ge=1)
    loading_mean: float = 2.0
    loading_sd: float = Field(default=1.0, ge=0)
    uniqueness_base: float = 3.0
    uniqueness_sd: float = Field(default=0.1, ge=0)
    standardize: bool = False
    seed: Optional[int] = None

    @property
    def n(self) -> int:
        return self.n_a + self.n_b


class IdentifiabilityReport(TunedModel):
    """
    Identifiability diagnostics for one (partition, q) pair.

    Attributes:
        C: Degrees of freedom of the complete-case model.
        C_M: Degrees of freedom left once the p_Y * p_Z unobserved entries are removed.
        assumption1_dim_ok: q <= p_X.
        assumption2_dim_ok: 2q < p_X + p_Y and 2q < p_X + p_Z.
        numeric_assumption1: Rank of a given Lambda_X equals q (None without a model).
        numeric_assumption2: Row-deletion test on Lambda_A and Lambda_B (None when not
            checked).
    """
    p_x: int
    p_y: int
    p_z: int
    q: int
    C: Fraction
    C_M: Fraction
    assumption1_dim_ok: bool
    assumption2_dim_ok: bool
    numeric_assumption1: Optional[bool] = None
    numeric_assumption2: Optional[bool] = None

    def feasible(self, criterion: Union[Criterion, str]) -> bool:
        """Verdict of one criterion of the maximum-factor table."""
        criterion = Criterion(criterion)
        if criterion is Criterion.C:
            return self.C >= 0
        if criterion is Criterion.C_M:
            return self.C_M >= 0
        return self.assumption1_dim_ok and self.assumption2_dim_ok


class BICRow(TunedModel):
    """One q of a BIC sweep; failed fits keep their error message and no score."""
    q: int
    loglik: Optional[float] = None
    free_params: int
    bic: Optional[float] = None
    feasible_C: bool
    feasible_CM: bool
    feasible_A2: bool
    converged: Optional[bool] = None
    error: Optional[str] = None
    report: Optional[FitReport] = Field(default=None, exclude=True, repr=False)


class BICTable(TunedModel):
    """
    Result of a BIC sweep over q.

    Attributes:
        rows: One row per q, ordered by q.
        n: Sample size used in the penalty.
        p: Number of variables.
    """
    rows: List[BICRow]
    n: int
    p: int

    @property
    def selected_q(self) -> Optional[int]:
        """q with the smallest BIC, smaller q on ties; None when every row failed."""
        scored = [row for row in self.rows if row.bic is not None]
        if not scored:
            return None
        return min(scored, key=lambda row: (row.bic, row.q)).q

    def row(self, q: int) -> BICRow:
        for row in self.rows:
            if row.q == q:
                return row
        raise KeyError(q)

    def to_frame(self) -> pd.DataFrame:
        selected = self.selected_q
        return pd.DataFrame(
            {
                "q": [row.q for row in self.rows],
                "loglik": [row.loglik for row in self.rows],
                "free_params": [row.free_params for row in self.rows],
                "bic": [row.bic for row in self.rows],
                "feasible_C": [row.feasible_C for row in self.rows],
                "feasible_CM": [row.feasible_CM for row in self.rows],
                "feasible_A2": [row.feasible_A2 for row in self.rows],
                "selected": [row.q == selected for row in self.rows],
            }
        )


class BenchmarkRecord(TunedModel):
    """Outcome of one method on one permutation replicate."""
    permutation: int
    method: Method
    mse_yz: Optional[float] = Field(default=None, ge=0)
    runtime: float = 0.0
    converged: Optional[bool] = None
    error: Optional[str] = None


class BenchmarkResult(TunedModel):
    """Per-replicate benchmark records and their per-method summary."""
    records: List[BenchmarkRecord]
    methods: List[Method]

    def errors(self, method: Union[Method, str]) -> np.ndarray:
        method = Method(method)
        return np.array(
            [
                r.mse_yz
                for r in self.records
                if r.method == method and r.mse_yz is not None
            ],
            dtype=float,
        )

    def median(self, method: Union[Method, str]) -> float:
        values = self.errors(method)
        return float(np.median(values)) if values.size else float("nan")

    def summary(self) -> pd.DataFrame:
        """Median, interquartile range and successful-run count per method."""
        rows = []
        for method in self.methods:
            values = self.errors(method)
            if values.size:
                q1, q3 = np.percentile(values, [25, 75])
                rows.append((str(method), float(np.median(values)), float(q3 - q1), values.size))
            else:
                rows.append((str(method), float("nan"), float("nan"), 0))
        return pd.DataFrame(rows, columns=["method", "median", "iqr", "n_ok"])

    def to_frame(self, include_runtime: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "permutation": [r.permutation for r in self.records],
                "method": [str(r.method) for r in self.records],
                "mse_yz": [r.mse_yz for r in self.records],
                "converged": [r.converged for r in self.records],
                "error": [r.error or "" for r in self.records],
            }
        )
        if include_runtime:
            frame["runtime"] = [r.runtime for r in self.records]
        return frame

    @property
    def failed(self) -> bool:
        """True when no record produced an estimate."""
        return all(r.mse_yz is None for r in self.records)


class IdentifiabilityRecord(TunedModel):
    """EM run from one random start of the identifiability experiment."""
    q: int
    seed_index: int
    mse_yz: Optional[float] = None
    mse_observed: Optional[float] = None
    iterations: int = 0
    converged: bool = False
    monotone: bool = True
    error: Optional[str] = None


class IdentifiabilityResult(TunedModel):
    records: List[IdentifiabilityRecord]

    def panel(self, q: int) -> List[IdentifiabilityRecord]:
        return [r for r in self.records if r.q == q]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "q": [r.q for r in self.records],
                "seed_index": [r.seed_index for r in self.records],
                "mse_yz": [r.mse_yz for r in self.records],
                "mse_observed": [r.mse_observed for r in self.records],
                "iterations": [r.iterations for r in self.records],
                "converged": [r.converged for r in self.records],
                "monotone": [r.monotone for r in self.records],
                "error": [r.error or "" for r in self.records],
            }
        )


class BICReplicate(TunedModel):
    """
    One replicate of the BIC experiment.

    Attributes:
        q_selected: BIC choice using the observed-data likelihood.
        q_complete_selected: BIC choice of the complete-case fit on the same rows.
        mse_cia: Error of the conditional-independence estimate.
        mse_by_q: Error of the file-matching estimate for every q of the sweep.
    """
    replicate: int
    q_selected: Optional[int] = None
    q_complete_selected: Optional[int] = None
    mse_cia: Optional[float] = None
    mse_by_q: Dict[int, Optional[float]] = Field(default_factory=dict)
    error: Optional[str] = None


class BICExperimentResult(TunedModel):
    replicates: List[BICReplicate]
    q_values: List[int]

    def selection_counts(self) -> Dict[int, int]:
        """Number of replicates whose BIC picked each q."""
        counts = {q: 0 for q in self.q_values}
        for rep in self.replicates:
            if rep.q_selected is not None:
                counts[rep.q_selected] = counts.get(rep.q_selected, 0) + 1
        return counts

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "replicate": [r.replicate for r in self.replicates],
                "q_selected": pd.array(
                    [r.q_selected for r in self.replicates], dtype="Int64"
                ),
                "q_complete_selected": pd.array(
                    [r.q_complete_selected for r in self.replicates], dtype="Int64"
                ),
                "mse_cia": [r.mse_cia for r in self.replicates],
            }
        )
        for q in self.q_values:
            frame[f"mse_q{q}"] = [r.mse_by_q.get(q) for r in self.replicates]
        return frame


class PartitionFile(TunedModel):
    p_x: int = Field(ge=1)
    p_y: int = Field(ge=1)
    p_z: int = Field(ge=1)
    labels: Optional[List[str]] = None


class ModelFile(TunedModel):
    """
    Versioned on-disk representation of a fitted factor model.

    ``lambda`` holds the loadings row by row in (X, Y, Z) order.
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    version: int
    q: int = Field(ge=1)
    partition: PartitionFile
    loadings: List[List[float]] = Field(alias="lambda")
    psi: List[float]
    loglik: Optional[float] = None
    converged: Optional[bool] = None
    seed: Optional[int] = None

    @field_validator("loadings")
    @classmethod
    def rows_have_equal_length(cls, value: List[List[float]]) -> List[List[float]]:
        if len({len(row) for row in value}) > 1:
            raise ValueError("all rows of lambda must have the same length")
        return value

    @classmethod
    def from_model(
        cls,
        model: FactorModel,
        loglik: Optional[float] = None,
        converged: Optional[bool] = None,
        seed: Optional[int] = None,
    ) -> ModelFile:
        pt = model.partition
        return cls(
            version=settings.MODEL_FILE_VERSION,
            q=model.q,
            partition=PartitionFile(
                p_x=pt.p_x,
                p_y=pt.p_y,
                p_z=pt.p_z,
                labels=list(pt.labels) if pt.labels is not None else None,
            ),
            loadings=[[float(v) for v in row] for row in model.loadings],
            psi=[float(v) for v in model.psi],
            loglik=loglik,
            converged=converged,
            seed=seed,
        )

    @classmethod
    def from_report(cls, report: FitReport) -> ModelFile:
        return cls.from_model(
            report.model, report.final_loglik, report.converged, report.seed
        )

    def to_partition(self) -> PartitionSpec:
        p = self.partition
        return PartitionSpec(p.p_x, p.p_y, p.p_z, p.labels)

    def to_model(self) -> FactorModel:
        loadings = np.array(self.loadings, dtype=float).reshape(len(self.loadings), self.q)
        return FactorModel(loadings, np.array(self.psi, dtype=float), self.to_partition())


class CommandConfig(TunedModel):
    """Global options shared by every subcommand."""
    subcommand: Literal["check", "fit", "complete", "select-q", "simulate", "benchmark"]
    seed: int = Field(default_factory=lambda: settings.SEED)
    threads: Optional[int] = Field(default_factory=lambda: settings.THREADS, ge=1)
    output: Optional[Path] = None
    verbosity: int = Field(default=0, ge=0)

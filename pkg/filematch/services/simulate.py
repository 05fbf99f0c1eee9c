"""Simulation designs and experiment harnesses.

Model sampling, multivariate normal draws split into two files, the error metric on
Sigma_YZ, and the three experiments: random-start identifiability, the variable
permutation benchmark and BIC replicates. Every random draw comes from a stream keyed
by (seed, task indices), so results do not depend on thread scheduling.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

from filematch.core.config import settings
from filematch.core.enums import Method
from filematch.core.exceptions import DimensionMismatchError, FileMatchError, InvalidArgumentError
from filematch.core.rng import derive_seed, resolve_seed, stream
from filematch.models.domain.covariance import PartialCovariance
from filematch.models.domain.factor_model import FactorModel
from filematch.models.domain.partition import PartitionSpec
from filematch.models.domain.report import FitReport
from filematch.models.domain.scatter import ObservedScatter
from filematch.models.schemas import (
    BenchmarkRecord,
    BenchmarkResult,
    BICExperimentResult,
    BICReplicate,
    EMConfig,
    IdentifiabilityRecord,
    IdentifiabilityResult,
    RandomInit,
    SimDesign,
    SuppliedInit,
)
from filematch.rules.identifiability import max_factors
from filematch.services import baselines
from filematch.services.em_engine import EMEngine
from filematch.services.model_selection import select_q, select_q_complete

log = logging.getLogger(__name__)

T = TypeVar("T")

IDENTIFIABILITY_TOL = 1e-15


def _map(function: Callable[[int], T], count: int, threads: Optional[int]) -> List[T]:
    """Applies ``function`` to 0..count-1, results in index order."""
    workers = settings.THREADS if threads is None else threads
    if count <= 1 or workers == 1:
        return [function(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(function, range(count)))


def default_design(
    p_x: int = 4,
    p_y: int = 4,
    p_z: int = 4,
    q_true: int = 3,
    seed: Optional[int] = None,
    **overrides: Union[int, float, bool],
) -> SimDesign:
    """Design with N(2, 1) loadings and D_j ~ N(3, 0.01) uniquenesses Psi_jj = D_j^2."""
    return SimDesign(
        partition=PartitionSpec(p_x, p_y, p_z),
        q_true=q_true,
        seed=resolve_seed(seed),
        **overrides,
    )


def sample_model(design: SimDesign) -> Tuple[FactorModel, np.ndarray]:
    """
    Draws (Lambda, Psi) from the design.

    With ``standardize`` the rows of Lambda and the entries of Psi are divided by the
    implied standard deviations (resp. variances), so the implied Sigma is a
    correlation matrix.

    Returns:
        The model and its implied p x p covariance.
    """
    pt = design.partition
    rng = stream(design.seed, 0)
    loadings = design.loading_mean + design.loading_sd * rng.standard_normal((pt.p, design.q_true))
    d = design.uniqueness_base + design.uniqueness_sd * rng.standard_normal(pt.p)
    psi = d ** 2
    if design.standardize:
        sd = np.sqrt(np.sum(loadings ** 2, axis=1) + psi)
        loadings = loadings / sd[:, None]
        psi = psi / sd ** 2
    model = FactorModel(loadings, psi, pt)
    return model, model.full_covariance()


def sample_complete(model: FactorModel, n: int, seed: Optional[int]) -> np.ndarray:
    """n rows of N(0, Lambda Lambda^T + Psi) through the Cholesky factor."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}.")
    chol = linalg.cholesky(model.full_covariance(), lower=True)
    rng = stream(seed, 1)
    return rng.standard_normal((n, model.p)) @ chol.T


def _centered(data: np.ndarray) -> np.ndarray:
    return data - data.mean(axis=0)


def scatter_of(data_a: np.ndarray, data_b: np.ndarray, partition: PartitionSpec) -> ObservedScatter:
    """Scatters of the per-file centred data."""
    ca, cb = _centered(data_a), _centered(data_b)
    return ObservedScatter(ca.T @ ca, cb.T @ cb, ca.shape[0], cb.shape[0], partition)


def sample_datasets(
    model: FactorModel, n_a: int, n_b: int, seed: Optional[int]
) -> Tuple[np.ndarray, np.ndarray, ObservedScatter]:
    """
    Draws n_A rows of (X, Y) and n_B rows of (X, Z).

    Returns:
        The raw data of both files and the scatters of the centred data.
    """
    pt = model.partition
    rows = sample_complete(model, n_a + n_b, seed)
    data_a = rows[:n_a][:, pt.index_a]
    data_b = rows[n_a:][:, pt.index_b]
    return data_a, data_b, scatter_of(data_a, data_b, pt)


def mse_yz(estimate: ArrayLike, truth: ArrayLike) -> float:
    """||estimate - truth||_F^2 / (p_Y p_Z)."""
    estimate = np.atleast_2d(np.asarray(estimate, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if estimate.shape != truth.shape:
        raise DimensionMismatchError(f"Shapes {estimate.shape} and {truth.shape} differ.")
    return float(np.sum((estimate - truth) ** 2) / truth.size)


def mse_observed(sigma_hat: np.ndarray, sigma: np.ndarray, partition: PartitionSpec) -> float:
    """Mean squared error over the covariance entries both files observe."""
    mask = partition.observed_mask()
    return float(np.mean((sigma_hat - sigma)[mask] ** 2))


def run_identifiability_experiment(
    design: Optional[SimDesign] = None,
    q_values: Sequence[int] = (3, 4, 5),
    n_seeds: int = 50,
    max_iter: int = 10000,
    tol: float = IDENTIFIABILITY_TOL,
    seed: Optional[int] = None,
    start_from_truth: bool = False,
    threads: Optional[int] = None,
    stop_early: bool = False,
) -> IdentifiabilityResult:
    """
    EM from single random starts on population-exact scatters.

    Each q in ``q_values`` gets its own covariance matrix, drawn from the design with
    ``q_true`` replaced by q, and is fitted with that same q. The scatters are
    n_A * Sigma_A and n_B * Sigma_B for the design's nominal counts. For each q and
    seed index one random start (no burn-in) runs ``max_iter`` iterations, or fewer
    with ``stop_early``; the run records the error on Sigma_YZ and on the observed
    blocks. ``start_from_truth`` replaces the random start by the true model.
    """
    seed = resolve_seed(seed)
    design = design or default_design(seed=seed)
    pt = design.partition
    truths = {q: sample_model(design.model_copy(update={"q_true": q})) for q in q_values}
    scatters = {
        q: ObservedScatter.population(sigma, pt, design.n_a, design.n_b)
        for q, (_, sigma) in truths.items()
    }
    tasks = [(q, s) for q in q_values for s in range(n_seeds)]
    engine = EMEngine(threads=1)

    def run(index: int) -> IdentifiabilityRecord:
        q, s = tasks[index]
        truth_model, sigma = truths[q]
        init: Union[RandomInit, SuppliedInit]
        if start_from_truth:
            init = SuppliedInit(model=truth_model)
        else:
            init = RandomInit(restarts=1, burn_iters=0)
        config = EMConfig(
            max_iter=max_iter,
            tol=tol,
            seed=derive_seed(seed, q, s),
            init=init,
            stop_early=stop_early,
        )
        try:
            report = engine.fit(scatters[q], q, config)
        except FileMatchError as exc:
            log.warning("Identifiability run q=%d seed #%d failed: %s", q, s, exc)
            return IdentifiabilityRecord(q=q, seed_index=s, error=str(exc))
        fitted = report.model.full_covariance()
        return IdentifiabilityRecord(
            q=q,
            seed_index=s,
            mse_yz=mse_yz(fitted[pt.y, pt.z], sigma[pt.y, pt.z]),
            mse_observed=mse_observed(fitted, sigma, pt),
            iterations=report.iterations,
            converged=report.converged,
            monotone=report.is_monotone(),
        )

    records = _map(run, len(tasks), threads)
    log.info("Identifiability experiment finished: %d runs.", len(records))
    return IdentifiabilityResult(records=records)


class _Replicate:
    """One random allocation of the variables to X, Y, Z and of the rows to A, B."""

    def __init__(
        self, rows: np.ndarray, sizes: Tuple[int, int, int], n_a: int, seed: int, index: int
    ) -> None:
        rng = stream(seed, 2, index)
        columns = rng.permutation(rows.shape[1])
        order = rng.permutation(rows.shape[0])
        self.partition = PartitionSpec(*sizes)
        self.complete = rows[order][:, columns]
        pt = self.partition
        self.data_a = _centered(self.complete[:n_a][:, pt.index_a])
        self.data_b = _centered(self.complete[n_a:][:, pt.index_b])
        self.scatter = scatter_of(self.data_a, self.data_b, pt)
        centred = _centered(self.complete)
        self.complete_scatter = centred.T @ centred
        self.n = self.complete.shape[0]
        self.truth = self.complete_scatter[pt.y, pt.z] / self.n


def _complete_rows(
    design: Optional[SimDesign], data: Optional[ArrayLike], seed: int
) -> Tuple[np.ndarray, Optional[SimDesign]]:
    if data is not None:
        rows = np.asarray(data, dtype=float)
        if rows.ndim != 2:
            raise DimensionMismatchError("Complete data must be a 2-D matrix.")
        return rows, design
    if design is None:
        raise InvalidArgumentError("Either a design or complete data is required.")
    model, _ = sample_model(design)
    return sample_complete(model, design.n, derive_seed(seed, 1)), design


def _estimate(
    method: Method,
    rep: _Replicate,
    q: int,
    config: EMConfig,
    engine: EMEngine,
    cache: Dict[str, FitReport],
    seed: int,
) -> Tuple[np.ndarray, Optional[bool]]:
    pt = rep.partition

    def complete_fit() -> FitReport:
        if "complete" not in cache:
            cache["complete"] = engine.fit_complete(rep.complete_scatter, rep.n, q, config, pt)
        return cache["complete"]

    if method is Method.FM:
        report = engine.fit(rep.scatter, q, config)
        return report.model.implied_yz(), report.converged
    if method is Method.FM_WARM:
        start = complete_fit().model
        warm = config.model_copy(update={"init": SuppliedInit(model=start)})
        report = engine.fit(rep.scatter, q, warm)
        return report.model.implied_yz(), report.converged
    if method is Method.COMPLETE:
        report = complete_fit()
        return report.model.implied_yz(), report.converged
    if method is Method.CIA:
        return baselines.cia_estimate(PartialCovariance.from_scatter(rep.scatter)), None
    if method is Method.ALS:
        imputed = baselines.als_complete(rep.data_a, rep.data_b, pt, q)
    elif method is Method.SOFT_IMPUTE:
        imputed = baselines.soft_impute(rep.data_a, rep.data_b, pt, seed=seed)
    elif method is Method.SVD_IMPUTE:
        imputed = baselines.svd_impute(rep.data_a, rep.data_b, pt, q)
    else:
        raise InvalidArgumentError(f"Unknown method {method!r}.")
    return baselines.covariance_from_imputed(imputed), None


def run_permutation_benchmark(
    sizes: Tuple[int, int, int],
    q: int,
    methods: Sequence[Union[Method, str]],
    design: Optional[SimDesign] = None,
    data: Optional[ArrayLike] = None,
    n_a: Optional[int] = None,
    n_perms: int = 100,
    seed: Optional[int] = None,
    config: Optional[EMConfig] = None,
    threads: Optional[int] = None,
) -> BenchmarkResult:
    """
    Scores every method on random re-allocations of one complete dataset.

    Per permutation the columns are shuffled and split into X, Y, Z of the given
    sizes, the rows are shuffled and split into the two files, the Z_A and Y_B blocks
    are hidden, and each method's Sigma_YZ estimate is compared with the sample
    Sigma_YZ of the complete data. Failures are recorded per method.

    Args:
        sizes: (p_X, p_Y, p_Z).
        q: Number of factors (or rank) used by the model-based methods.
        methods: Methods to run, in output order.
        design: Simulation design providing the complete rows (when ``data`` is None).
        data: Complete n x p data matrix.
        n_a: Rows allocated to dataset A (default: the design's n_A, or half).
    """
    seed = resolve_seed(seed)
    rows, design = _complete_rows(design, data, seed)
    if sum(sizes) != rows.shape[1]:
        raise DimensionMismatchError(f"Sizes {sizes} do not add up to p={rows.shape[1]}.")
    if n_a is None:
        n_a = design.n_a if design is not None and data is None else rows.shape[0] // 2
    if not 2 <= n_a <= rows.shape[0] - 2:
        raise InvalidArgumentError(f"n_A={n_a} leaves fewer than two rows in a file.")
    method_list = [Method(m) for m in methods]
    engine = EMEngine(threads=1)
    base_config = config or EMConfig(seed=seed)
    config_seed = seed if base_config.seed is None else base_config.seed

    def run(index: int) -> List[BenchmarkRecord]:
        rep = _Replicate(rows, sizes, n_a, seed, index)
        rep_config = base_config.model_copy(update={"seed": derive_seed(config_seed, 3, index)})
        cache: Dict[str, FitReport] = {}
        out = []
        for method in method_list:
            started = time.perf_counter()
            try:
                estimate, converged = _estimate(
                    method, rep, q, rep_config, engine, cache, derive_seed(seed, 4, index)
                )
                out.append(
                    BenchmarkRecord(
                        permutation=index,
                        method=method,
                        mse_yz=mse_yz(estimate, rep.truth),
                        runtime=time.perf_counter() - started,
                        converged=converged,
                    )
                )
            except FileMatchError as exc:
                log.warning("Permutation %d, method %s failed: %s", index, method, exc)
                out.append(
                    BenchmarkRecord(
                        permutation=index,
                        method=method,
                        runtime=time.perf_counter() - started,
                        error=str(exc),
                    )
                )
        log.info("Permutation %d done.", index)
        return out

    batches = _map(run, n_perms, threads)
    return BenchmarkResult(
        records=[record for batch in batches for record in batch], methods=method_list
    )


def run_bic_experiment(
    design: SimDesign,
    q_values: Optional[Sequence[int]] = None,
    n_replicates: int = 20,
    seed: Optional[int] = None,
    config: Optional[EMConfig] = None,
    threads: Optional[int] = None,
) -> BICExperimentResult:
    """
    BIC replicates on one simulated dataset.

    Each replicate re-allocates the variables and rows at random, runs the
    file-matching and complete-case BIC sweeps over ``q_values`` (default 1 up to the
    largest q meeting both rank assumptions), and scores every fitted q on Sigma_YZ
    together with the conditional-independence estimate.
    """
    seed = resolve_seed(seed)
    pt = design.partition
    sizes = (pt.p_x, pt.p_y, pt.p_z)
    if q_values is None:
        q_values = range(1, max(1, max_factors(*sizes, "Assumption2")) + 1)
    q_list = sorted(set(int(q) for q in q_values))
    rows, _ = _complete_rows(design, None, seed)
    engine = EMEngine(threads=1)
    base_config = config or EMConfig(seed=seed)
    config_seed = seed if base_config.seed is None else base_config.seed

    def run(index: int) -> BICReplicate:
        rep = _Replicate(rows, sizes, design.n_a, seed, index)
        rep_config = base_config.model_copy(update={"seed": derive_seed(config_seed, 5, index)})
        try:
            table = select_q(rep.scatter, q_list, rep_config, engine)
            complete_table = select_q_complete(
                rep.complete_scatter, rep.n, q_list, rep.partition, rep_config, engine
            )
            mse_cia = mse_yz(
                baselines.cia_estimate(PartialCovariance.from_scatter(rep.scatter)), rep.truth
            )
        except FileMatchError as exc:
            log.warning("BIC replicate %d failed: %s", index, exc)
            return BICReplicate(replicate=index, error=str(exc))
        by_q: Dict[int, Optional[float]] = {}
        for row in table.rows:
            by_q[row.q] = (
                mse_yz(row.report.model.implied_yz(), rep.truth) if row.report is not None else None
            )
        log.info(
            "BIC replicate %d: q*=%s, complete-case q*=%s.",
            index,
            table.selected_q,
            complete_table.selected_q,
        )
        return BICReplicate(
            replicate=index,
            q_selected=table.selected_q,
            q_complete_selected=complete_table.selected_q,
            mse_cia=mse_cia,
            mse_by_q=by_q,
        )

    replicates = _map(run, n_replicates, threads)
    return BICExperimentResult(replicates=replicates, q_values=q_list)

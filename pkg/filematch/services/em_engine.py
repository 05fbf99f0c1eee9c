"""Maximum-likelihood estimation of the factor model by EM.

Two variants share one iteration loop:

* file-matching EM on the scatters P (dataset A) and T (dataset B); the E-step fills
  in the expected scatter of the never-observed blocks through the conditional
  regressions of Z on (X, Y) and of Y on (X, Z);
* complete-case EM on a full p x p scatter, where the E-step is the identity.

Both M-steps use the same closed-form update of Lambda and Psi.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg
from scipy.linalg import cho_solve

from filematch.core.config import settings
from filematch.core.exceptions import (
    DimensionMismatchError,
    InvalidArgumentError,
    NonFiniteError,
    NumericalError,
    SingularMStepError,
)
from filematch.core.rng import resolve_seed, stream
from filematch.models.domain.factor_model import FactorModel
from filematch.models.domain.matrices import (
    cholesky,
    exact_symmetric,
    frozen,
    is_symmetric,
    log_determinant,
)
from filematch.models.domain.partition import PartitionSpec
from filematch.models.domain.report import FitReport
from filematch.models.domain.scatter import ObservedScatter
from filematch.models.schemas import EMConfig, RandomInit, SuppliedInit
from filematch.rules.identifiability import dimension_warnings

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


def _gaussian_loglik(sigma: np.ndarray, scatter: np.ndarray, n: int, name: str) -> float:
    factor = cholesky(sigma, name)
    trace = float(np.trace(cho_solve(factor, scatter)))
    m = sigma.shape[0]
    return -0.5 * n * log_determinant(factor) - 0.5 * trace - 0.5 * n * m * LOG_2PI


def loglik_observed(model: FactorModel, scatter: ObservedScatter) -> float:
    """
    log L_A + log L_B of the model marginals, 2*pi constants included.

    Raises:
        SingularCovarianceError: If either marginal covariance is not positive definite.
    """
    sigma_a, sigma_b = model.marginal_covariances()
    return _gaussian_loglik(sigma_a, scatter.P, scatter.n_a, "Sigma_A") + _gaussian_loglik(
        sigma_b, scatter.T, scatter.n_b, "Sigma_B"
    )


def loglik_complete(model: FactorModel, scatter: ArrayLike, n: int) -> float:
    """Gaussian log-likelihood of n complete rows with scatter S."""
    scatter = frozen(scatter, (model.p, model.p), "S")
    return _gaussian_loglik(model.full_covariance(), scatter, n, "Sigma")


class EStepIntermediates:
    """
    Quantities computed by one file-matching E-step.

    Attributes:
        beta: q x p matrix Lambda^T Sigma^{-1}.
        omega: p_Z x (p_X + p_Y) regression of Z on (X, Y).
        alpha: p_Y x (p_X + p_Z) regression of Y on (X, Z).
        sigma_z_given_xy: Conditional covariance of Z given (X, Y).
        sigma_y_given_xz: Conditional covariance of Y given (X, Z).
        p_tilde: Expected complete scatter of dataset A (p x p, (X, Y, Z) order).
        t_tilde: Expected complete scatter of dataset B.
        s_tilde: p_tilde + t_tilde.
    """

    def __init__(
        self,
        beta: np.ndarray,
        omega: np.ndarray,
        alpha: np.ndarray,
        sigma_z_given_xy: np.ndarray,
        sigma_y_given_xz: np.ndarray,
        p_tilde: np.ndarray,
        t_tilde: np.ndarray,
    ) -> None:
        self.beta = beta
        self.omega = omega
        self.alpha = alpha
        self.sigma_z_given_xy = sigma_z_given_xy
        self.sigma_y_given_xz = sigma_y_given_xz
        self.p_tilde = p_tilde
        self.t_tilde = t_tilde
        self.s_tilde = exact_symmetric(p_tilde + t_tilde)


def _beta(model: FactorModel, sigma: np.ndarray) -> np.ndarray:
    return cho_solve(cholesky(sigma, "Sigma"), model.loadings).T


def estep(model: FactorModel, scatter: ObservedScatter) -> EStepIntermediates:
    """
    Expected complete-data scatter given the two observed scatters.

    Raises:
        SingularCovarianceError: If a marginal covariance is not positive definite.
    """
    pt = model.partition
    if scatter.partition.p_x != pt.p_x or scatter.partition.p != pt.p:
        raise DimensionMismatchError("Model and scatter partitions differ.")
    sigma = model.full_covariance()
    ia, ib = pt.index_a, pt.index_b
    y_index = np.arange(pt.p_x, pt.p_a)
    pa = pt.p_a
    y, z = pt.y, pt.z

    sigma_a = sigma[np.ix_(ia, ia)]
    sigma_b = sigma[np.ix_(ib, ib)]
    omega = cho_solve(cholesky(sigma_a, "Sigma_A"), sigma[:pa, z]).T
    alpha = cho_solve(cholesky(sigma_b, "Sigma_B"), sigma[np.ix_(ib, y_index)]).T
    sigma_z_given_xy = exact_symmetric(sigma[z, z] - omega @ sigma[:pa, z])
    sigma_y_given_xz = exact_symmetric(sigma[y, y] - alpha @ sigma[np.ix_(ib, y_index)])

    P, T = scatter.P, scatter.T
    p_tilde = np.zeros((pt.p, pt.p))
    p_tilde[:pa, :pa] = P
    p_cross = P @ omega.T
    p_tilde[:pa, z] = p_cross
    p_tilde[z, :pa] = p_cross.T
    p_tilde[z, z] = omega @ p_cross + scatter.n_a * sigma_z_given_xy

    t_tilde = np.zeros((pt.p, pt.p))
    t_tilde[np.ix_(ib, ib)] = T
    t_cross = T @ alpha.T
    t_tilde[np.ix_(ib, y_index)] = t_cross
    t_tilde[np.ix_(y_index, ib)] = t_cross.T
    t_tilde[np.ix_(y_index, y_index)] = alpha @ t_cross + scatter.n_b * sigma_y_given_xz

    return EStepIntermediates(
        beta=_beta(model, sigma),
        omega=omega,
        alpha=alpha,
        sigma_z_given_xy=sigma_z_given_xy,
        sigma_y_given_xz=sigma_y_given_xz,
        p_tilde=exact_symmetric(p_tilde),
        t_tilde=exact_symmetric(t_tilde),
    )


def mstep(
    s_tilde: ArrayLike, model: FactorModel, n: int, psi_floor: float = 0.0
) -> FactorModel:
    """
    Closed-form update of (Lambda, Psi) from an expected scatter.

    Lambda_new = S beta^T (n I - n beta Lambda + beta S beta^T)^{-1} and
    Psi_new = diag(S - Lambda_new beta S) / n, floored at ``psi_floor``.

    Raises:
        SingularMStepError: If the q x q system is numerically singular.
    """
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}.")
    S = np.asarray(s_tilde, dtype=float)
    if S.shape != (model.p, model.p) or not is_symmetric(S):
        raise DimensionMismatchError(f"S must be a symmetric {model.p} x {model.p} matrix.")
    lam = model.loadings
    beta = _beta(model, model.full_covariance())
    s_beta = S @ beta.T
    system = exact_symmetric(n * np.eye(model.q) - n * (beta @ lam) + beta @ s_beta)
    eigenvalues = linalg.eigvalsh(system)
    if eigenvalues[0] <= settings.RANK_TOL * max(abs(eigenvalues[-1]), np.finfo(float).tiny):
        raise SingularMStepError(
            f"M-step system is singular (eigenvalues {eigenvalues[0]:.3g}, {eigenvalues[-1]:.3g})."
        )
    lam_new = linalg.solve(system, s_beta.T, assume_a="sym").T
    psi_new = (np.diag(S) - np.sum(lam_new * s_beta, axis=1)) / n
    if not (np.all(np.isfinite(lam_new)) and np.all(np.isfinite(psi_new))):
        raise NonFiniteError("M-step produced non-finite parameters.")
    return FactorModel(lam_new, np.maximum(psi_new, psi_floor), model.partition)


class _Problem:
    """Objective and E-step of one EM variant."""

    def __init__(
        self,
        partition: PartitionSpec,
        n: int,
        variances: np.ndarray,
        loglik: Callable[[FactorModel], float],
        expected_scatter: Callable[[FactorModel], np.ndarray],
    ) -> None:
        self.partition = partition
        self.n = n
        self.variances = variances
        self.loglik = loglik
        self.expected_scatter = expected_scatter


def _observed_problem(scatter: ObservedScatter) -> _Problem:
    return _Problem(
        scatter.partition,
        scatter.n,
        scatter.variances(),
        lambda model: loglik_observed(model, scatter),
        lambda model: estep(model, scatter).s_tilde,
    )


def _complete_problem(scatter: np.ndarray, n: int, partition: PartitionSpec) -> _Problem:
    return _Problem(
        partition,
        n,
        np.diag(scatter) / n,
        lambda model: loglik_complete(model, scatter, n),
        lambda model: scatter,
    )


class EMEngine:
    """
    Runs EM fits, evaluating random starts on a thread pool.

    Attributes:
        threads: Worker threads for the random starts (None = CPU count).
    """

    def __init__(self, threads: Optional[int] = None) -> None:
        self.threads = threads if threads is not None else settings.THREADS

    def fit(self, scatter: ObservedScatter, q: int, config: Optional[EMConfig] = None) -> FitReport:
        """
        File-matching fit on the scatters of the two datasets.

        Raises:
            InvalidArgumentError: If q is not in 1..p-1.
            NumericalError: From the E/M-steps; NonFiniteError if the
                log-likelihood stops being finite.
        """
        pt = scatter.partition
        for problem in dimension_warnings(pt.p_x, pt.p_y, pt.p_z, q):
            log.warning(problem)
        return self._run(_observed_problem(scatter), q, config or EMConfig())

    def fit_complete(
        self,
        scatter: ArrayLike,
        n: int,
        q: int,
        config: Optional[EMConfig] = None,
        partition: Optional[PartitionSpec] = None,
    ) -> FitReport:
        """
        Complete-case fit on a full p x p scatter of n rows.

        ``partition`` only labels the blocks of the returned model; without it the
        variables are split as (p - 2, 1, 1).
        """
        S = np.asarray(scatter, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1] or not is_symmetric(S):
            raise DimensionMismatchError("Complete scatter must be square and symmetric.")
        if n < 1:
            raise InvalidArgumentError(f"n must be >= 1, got {n}.")
        p = S.shape[0]
        if partition is None:
            if p < 3:
                raise InvalidArgumentError("A partition is required when p < 3.")
            partition = PartitionSpec(p - 2, 1, 1)
        elif partition.p != p:
            raise DimensionMismatchError(f"Partition has p={partition.p}, scatter has p={p}.")
        problem = _complete_problem(exact_symmetric(S), int(n), partition)
        return self._run(problem, q, config or EMConfig())

    def _run(self, problem: _Problem, q: int, config: EMConfig) -> FitReport:
        p = problem.partition.p
        if q < 1 or q >= p:
            raise InvalidArgumentError(f"q must be in 1..{p - 1}, got {q}.")
        psi_floor = config.psi_floor_scale * float(np.max(problem.variances))

        if isinstance(config.init, SuppliedInit):
            start = config.init.model
            if start.q != q or start.partition.p != p:
                raise DimensionMismatchError(
                    f"Supplied start has q={start.q}, p={start.partition.p}; need q={q}, p={p}."
                )
            start = FactorModel(
                start.loadings, np.maximum(start.psi, psi_floor), problem.partition
            )
            seed: Optional[int] = None
            start_logliks: List[float] = []
            best_index: Optional[int] = None
        else:
            seed = resolve_seed(config.seed)
            start, start_logliks, best_index = self._best_random_start(
                problem, q, config.init, seed, config.tol, psi_floor
            )

        model, trace, converged = _iterate(
            problem, start, config.max_iter, config.tol, psi_floor, config.stop_early
        )
        report = FitReport(
            model=model,
            loglik_trace=trace,
            converged=converged,
            final_loglik=trace[-1],
            seed=seed,
            start_logliks=start_logliks,
            best_start=best_index,
        )
        violations = report.monotonicity_violations()
        if violations:
            log.warning(
                "Log-likelihood decreased in %d of %d steps.", violations, report.iterations
            )
        log.info(
            "EM q=%d finished after %d iterations (converged=%s, loglik=%.10g).",
            q, report.iterations, converged, report.final_loglik,
        )
        return report

    def _best_random_start(
        self,
        problem: _Problem,
        q: int,
        init: RandomInit,
        seed: int,
        tol: float,
        psi_floor: float,
    ) -> Tuple[FactorModel, List[float], int]:
        psi0 = np.maximum(0.5 * problem.variances, psi_floor)

        def burn(restart: int) -> Tuple[Optional[FactorModel], float]:
            rng = stream(seed, restart)
            loadings = rng.standard_normal((problem.partition.p, q))
            start = FactorModel(loadings, psi0, problem.partition)
            try:
                if init.burn_iters == 0:
                    ll = problem.loglik(start)
                    if not np.isfinite(ll):
                        raise NonFiniteError("Non-finite log-likelihood at a random start.")
                    return start, ll
                model, trace, _ = _iterate(problem, start, init.burn_iters, tol, psi_floor)
                return model, trace[-1]
            except NumericalError as exc:
                log.debug("Random start %d failed: %s", restart, exc)
                return None, float("-inf")

        if init.restarts == 1 or self.threads == 1:
            results = [burn(r) for r in range(init.restarts)]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(burn, range(init.restarts)))

        logliks = [ll for _, ll in results]
        best = max(range(init.restarts), key=lambda r: (logliks[r], -r))
        model = results[best][0]
        if model is None:
            raise NumericalError(f"All {init.restarts} random starts failed.")
        log.info(
            "Best of %d random starts: #%d (loglik=%.10g).", init.restarts, best, logliks[best]
        )
        return model, logliks, best


def _iterate(
    problem: _Problem,
    model: FactorModel,
    max_iter: int,
    tol: float,
    psi_floor: float,
    stop_early: bool = True,
) -> Tuple[FactorModel, List[float], bool]:
    previous = problem.loglik(model)
    trace: List[float] = []
    converged = False
    for iteration in range(max_iter):
        model = mstep(problem.expected_scatter(model), model, problem.n, psi_floor)
        current = problem.loglik(model)
        if not np.isfinite(current):
            raise NonFiniteError(f"Log-likelihood became {current} at iteration {iteration + 1}.")
        trace.append(current)
        log.debug("iteration %d: loglik=%.12g", iteration + 1, current)
        converged = abs(current - previous) / (abs(current) + 1.0) < tol
        if converged and stop_early:
            break
        previous = current
    return model, trace, converged


def fit(scatter: ObservedScatter, q: int, config: Optional[EMConfig] = None) -> FitReport:
    """File-matching EM with the default engine."""
    return EMEngine().fit(scatter, q, config)


def fit_complete(
    scatter: ArrayLike,
    n: int,
    q: int,
    config: Optional[EMConfig] = None,
    partition: Optional[PartitionSpec] = None,
) -> FitReport:
    """Complete-case EM with the default engine."""
    return EMEngine().fit_complete(scatter, n, q, config, partition)

"""Unit tests for the EM engine."""
import logging

import numpy as np
import pytest

from filematch.core.exceptions import DimensionMismatchError, InvalidArgumentError
from filematch.models.domain.factor_model import FactorModel
from filematch.models.domain.partition import PartitionSpec
from filematch.models.domain.scatter import ObservedScatter
from filematch.models.schemas import EMConfig, RandomInit, SuppliedInit
from filematch.services.em_engine import (
    EMEngine,
    estep,
    fit,
    loglik_complete,
    loglik_observed,
    mstep,
)
from filematch.services.simulate import sample_datasets

LOG_2PI = np.log(2.0 * np.pi)


def _dense_loglik(sigma: np.ndarray, scatter: np.ndarray, n: int) -> float:
    _, logdet = np.linalg.slogdet(sigma)
    trace = np.trace(np.linalg.inv(sigma) @ scatter)
    return -0.5 * n * logdet - 0.5 * trace - 0.5 * n * sigma.shape[0] * LOG_2PI


def _completed_scatter(
    rows: np.ndarray, observed: np.ndarray, missing: np.ndarray, sigma: np.ndarray
) -> np.ndarray:
    """Sum over rows of E[v v^T | observed part], each row filled in separately."""
    inverse = np.linalg.inv(sigma[np.ix_(observed, observed)])
    gain = sigma[np.ix_(missing, observed)] @ inverse
    conditional = sigma[np.ix_(missing, missing)] - gain @ sigma[np.ix_(observed, missing)]
    total = np.zeros_like(sigma)
    for row in rows:
        full = np.zeros(sigma.shape[0])
        full[observed] = row
        full[missing] = gain @ row
        total += np.outer(full, full)
    total[np.ix_(missing, missing)] += len(rows) * conditional
    return total


@pytest.fixture
def sample_scatter(two_factor_model) -> ObservedScatter:
    _, _, scatter = sample_datasets(two_factor_model, 150, 250, seed=11)
    return scatter


@pytest.fixture
def quick_config() -> EMConfig:
    return EMConfig(max_iter=300, tol=1e-10, seed=4, init=RandomInit(restarts=3, burn_iters=5))


class TestLogLikelihood:
    """Tests for the observed and complete-data log-likelihoods."""

    def test_null_model_closed_form(self, partition_222):
        model = FactorModel(np.zeros(6), np.ones(6), partition_222)
        scatter = ObservedScatter(30 * np.eye(4), 50 * np.eye(4), 30, 50, partition_222)
        expected = -(30 * 4 + 50 * 4) / 2 * (1 + LOG_2PI)
        assert loglik_observed(model, scatter) == pytest.approx(expected, rel=1e-12)

    def test_matches_dense_computation(self, two_factor_model, sample_scatter):
        sigma_a, sigma_b = two_factor_model.marginal_covariances()
        expected = _dense_loglik(sigma_a, sample_scatter.P, 150) + _dense_loglik(
            sigma_b, sample_scatter.T, 250
        )
        assert loglik_observed(two_factor_model, sample_scatter) == pytest.approx(
            expected, rel=1e-10
        )

    def test_complete(self, one_factor_model):
        sigma = one_factor_model.full_covariance()
        S = 40 * np.eye(6)
        assert loglik_complete(one_factor_model, S, 40) == pytest.approx(
            _dense_loglik(sigma, S, 40), rel=1e-10
        )

    def test_invariant_to_rotated_loadings(self, two_factor_model, sample_scatter):
        angle = 0.7
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        rotated = two_factor_model.rotated(rotation)
        assert not np.allclose(rotated.loadings, two_factor_model.loadings)
        assert loglik_observed(rotated, sample_scatter) == pytest.approx(
            loglik_observed(two_factor_model, sample_scatter), rel=1e-12
        )


class TestEStep:
    """Tests for the expected complete-data scatter."""

    def test_population_scatter_is_reproduced(self, one_factor_model, population_scatter):
        result = estep(one_factor_model, population_scatter)
        expected = population_scatter.n * one_factor_model.full_covariance()
        assert np.allclose(result.s_tilde, expected, rtol=1e-10, atol=1e-9)

    def test_matches_conditional_expectations(self, two_factor_model, sample_scatter):
        pt = two_factor_model.partition
        sigma = two_factor_model.full_covariance()
        result = estep(two_factor_model, sample_scatter)

        ia, ib = pt.index_a, pt.index_b
        omega = sigma[pt.z][:, ia] @ np.linalg.inv(sigma[np.ix_(ia, ia)])
        cond_z = sigma[pt.z, pt.z] - omega @ sigma[ia][:, pt.z]
        P = sample_scatter.P
        expected_zz = omega @ P @ omega.T + sample_scatter.n_a * cond_z
        scale = float(np.max(np.abs(expected_zz)))
        assert np.allclose(result.p_tilde[pt.z, pt.z], expected_zz, rtol=1e-9, atol=1e-9 * scale)
        assert np.allclose(result.p_tilde[np.ix_(ia, ia)], P)
        assert np.allclose(result.t_tilde[np.ix_(ib, ib)], sample_scatter.T)

        beta = two_factor_model.loadings.T @ np.linalg.inv(sigma)
        assert np.allclose(result.beta, beta, rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("instance", range(50))
    def test_every_block_matches_row_by_row_expectation(self, instance):
        rng = np.random.default_rng(1000 + instance)
        pt = PartitionSpec(*rng.integers(1, 4, size=3))
        q = int(rng.integers(1, 3))
        model = FactorModel(
            rng.normal(size=(pt.p, q)), rng.uniform(0.5, 1.5, size=pt.p), pt
        )
        rows_a = rng.normal(size=(int(rng.integers(5, 20)), pt.p_a))
        rows_b = rng.normal(size=(int(rng.integers(5, 20)), pt.p_b))
        scatter = ObservedScatter(
            rows_a.T @ rows_a, rows_b.T @ rows_b, len(rows_a), len(rows_b), pt
        )
        sigma = model.full_covariance()
        result = estep(model, scatter)

        all_columns = np.arange(pt.p)
        for observed, rows, completed in (
            (pt.index_a, rows_a, result.p_tilde),
            (pt.index_b, rows_b, result.t_tilde),
        ):
            missing = np.setdiff1d(all_columns, observed)
            expected = _completed_scatter(rows, observed, missing, sigma)
            scale = float(np.max(np.abs(expected)))
            assert np.allclose(completed, expected, rtol=0.0, atol=1e-10 * scale)
        assert np.allclose(
            result.s_tilde, result.p_tilde + result.t_tilde, rtol=0.0, atol=1e-12 * scale
        )

    def test_result_is_exactly_symmetric(self, two_factor_model, sample_scatter):
        s_tilde = estep(two_factor_model, sample_scatter).s_tilde
        assert np.array_equal(s_tilde, s_tilde.T)


class TestMStep:
    """Tests for the closed-form parameter update."""

    def test_truth_is_a_fixed_point(self, two_factor_model):
        S = 500 * two_factor_model.full_covariance()
        updated = mstep(S, two_factor_model, 500)
        assert np.allclose(updated.loadings, two_factor_model.loadings, atol=1e-10)
        assert np.allclose(updated.psi, two_factor_model.psi, atol=1e-10)

    def test_matches_explicit_formula(self, two_factor_model, sample_scatter):
        S = estep(two_factor_model, sample_scatter).s_tilde
        n = sample_scatter.n
        lam = two_factor_model.loadings
        beta = lam.T @ np.linalg.inv(two_factor_model.full_covariance())
        system = n * np.eye(2) - n * beta @ lam + beta @ S @ beta.T
        lam_new = S @ beta.T @ np.linalg.inv(system)
        psi_new = np.diag(S - lam_new @ beta @ S) / n

        updated = mstep(S, two_factor_model, n)
        assert np.allclose(updated.loadings, lam_new, rtol=1e-8, atol=1e-10)
        assert np.allclose(updated.psi, psi_new, rtol=1e-8, atol=1e-10)

    def test_floor_is_applied(self, two_factor_model):
        S = 500 * two_factor_model.full_covariance()
        updated = mstep(S, two_factor_model, 500, psi_floor=10.0)
        assert np.all(updated.psi == 10.0)

    def test_invalid_inputs(self, two_factor_model):
        S = two_factor_model.full_covariance()
        with pytest.raises(InvalidArgumentError):
            mstep(S, two_factor_model, 0)
        with pytest.raises(DimensionMismatchError):
            mstep(S[:4, :4], two_factor_model, 10)

    def test_rotation_equivariance(self, two_factor_model, sample_scatter):
        """Rotating the start rotates every iterate, so Sigma is unchanged."""
        angle = 1.1
        rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        engine = EMEngine(threads=1)
        plain = engine.fit(
            sample_scatter, 2, EMConfig(max_iter=20, init=SuppliedInit(model=two_factor_model))
        )
        rotated = engine.fit(
            sample_scatter,
            2,
            EMConfig(max_iter=20, init=SuppliedInit(model=two_factor_model.rotated(rotation))),
        )
        assert np.allclose(
            plain.model.full_covariance(), rotated.model.full_covariance(), atol=1e-8
        )


class TestEMEngine:
    """Tests for complete fits."""

    def test_population_fit_recovers_yz(self, one_factor_model, population_scatter):
        config = EMConfig(
            max_iter=5000, tol=1e-13, seed=1, init=RandomInit(restarts=3, burn_iters=5)
        )
        report = EMEngine(threads=1).fit(population_scatter, 1, config)
        assert np.allclose(report.model.implied_yz(), one_factor_model.implied_yz(), atol=1e-3)
        truth = loglik_observed(one_factor_model, population_scatter)
        assert report.final_loglik == pytest.approx(truth, rel=1e-8)
        assert report.is_monotone()

    def test_trace_is_monotone_on_sample_data(self, sample_scatter, quick_config):
        report = EMEngine(threads=1).fit(sample_scatter, 2, quick_config)
        assert report.iterations >= 1
        assert report.is_monotone()
        assert report.final_loglik == report.loglik_trace[-1]
        assert len(report.start_logliks) == 3
        assert report.best_start == int(np.argmax(report.start_logliks))

    def test_fixed_iteration_run_ignores_tolerance(self, two_factor_model, sample_scatter):
        start = SuppliedInit(model=two_factor_model)
        fixed = EMEngine(threads=1).fit(
            sample_scatter, 2, EMConfig(max_iter=40, tol=1e-2, init=start, stop_early=False)
        )
        early = EMEngine(threads=1).fit(
            sample_scatter, 2, EMConfig(max_iter=40, tol=1e-2, init=start)
        )
        assert fixed.iterations == 40 and fixed.converged
        assert early.iterations < 40 and early.converged
        assert fixed.loglik_trace[: early.iterations] == early.loglik_trace

    def test_thread_count_does_not_change_result(self, sample_scatter, quick_config):
        serial = EMEngine(threads=1).fit(sample_scatter, 2, quick_config)
        pooled = EMEngine(threads=3).fit(sample_scatter, 2, quick_config)
        assert np.array_equal(serial.model.loadings, pooled.model.loadings)
        assert serial.loglik_trace == pooled.loglik_trace

    def test_same_seed_same_fit(self, sample_scatter, quick_config):
        first = fit(sample_scatter, 2, quick_config)
        second = fit(sample_scatter, 2, quick_config)
        assert np.array_equal(first.model.psi, second.model.psi)

    def test_q_out_of_range(self, population_scatter):
        with pytest.raises(InvalidArgumentError):
            EMEngine(threads=1).fit(population_scatter, 6)
        with pytest.raises(InvalidArgumentError):
            EMEngine(threads=1).fit(population_scatter, 0)

    def test_supplied_start_with_wrong_q(self, two_factor_model, population_scatter):
        config = EMConfig(init=SuppliedInit(model=two_factor_model))
        with pytest.raises(DimensionMismatchError):
            EMEngine(threads=1).fit(population_scatter, 1, config)

    def test_warns_when_yz_may_not_be_identified(self, population_scatter, caplog):
        config = EMConfig(max_iter=2, init=RandomInit(restarts=1, burn_iters=0))
        with caplog.at_level(logging.WARNING, logger="filematch.services.em_engine"):
            EMEngine(threads=1).fit(population_scatter, 2, config)
        assert "may not be identified" in caplog.text

    def test_complete_case_fit(self, one_factor_model):
        S = 800 * one_factor_model.full_covariance()
        config = EMConfig(
            max_iter=5000, tol=1e-13, seed=2, init=RandomInit(restarts=2, burn_iters=5)
        )
        report = EMEngine(threads=1).fit_complete(S, 800, 1, config)
        assert report.model.p == 6
        assert np.allclose(
            report.model.full_covariance(), one_factor_model.full_covariance(), atol=1e-4
        )

    def test_complete_case_rejects_asymmetric_scatter(self):
        S = np.eye(4)
        S[0, 1] = 0.3
        with pytest.raises(DimensionMismatchError):
            EMEngine(threads=1).fit_complete(S, 10, 1)

"""Unit tests for the reference estimators of Sigma_YZ."""
import numpy as np
import pytest
from scipy import linalg

from filematch.core.exceptions import (
    DimensionMismatchError,
    InvalidArgumentError,
    SingularCovarianceError,
)
from filematch.models.domain.covariance import PartialCovariance
from filematch.models.domain.partition import PartitionSpec
from filematch.services.baselines import (
    ImputedDataset,
    als_complete,
    cia_estimate,
    covariance_from_imputed,
    in_identified_set,
    soft_impute,
    stack_pair,
    svd_impute,
)

SCALAR = PartitionSpec(1, 1, 1)


def _rank_one_pair(n_a: int = 30, n_b: int = 40, seed: int = 0):
    """Noise-free rank-one data on a (2, 2, 2) partition, split into two files."""
    rng = np.random.default_rng(seed)
    pt = PartitionSpec(2, 2, 2)
    rows = np.outer(rng.normal(size=n_a + n_b), rng.uniform(1.0, 2.0, size=pt.p))
    return rows, rows[:n_a][:, pt.index_a], rows[n_a:][:, pt.index_b], pt


def _scalar_partial(xy: float, xz: float) -> PartialCovariance:
    return PartialCovariance(1.0, xy, xz, 1.0, 1.0, SCALAR)


class TestConditionalIndependence:
    """Tests for Sigma_YX Sigma_XX^{-1} Sigma_XZ."""

    def test_scalar_example(self):
        assert cia_estimate(_scalar_partial(0.5, 0.4))[0, 0] == pytest.approx(0.2)

    def test_matches_conditional_independence_model(self, two_factor_model):
        pt = two_factor_model.partition
        sigma = two_factor_model.full_covariance()
        partial = PartialCovariance.from_full(sigma, pt, keep_yz=False)
        expected = sigma[pt.y, pt.x] @ np.linalg.solve(sigma[pt.x, pt.x], sigma[pt.x, pt.z])
        assert np.allclose(cia_estimate(partial), expected)

    def test_singular_xx(self):
        pt = PartitionSpec(2, 1, 1)
        partial = PartialCovariance(np.ones((2, 2)), np.ones((2, 1)), np.ones((2, 1)), 1, 1, pt)
        with pytest.raises(SingularCovarianceError):
            cia_estimate(partial)


class TestIdentifiedSet:
    """Tests for the positive-definiteness check."""

    def test_strongly_correlated_example(self):
        partial = _scalar_partial(0.9, 0.9)
        assert in_identified_set(partial, 0.8)
        assert not in_identified_set(partial, 0.5)

    def test_cia_estimate_is_always_inside(self, two_factor_model):
        partial = PartialCovariance.from_full(
            two_factor_model.full_covariance(), two_factor_model.partition, keep_yz=False
        )
        assert in_identified_set(partial, cia_estimate(partial))

    def test_tolerance(self):
        partial = _scalar_partial(0.0, 0.0)
        assert in_identified_set(partial, 0.0, tol=0.5)
        assert not in_identified_set(partial, 0.0, tol=1.5)


class TestStackPair:
    """Tests for the stacked data matrix."""

    def test_layout(self):
        pt = PartitionSpec(1, 2, 1)
        D, mask = stack_pair(np.ones((2, 3)), 2 * np.ones((3, 2)), pt)
        assert D.shape == (5, 4)
        assert mask[:2].tolist() == [[True, True, True, False]] * 2
        assert mask[2:].tolist() == [[True, False, False, True]] * 3
        assert np.all(D[2:, [0, 3]] == 2.0)
        assert np.all(D[~mask] == 0.0)

    def test_wrong_columns(self):
        with pytest.raises(DimensionMismatchError):
            stack_pair(np.ones((2, 2)), np.ones((2, 2)), PartitionSpec(1, 2, 1))


class TestALS:
    """Tests for alternating least squares completion."""

    def test_noise_free_rank_one_data_is_fitted(self):
        _, data_a, data_b, pt = _rank_one_pair()
        imputed = als_complete(data_a, data_b, pt, 1, max_iter=2000)
        assert imputed.observed_residual() < 1e-8
        assert imputed.method_tag == "als"
        assert imputed.fill_pattern == ("Z_A", "Y_B")

    def test_objective_never_increases(self):
        rng = np.random.default_rng(3)
        pt = PartitionSpec(3, 2, 2)
        imputed = als_complete(
            rng.normal(size=(25, 5)), rng.normal(size=(20, 5)), pt, 2, max_iter=50
        )
        trace = np.array(imputed.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9 * trace[0])

    def test_observed_entries_are_kept(self):
        _, data_a, data_b, pt = _rank_one_pair()
        imputed = als_complete(data_a, data_b, pt, 1)
        assert np.array_equal(imputed.d_hat[:30][:, pt.index_a], data_a)

    def test_rank_out_of_range(self):
        _, data_a, data_b, pt = _rank_one_pair()
        with pytest.raises(InvalidArgumentError):
            als_complete(data_a, data_b, pt, 7)


class TestSoftImpute:
    """Tests for nuclear-norm shrinkage completion."""

    def test_large_lambda_gives_zero(self):
        _, data_a, data_b, pt = _rank_one_pair()
        D, mask = stack_pair(data_a, data_b, pt)
        top = linalg.norm(np.where(mask, D, 0.0), 2)
        imputed = soft_impute(data_a, data_b, pt, lambda_grid=[1.01 * top])
        assert np.all(imputed.low_rank == 0.0)
        assert imputed.lambda_ == pytest.approx(1.01 * top)

    def test_residual_shrinks_with_lambda(self):
        _, data_a, data_b, pt = _rank_one_pair()
        D, mask = stack_pair(data_a, data_b, pt)
        top = linalg.norm(np.where(mask, D, 0.0), 2)
        strong = soft_impute(data_a, data_b, pt, lambda_grid=[0.5 * top])
        weak = soft_impute(data_a, data_b, pt, lambda_grid=[0.05 * top])
        assert weak.observed_residual() < strong.observed_residual()

    def test_holdout_choice_is_seeded(self):
        _, data_a, data_b, pt = _rank_one_pair()
        first = soft_impute(data_a, data_b, pt, seed=5)
        second = soft_impute(data_a, data_b, pt, seed=5)
        assert first.lambda_ == second.lambda_
        assert np.array_equal(first.d_hat, second.d_hat)

    def test_negative_lambda(self):
        _, data_a, data_b, pt = _rank_one_pair()
        with pytest.raises(InvalidArgumentError):
            soft_impute(data_a, data_b, pt, lambda_grid=[-1.0])

    def test_zero_lambda_with_rank_cap_agrees_with_als(self):
        rng = np.random.default_rng(8)
        pt = PartitionSpec(3, 2, 2)
        rows = rng.normal(size=(80, 2)) @ rng.normal(size=(2, pt.p))
        data_a, data_b = rows[:40][:, pt.index_a], rows[40:][:, pt.index_b]

        hard = soft_impute(
            data_a, data_b, pt, lambda_grid=[0.0], rank=2, holdout=0.0,
            max_iter=5000, tol=1e-24,
        )
        als = als_complete(data_a, data_b, pt, 2, max_iter=5000, tol=1e-15)
        centred = rows - rows.mean(axis=0)
        truth = centred[:, pt.y].T @ centred[:, pt.z] / len(rows)
        assert np.allclose(covariance_from_imputed(hard), truth, rtol=1e-6, atol=1e-8)
        assert np.allclose(
            covariance_from_imputed(hard), covariance_from_imputed(als), rtol=1e-6, atol=1e-8
        )


class TestSVDImpute:
    """Tests for hard rank-q imputation."""

    def test_objective_never_increases(self):
        rng = np.random.default_rng(4)
        pt = PartitionSpec(3, 2, 2)
        imputed = svd_impute(rng.normal(size=(25, 5)), rng.normal(size=(20, 5)), pt, 2)
        trace = np.array(imputed.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9 * trace[0])

    def test_rank_out_of_range(self):
        _, data_a, data_b, pt = _rank_one_pair()
        with pytest.raises(InvalidArgumentError):
            svd_impute(data_a, data_b, pt, 0)


class TestCovarianceFromImputed:
    """Tests for the cross-covariance of completed columns."""

    def test_perfect_imputation_gives_sample_covariance(self):
        rows, data_a, data_b, pt = _rank_one_pair()
        _, mask = stack_pair(data_a, data_b, pt)
        imputed = ImputedDataset(rows, rows, mask, 30, pt, "oracle")
        centred = rows - rows.mean(axis=0)
        expected = centred[:, pt.y].T @ centred[:, pt.z] / rows.shape[0]
        assert np.allclose(covariance_from_imputed(imputed), expected)
        assert covariance_from_imputed(imputed).shape == (pt.p_y, pt.p_z)

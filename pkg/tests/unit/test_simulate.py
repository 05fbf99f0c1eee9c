"""Unit tests for simulation designs and the experiment harnesses."""
import numpy as np
import pytest
from pandas.testing import assert_frame_equal

from filematch.core.exceptions import DimensionMismatchError, InvalidArgumentError
from filematch.models.domain.partition import PartitionSpec
from filematch.models.schemas import EMConfig, RandomInit
from filematch.services.simulate import (
    _Replicate,
    default_design,
    mse_observed,
    mse_yz,
    run_bic_experiment,
    run_identifiability_experiment,
    run_permutation_benchmark,
    sample_datasets,
    sample_model,
)


@pytest.fixture
def small_config() -> EMConfig:
    return EMConfig(max_iter=200, init=RandomInit(restarts=2, burn_iters=5))


class TestSampling:
    """Tests for model and data generation."""

    def test_default_design(self):
        design = default_design(seed=1)
        assert design.partition == PartitionSpec(4, 4, 4)
        assert (design.q_true, design.n_a, design.n_b) == (3, 1000, 1000)
        assert (design.loading_mean, design.uniqueness_base) == (2.0, 3.0)

    def test_degenerate_design(self):
        design = default_design(2, 2, 2, q_true=1, seed=1, loading_sd=0.0, uniqueness_sd=0.0)
        model, sigma = sample_model(design)
        assert np.all(model.loadings == 2.0)
        assert np.all(model.psi == 9.0)
        assert sigma[0, 1] == 4.0 and sigma[0, 0] == 13.0

    def test_standardized_design(self):
        _, sigma = sample_model(default_design(seed=2, standardize=True))
        assert np.allclose(np.diag(sigma), 1.0, atol=1e-12)

    def test_model_depends_only_on_seed(self):
        first, _ = sample_model(default_design(seed=3))
        second, _ = sample_model(default_design(seed=3))
        other, _ = sample_model(default_design(seed=4))
        assert np.array_equal(first.loadings, second.loadings)
        assert not np.array_equal(first.loadings, other.loadings)

    def test_draws_follow_the_design_distributions(self):
        loadings, deviations = [], []
        for seed in range(300):
            model, sigma = sample_model(default_design(seed=seed))
            assert np.allclose(sigma, model.full_covariance(), rtol=0.0, atol=1e-12)
            loadings.append(model.loadings.ravel())
            deviations.append(np.sqrt(model.psi))
        loadings, deviations = np.concatenate(loadings), np.concatenate(deviations)
        assert abs(loadings.mean() - 2.0) < 3.0 / np.sqrt(loadings.size)
        assert abs(loadings.std() - 1.0) < 0.05
        assert abs(deviations.mean() - 3.0) < 3.0 * 0.1 / np.sqrt(deviations.size)

    def test_datasets(self):
        model, _ = sample_model(default_design(3, 2, 2, q_true=1, seed=5))
        data_a, data_b, scatter = sample_datasets(model, 20, 30, seed=6)
        assert data_a.shape == (20, 5) and data_b.shape == (30, 5)
        again_a, _, _ = sample_datasets(model, 20, 30, seed=6)
        assert np.array_equal(data_a, again_a)
        centred = data_a - data_a.mean(axis=0)
        assert np.allclose(scatter.P, centred.T @ centred)

    def test_sample_covariance_is_close_to_truth(self):
        model, sigma = sample_model(default_design(2, 2, 2, q_true=1, seed=7, standardize=True))
        _, _, scatter = sample_datasets(model, 10000, 10000, seed=8)
        sigma_a, _ = model.marginal_covariances()
        assert np.allclose(scatter.P / scatter.n_a, sigma_a, atol=0.06)


class TestMetrics:
    """Tests for the error metrics."""

    def test_mse_yz(self):
        assert mse_yz(np.zeros((2, 3)), np.ones((2, 3))) == 1.0
        assert mse_yz(np.ones((2, 3)), np.ones((2, 3))) == 0.0

    def test_mse_yz_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            mse_yz(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_mse_observed_ignores_yz(self):
        pt = PartitionSpec(1, 1, 1)
        sigma = np.eye(3)
        perturbed = sigma.copy()
        perturbed[1, 2] = perturbed[2, 1] = 0.7
        assert mse_observed(perturbed, sigma, pt) == 0.0
        perturbed[0, 0] = 2.0
        assert mse_observed(perturbed, sigma, pt) == pytest.approx(1.0 / 7.0)


class TestReplicate:
    """Tests for one random re-allocation of a complete dataset."""

    def test_values_are_only_rearranged(self):
        rows = np.random.default_rng(0).normal(size=(12, 6))
        rep = _Replicate(rows, (2, 2, 2), 5, seed=1, index=0)
        assert np.array_equal(np.sort(rep.complete.ravel()), np.sort(rows.ravel()))
        assert rep.data_a.shape == (5, 4) and rep.data_b.shape == (7, 4)
        assert rep.truth.shape == (2, 2)


class TestIdentifiabilityExperiment:
    """Tests for the random-start experiment on population scatters."""

    def test_start_from_truth_stays_at_truth(self):
        result = run_identifiability_experiment(
            default_design(seed=3),
            q_values=(3, 4),
            n_seeds=2,
            max_iter=30,
            start_from_truth=True,
            threads=1,
        )
        assert len(result.records) == 4
        assert [r.q for r in result.panel(4)] == [4, 4]
        for record in result.records:
            assert record.error is None
            assert record.mse_yz < 1e-10
            assert record.mse_observed < 1e-10
            assert record.monotone
        assert list(result.to_frame().columns)[:4] == ["q", "seed_index", "mse_yz", "mse_observed"]


class TestPermutationBenchmark:
    """Tests for the variable-permutation benchmark."""

    def test_records_and_determinism(self, small_config):
        design = default_design(3, 3, 3, q_true=2, seed=5, n_a=150, n_b=150)
        kwargs = dict(
            sizes=(3, 3, 3),
            q=2,
            methods=["cia", "fm", "complete", "als"],
            design=design,
            n_perms=2,
            seed=5,
            config=small_config,
        )
        result = run_permutation_benchmark(threads=1, **kwargs)
        assert len(result.records) == 8
        assert [str(m) for m in result.methods] == ["cia", "fm", "complete", "als"]
        assert result.errors("cia").size == 2
        assert not result.failed
        assert list(result.summary().columns) == ["method", "median", "iqr", "n_ok"]

        again = run_permutation_benchmark(threads=2, **kwargs)
        assert_frame_equal(result.to_frame(), again.to_frame())

    def test_failures_are_recorded(self, small_config):
        design = default_design(3, 3, 3, q_true=1, seed=6, n_a=50, n_b=50)
        result = run_permutation_benchmark(
            (3, 3, 3), 10, ["als"], design=design, n_perms=1, config=small_config, threads=1
        )
        assert result.failed
        assert result.records[0].error

    def test_sizes_must_match_data(self):
        rows = np.zeros((10, 6))
        with pytest.raises(DimensionMismatchError):
            run_permutation_benchmark((2, 2, 3), 1, ["cia"], data=rows)

    def test_each_file_needs_two_rows(self):
        rows = np.random.default_rng(0).normal(size=(10, 6))
        with pytest.raises(InvalidArgumentError):
            run_permutation_benchmark((2, 2, 2), 1, ["cia"], data=rows, n_a=9)

    def test_needs_design_or_data(self):
        with pytest.raises(InvalidArgumentError):
            run_permutation_benchmark((2, 2, 2), 1, ["cia"])


class TestBICExperiment:
    """Tests for the BIC replicates."""

    def test_one_factor_design(self):
        design = default_design(3, 3, 3, q_true=1, seed=8, n_a=500, n_b=500)
        config = EMConfig(max_iter=500, init=RandomInit(restarts=3, burn_iters=10))
        result = run_bic_experiment(design, [1, 2], n_replicates=2, config=config, threads=1)
        assert [r.q_selected for r in result.replicates] == [1, 1]
        assert [r.q_complete_selected for r in result.replicates] == [1, 1]
        assert result.selection_counts() == {1: 2, 2: 0}
        frame = result.to_frame()
        assert {"mse_cia", "mse_q1", "mse_q2"} <= set(frame.columns)

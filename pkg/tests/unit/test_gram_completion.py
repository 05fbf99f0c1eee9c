"""Unit tests for the constructive Gram completion."""
import numpy as np
import pytest

from filematch.core.exceptions import DimensionMismatchError, RankDeficientError
from filematch.models.domain.covariance import PartialCovariance
from filematch.models.domain.partition import PartitionSpec
from filematch.services.gram_completion import (
    canonical_factors,
    complete_gram,
    procrustes_align,
    top_q_factors,
)


def _gram_blocks(loadings: np.ndarray, partition: PartitionSpec) -> PartialCovariance:
    return PartialCovariance.from_full(loadings @ loadings.T, partition, keep_yz=False)


class TestTopQFactors:
    """Tests for the eigen-factorisation of a PSD block."""

    def test_reproduces_rank_q_matrix(self):
        rng = np.random.default_rng(1)
        factor = rng.normal(size=(5, 2))
        gram = factor @ factor.T
        top, eigenvalues = top_q_factors(gram, 2)
        assert np.allclose(top @ top.T, gram)
        assert eigenvalues[0] >= eigenvalues[1] > 0

    def test_rank_deficient(self):
        rng = np.random.default_rng(1)
        factor = rng.normal(size=(5, 1))
        with pytest.raises(RankDeficientError):
            top_q_factors(factor @ factor.T, 2)

    def test_zero_matrix(self):
        with pytest.raises(RankDeficientError):
            top_q_factors(np.zeros((3, 3)), 1)

    def test_not_square(self):
        with pytest.raises(DimensionMismatchError):
            top_q_factors(np.zeros((3, 2)), 1)


class TestProcrustes:
    """Tests for the orthogonal alignment."""

    def test_recovers_rotation(self):
        rng = np.random.default_rng(2)
        source = rng.normal(size=(4, 3))
        rotation, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        aligned = procrustes_align(source @ rotation, source)
        assert np.allclose(aligned, rotation)
        assert np.allclose(aligned.T @ aligned, np.eye(3))

    def test_output_is_orthogonal_for_unrelated_matrices(self):
        rng = np.random.default_rng(3)
        for q in (1, 2, 4):
            aligned = procrustes_align(rng.normal(size=(7, q)), rng.normal(size=(7, q)))
            assert np.allclose(aligned.T @ aligned, np.eye(q), atol=1e-12)
            assert np.allclose(aligned @ aligned.T, np.eye(q), atol=1e-12)

    def test_two_factor_alignment_matches_angle_grid(self):
        rng = np.random.default_rng(4)
        target, source = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        angles = np.linspace(0.0, 2.0 * np.pi, 20000, endpoint=False)
        candidates = [
            np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]) for t in angles
        ] + [np.array([[np.cos(t), np.sin(t)], [np.sin(t), -np.cos(t)]]) for t in angles]
        errors = [np.linalg.norm(target - source @ c) for c in candidates]
        best = candidates[int(np.argmin(errors))]

        aligned = procrustes_align(target, source)
        assert np.linalg.norm(target - source @ aligned) <= min(errors) + 1e-12
        assert np.allclose(aligned, best, atol=1e-3)

    def test_degenerate_alignment(self):
        source = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
        with pytest.raises(RankDeficientError):
            procrustes_align(source, source)


class TestCompleteGram:
    """Tests for recovering Lambda_Y Lambda_Z^T."""

    @pytest.mark.parametrize(
        "sizes, q",
        [((3, 2, 2), 1), ((3, 3, 3), 2), ((4, 4, 3), 3), ((5, 2, 6), 4)],
    )
    def test_exact_recovery(self, sizes, q):
        rng = np.random.default_rng(sum(sizes) * 10 + q)
        pt = PartitionSpec(*sizes)
        loadings = rng.normal(size=(pt.p, q))
        completed = complete_gram(_gram_blocks(loadings, pt), q)
        truth = loadings[pt.y] @ loadings[pt.z].T
        scale = max(1.0, float(np.linalg.norm(loadings) ** 2))
        assert np.allclose(completed, truth, atol=1e-9 * scale, rtol=0)

    def test_invariant_to_rotation_of_loadings(self):
        rng = np.random.default_rng(5)
        pt = PartitionSpec(3, 3, 3)
        loadings = rng.normal(size=(9, 2))
        rotation, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        first = complete_gram(_gram_blocks(loadings, pt), 2)
        second = complete_gram(_gram_blocks(loadings @ rotation, pt), 2)
        assert np.allclose(first, second, atol=1e-9)

    def test_q_larger_than_px(self):
        rng = np.random.default_rng(6)
        pt = PartitionSpec(2, 3, 3)
        loadings = rng.normal(size=(8, 3))
        with pytest.raises(RankDeficientError):
            complete_gram(_gram_blocks(loadings, pt), 3)

    def test_rank_deficient_xx(self):
        """Lambda_X of rank one leaves the alignment undetermined for q=2."""
        rng = np.random.default_rng(7)
        pt = PartitionSpec(3, 3, 3)
        loadings = rng.normal(size=(9, 2))
        loadings[:3, 1] = 0.0
        with pytest.raises(RankDeficientError):
            complete_gram(_gram_blocks(loadings, pt), 2)

    def test_canonical_factors_shapes(self):
        rng = np.random.default_rng(8)
        pt = PartitionSpec(3, 2, 4)
        factors = canonical_factors(_gram_blocks(rng.normal(size=(9, 2)), pt), 2)
        assert factors.factors_a.shape == (5, 2)
        assert factors.factors_b.shape == (7, 2)
        assert factors.lambda_z_b.shape == (4, 2)

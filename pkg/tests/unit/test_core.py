"""Unit tests for settings, seeded streams and the error hierarchy."""
import numpy as np
import pytest

from filematch.core.config import Settings, settings
from filematch.core.exceptions import (
    EXIT_NUMERICAL,
    EXIT_USAGE,
    FileMatchError,
    MissingColumnError,
    RankDeficientError,
    SchemaMismatchError,
)
from filematch.core.rng import derive_seed, resolve_seed, stream


class TestStreams:
    """Tests for the keyed random streams."""

    def test_same_keys_same_draws(self):
        assert np.array_equal(stream(1, 2, 3).random(5), stream(1, 2, 3).random(5))

    def test_different_keys_differ(self):
        assert not np.array_equal(stream(1, 2).random(5), stream(1, 3).random(5))

    def test_default_seed(self):
        assert resolve_seed(None) == settings.SEED
        assert np.array_equal(stream(None, 0).random(3), stream(settings.SEED, 0).random(3))

    def test_derived_seeds(self):
        seeds = {derive_seed(7, i) for i in range(50)}
        assert len(seeds) == 50
        assert all(0 <= s < 2 ** 63 for s in seeds)
        assert derive_seed(7, 1) == derive_seed(7, 1)


class TestExitCodes:
    """Tests for the exit code carried by each error family."""

    def test_families(self):
        assert RankDeficientError("x").exit_code == EXIT_NUMERICAL
        assert SchemaMismatchError("x").exit_code == EXIT_USAGE
        assert MissingColumnError("w").exit_code == EXIT_USAGE

    def test_override(self):
        assert FileMatchError("x", exit_code=EXIT_USAGE).exit_code == EXIT_USAGE

    def test_missing_column_message(self):
        assert "'w'" in str(MissingColumnError("w"))
        assert "No shared columns" in str(MissingColumnError(None))


class TestSettings:
    """Tests for environment configuration."""

    def test_environment_override(self, monkeypatch):
        monkeypatch.setenv("FILEMATCH_SEED", "123")
        monkeypatch.setenv("FILEMATCH_EM_TOL", "1e-6")
        configured = Settings()
        assert configured.SEED == 123
        assert configured.EM_TOL == pytest.approx(1e-6)

"""Application configuration.

Defines the settings model for filematch, loading values from environment
variables (prefix ``FILEMATCH_``), an optional ``.env`` file, or the defaults below.
"""
from typing import Optional

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Settings(BaseSettings):
    """
    Settings model for the library and the CLI.

    Attributes:
        PROJECT_NAME: Project name shown in the CLI help.
        PROJECT_VERSION: Current version.
        SEED: Default RNG seed used whenever a seed is not given explicitly.
        THREADS: Worker threads for restart/replicate pools (None = CPU count).
        LOG_LEVEL: Root log level when no -v flag is given.
        EM_MAX_ITER: Default EM iteration cap.
        EM_TOL: Default relative log-likelihood tolerance.
        EM_RESTARTS: Random starts in the random-init protocol.
        EM_BURN_ITERS: Short-run length for each random start.
        PSI_FLOOR_SCALE: Uniqueness floor relative to the largest variance.
        RANK_TOL: Relative tolerance for numerical rank decisions.
        MAX_SUBSET_ROWS: Row limit for the exhaustive Assumption-2 search.
        ALS_MAX_ITER: Outer iteration cap for ALS / hard-SVD impute.
        ALS_TOL: Relative objective tolerance for ALS / hard-SVD impute.
        SOFT_IMPUTE_GRID: Number of lambda values in the Soft-Impute path.
        SOFT_IMPUTE_HOLDOUT: Fraction of observed cells held out to pick lambda.
        MODEL_FILE_VERSION: Schema version written to model files.
    """
    PROJECT_NAME: str = "filematch"
    PROJECT_VERSION: str = "0.1.0"
    SEED: int = 20240601
    THREADS: Optional[int] = None
    LOG_LEVEL: str = "WARNING"

    EM_MAX_ITER: int = 2000
    EM_TOL: float = 1e-8
    EM_RESTARTS: int = 100
    EM_BURN_ITERS: int = 50
    PSI_FLOOR_SCALE: float = 1e-8

    RANK_TOL: float = 1e-8
    MAX_SUBSET_ROWS: int = 25

    ALS_MAX_ITER: int = 500
    ALS_TOL: float = 1e-9
    SOFT_IMPUTE_GRID: int = 20
    SOFT_IMPUTE_HOLDOUT: float = 0.1

    MODEL_FILE_VERSION: int = 1

    model_config = SettingsConfigDict(env_prefix="FILEMATCH_", extra="ignore")


settings = Settings()

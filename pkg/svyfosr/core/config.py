"""Library configuration."""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Numerical defaults loaded from environment variables (prefix ``SVYFOSR_``)."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="SVYFOSR_",
        case_sensitive=True,
        extra="ignore"  # Ignore extra environment variables
    )

    # Logging
    LOG_LEVEL: str = "INFO"

    # Parallelism
    N_WORKERS: int = 1

    # Pointwise GLM
    IRLS_TOL: float = 1e-8
    IRLS_MAX_ITER: int = 50
    ETA_CLAMP: float = 30.0
    RANK_TOL: float = 1e-10

    # Smoothing
    GCV_LOG10_LAMBDA_MIN: float = -8.0
    GCV_LOG10_LAMBDA_MAX: float = 8.0
    GCV_GRID_SIZE: int = 49
    MAX_DEFAULT_BASIS_DIM: int = 35

    # Inference
    DEFAULT_NUM_BOOTS: int = 100
    DEFAULT_ALPHA: float = 0.05
    CMA_MC_SAMPLES: int = 10_000
    MAX_FAILED_REPLICATE_FRACTION: float = 0.05
    MIN_REPLICATES_WARNING: int = 50

    # Simulation
    MEMORY_CAP_CELLS: int = 50_000_000
    PSU_CERTAINTY_CAP: float = 0.999


settings = Settings()

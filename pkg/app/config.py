from pydantic_settings import BaseSettings

"""
Config class for the Normalized Projections application.

This class contains the configuration for the application, including the log and result
directories, the seed used when none is given, and the numerical guards shared by the solvers.
"""

class Settings(BaseSettings):
    """
    Settings class for the Normalized Projections application.

    LOG_DIR: Directory holding the daily log files.
    LOG_LEVEL: Level of the application logger.
    OUTPUT_DIR: Default directory for experiment reports.
    DEFAULT_SEED: Seed used when a run does not name one.
    EPSILON_GUARD: Threshold on ||ΔTP|| below which the gradient step is skipped.
    CONDITION_LIMIT: Largest condition number accepted by the linear solves.
    STATIONARY_TOLERANCE: L1 residual at which power iteration stops.
    STATIONARY_MAX_SWEEPS: Power iteration budget.
    DEFAULT_BETA: Heavy-ball momentum multiplier.
    DEFAULT_P: Exponent of the decaying step sequence 1/k^p.
    SCHEMA_VERSION: Version stamped on every report table.
    """
    LOG_DIR: str = "logs"
    LOG_LEVEL: str = "WARNING"
    OUTPUT_DIR: str = "results"
    DEFAULT_SEED: int = 0
    EPSILON_GUARD: float = 1e-6
    CONDITION_LIMIT: float = 1e12
    STATIONARY_TOLERANCE: float = 1e-12
    STATIONARY_MAX_SWEEPS: int = 1_000_000
    DEFAULT_BETA: float = 0.5
    DEFAULT_P: float = 1.0
    SCHEMA_VERSION: int = 1
    class Config:
        env_file = ".env"

settings = Settings()

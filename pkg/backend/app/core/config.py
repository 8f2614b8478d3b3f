from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="GMFLD_",
        case_sensitive=True,
        extra="ignore",
    )

    # Application
    APP_NAME: str = "Graphon Mean-Field Logit Kit"
    VERSION: str = "1.0.0"
    ENVIRONMENT: str = "development"

    # Outputs
    OUTPUT_DIR: str = "results"

    # Solver defaults
    DEFAULT_DT: float = 0.01
    DEFAULT_EPS: float = 1e-10
    DEFAULT_MAX_ITER: int = 1_000_000
    DEFAULT_OMEGA: float = 0.5
    PROGRESS_EVERY: int = 10_000

    # Utility defaults
    DEFAULT_GAMMA: float = 1e-9

    # Tolerances
    BOUND_TOLERANCE: float = 1e-8
    MASS_TOLERANCE: float = 1e-12
    KERNEL_MASS_TOLERANCE: float = 1e-12

    # Parallel drivers
    N_JOBS: int = 1
    ALLOW_LONG_RUNNING: bool = False
    CONVERGE_DT: float = 0.25

    # Monte Carlo
    MC_BLOCK_SIZE: int = 4096

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"


# Create settings instance
settings = Settings()

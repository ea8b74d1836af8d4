"""Process-level settings and configuration."""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings, read from LESSNET_* environment variables."""

    # Application
    debug: bool = False
    environment: str = "development"
    log_level: str = "INFO"

    # Outputs
    metrics_enabled: bool = False  # opt-in Prometheus textfile next to training outputs
    record_wall_time: bool = False  # True records epoch wall time; outputs then differ run to run

    # Gradient verification
    gradcheck_step: float = 1e-4
    gradcheck_tolerance: float = 1e-3

    model_config = SettingsConfigDict(
        env_prefix="LESSNET_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


settings = Settings()

"""Application configuration."""

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


def strip_quotes(value: str) -> str:
    """Strip surrounding quotes from a value."""
    if value and len(value) >= 2:
        if (value.startswith("'") and value.endswith("'")) or \
           (value.startswith('"') and value.endswith('"')):
            return value[1:-1]
    return value


class Settings(BaseSettings):
    """Runtime settings, read from ``EECAP_*`` environment variables or a ``.env`` file."""

    # Worker threads for optimizer starts (EECAP_THREADS)
    threads: int = Field(default=1, ge=1)

    # Logging
    log_level: str = "WARNING"
    environment: str = "development"  # development, staging, production

    # Logfire configuration (optional)
    # Spans are only exported when a token is present (LOGFIRE_TOKEN or `logfire auth`)
    enable_logfire: bool = True
    logfire_token: str = ""

    # Numerics
    probability_floor: float = Field(default=1e-9, gt=0.0, lt=0.5)
    stationary_tol: float = Field(default=1e-10, gt=0.0)
    cesaro_max_iter: int = Field(default=10**7, ge=1)

    # Coding simulator: most candidate paths the tree decoder keeps before giving up
    max_candidates: int = Field(default=2**16, ge=1)

    @field_validator('log_level', 'environment', 'logfire_token', mode='before')
    @classmethod
    def strip_quotes_from_value(cls, v):
        if isinstance(v, str):
            return strip_quotes(v)
        return v

    model_config = SettingsConfigDict(
        env_prefix="EECAP_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


settings = Settings()

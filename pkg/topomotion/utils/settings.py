"""
topomotion runtime settings.

Uses Pydantic Settings for type-safe configuration with environment variable support.

Optional environment variables (with defaults):
- TOPOMOTION_DEBUG: Enable debug logging (default: false)
- TOPOMOTION_CONFIG: Default run-config JSON path used by the CLI (default: unset)
- TOPOMOTION_NUM_THREADS: Torch intra-op threads (default: 1, keeps runs reproducible)
"""
from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file='.env',
        env_file_encoding='utf-8',
        extra='ignore',
    )

    debug: bool = Field(default=False, alias='TOPOMOTION_DEBUG')
    config_path: str | None = Field(default=None, alias='TOPOMOTION_CONFIG')
    num_threads: int = Field(default=1, ge=1, alias='TOPOMOTION_NUM_THREADS')


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()

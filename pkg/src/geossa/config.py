"""
Process-level settings read from the environment.

Parameter blocks for the solvers and generators live next to the code that
consumes them (``GassaConfig`` in :mod:`geossa.gassa`, ``MixingParams`` in
:mod:`geossa.datagen`, ...). This module only resolves the knobs that apply
to a whole run.
"""
import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ConfigError

# Load environment variables
load_dotenv()


class Settings(BaseModel):
    """Run-wide settings with environment fallbacks."""

    model_config = ConfigDict(extra="forbid")

    log_level: str = Field("INFO", description="Log level for the stderr sink")
    threads: int = Field(1, description="Worker cap for joblib (-1 = all cores)")
    seed: int = Field(0, ge=0, description="Master seed when none is configured")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got {raw!r}") from exc

def load_settings(
    log_level: Optional[str] = None,
    threads: Optional[int] = None,
    seed: Optional[int] = None,
) -> Settings:
    """
    Build settings from explicit overrides, then environment, then defaults.

    Args:
        log_level: Overrides ``GEOSSA_LOG_LEVEL``
        threads: Overrides ``GEOSSA_THREADS``
        seed: Overrides ``GEOSSA_SEED``

    Returns:
        Validated settings
    """
    try:
        return Settings(
            log_level=log_level or os.getenv("GEOSSA_LOG_LEVEL", "INFO"),
            threads=threads if threads is not None else _env_int("GEOSSA_THREADS", 1),
            seed=seed if seed is not None else _env_int("GEOSSA_SEED", 0),
        )
    except ValidationError as exc:
        raise ConfigError(f"invalid settings: {exc.errors()[0]['msg']}") from exc

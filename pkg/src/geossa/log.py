"""
Logging setup.

Library modules log through ``loguru.logger`` and never touch sinks; the CLI
calls :func:`configure_logging` once per process. joblib worker processes
start with loguru's default DEBUG sink, so the benchmark hands them the
parent's level through :func:`configure_worker_logging`.
"""
import os
import sys

from loguru import logger

from .errors import ConfigError

LOG_FORMAT = (
    "<green>{time:HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> - <level>{message}</level>"
)

_level = "INFO"


def configure_logging(level: str = "INFO") -> None:
    """Replace loguru's default sink with a single stderr sink at ``level``."""
    global _level
    name = str(level).upper()
    try:
        logger.level(name)
    except ValueError as exc:
        raise ConfigError(f"unknown log level {level!r}") from exc
    logger.remove()
    logger.add(sys.stderr, level=name, format=LOG_FORMAT, colorize=False)
    _level = name


def current_level() -> str:
    return _level


def configure_worker_logging(level: str, parent_pid: int) -> None:
    """Apply ``level`` when running in a process other than ``parent_pid``."""
    if os.getpid() != parent_pid:
        configure_logging(level)

"""Configuration management for the application."""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
env_path = Path(__file__).parent.parent / ".env"
load_dotenv(dotenv_path=env_path)

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Config:
    """Application configuration."""

    # Output location used by the CLI when --out is not given
    OUT_DIR: str = os.getenv("TIMSIM_OUT_DIR", "./runs")

    # Worker count for rollout fan-out and compare cells
    THREADS: int = int(os.getenv("TIMSIM_THREADS", "1"))

    # Application Settings
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()
    PROGRESS: bool = _env_flag("TIMSIM_PROGRESS", "true")

    @classmethod
    def validate(cls) -> None:
        """Validate configuration."""
        if cls.THREADS < 1:
            raise ValueError(f"TIMSIM_THREADS must be >= 1, got {cls.THREADS}")
        if cls.LOG_LEVEL not in _LOG_LEVELS:
            raise ValueError(f"LOG_LEVEL must be one of {_LOG_LEVELS}, got {cls.LOG_LEVEL!r}")


config = Config()
settings = config  # Alias for compatibility

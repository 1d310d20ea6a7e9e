"""
Process-wide settings from the environment (.env is honoured).

    TURBDIP_THREADS        cap on torch intra-op threads (unset = torch default)
    TURBDIP_LOG_LEVEL      root log level, default INFO
    TURBDIP_DETERMINISTIC  1 (default) forces deterministic torch kernels
"""
import logging
import os
from dataclasses import dataclass
from typing import Optional

import torch
from dotenv import load_dotenv

from engine.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class Settings:
    threads: Optional[int] = None
    log_level: str = "INFO"
    deterministic: bool = True

    @classmethod
    def from_env(cls) -> "Settings":
        load_dotenv()
        threads = os.getenv("TURBDIP_THREADS")
        try:
            threads = int(threads) if threads else None
        except ValueError as e:
            raise ConfigError(f"TURBDIP_THREADS must be an integer, got {threads!r}") from e
        if threads is not None and threads < 1:
            raise ConfigError(f"TURBDIP_THREADS must be >= 1, got {threads}")

        return cls(
            threads=threads,
            log_level=os.getenv("TURBDIP_LOG_LEVEL", "INFO").upper(),
            deterministic=os.getenv("TURBDIP_DETERMINISTIC", "1").strip().lower() not in ("0", "false", "no"),
        )

    def apply(self):
        if self.threads:
            torch.set_num_threads(self.threads)
            logger.debug(f"torch threads capped at {self.threads}")
        torch.use_deterministic_algorithms(self.deterministic)


# Global settings instance
_settings = None


def get_settings() -> Settings:
    """Get global settings instance"""
    global _settings
    if _settings is None:
        _settings = Settings.from_env()
    return _settings


def reset_settings():
    global _settings
    _settings = None

# sgdlab/app/config.py
import logging
import os
import sys
from typing import Optional

from dotenv import load_dotenv

from .errors import ConfigError

load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEFAULT_CHUNK_SIZE = 65536

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None) -> None:
    """Configure root logging once; level falls back to SGDLAB_LOG_LEVEL."""
    level = (level or os.getenv("SGDLAB_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logger.debug(f"Logging configured at level {level}")


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {raw!r}")


def get_threads(requested: Optional[int] = None) -> int:
    """Resolve the worker count: --threads first, then SGDLAB_THREADS; 0 means auto."""
    threads = requested if requested is not None else _env_int("SGDLAB_THREADS", 0)
    if threads < 0:
        raise ConfigError(f"threads must be >= 0, got {threads}")
    if threads == 0:
        threads = os.cpu_count() or 1
    return threads


def get_chunk_size() -> int:
    chunk = _env_int("SGDLAB_CHUNK_SIZE", DEFAULT_CHUNK_SIZE)
    if chunk < 1:
        raise ConfigError(f"SGDLAB_CHUNK_SIZE must be positive, got {chunk}")
    return chunk

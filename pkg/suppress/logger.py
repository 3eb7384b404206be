# ============================================
#   Suppress — Central logger
# ============================================

import logging
import os
import sys
from logging.handlers import TimedRotatingFileHandler

from suppress.config import LOG_FILE, LOG_LEVEL, DEFAULT_LOG_LEVEL, ROOT_LOGGER_NAME

_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"
_DATEFMT = "%Y-%m-%d %H:%M:%S"


def _configure_root_logger() -> logging.Logger:
    """
    Configure the root Suppress logger once (idempotent).
    Always logs to stderr; adds a daily rotating file (30 days kept)
    when SUPPRESS_DETECT_LOG_FILE is set.
    """
    logger = logging.getLogger(ROOT_LOGGER_NAME)

    # Prevent duplicate handlers on repeated imports / test runs
    if logger.handlers:
        return logger

    level = (LOG_LEVEL or DEFAULT_LOG_LEVEL).upper()
    logger.setLevel(getattr(logging, level, logging.INFO))

    formatter = logging.Formatter(_FORMAT, datefmt=_DATEFMT)

    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(formatter)
    logger.addHandler(stream)

    if LOG_FILE:
        try:
            os.makedirs(os.path.dirname(os.path.abspath(LOG_FILE)), exist_ok=True)
            handler = TimedRotatingFileHandler(
                LOG_FILE,
                when="midnight",
                backupCount=30,
                encoding="utf-8",
                utc=False,
            )
            handler.setFormatter(formatter)
            logger.addHandler(handler)
        except OSError:
            logger.warning(f"Could not open log file {LOG_FILE}, stderr only.")

    logger.propagate = False  # prevent double logging to root

    return logger


def set_level(level: str) -> str:
    """
    Re-level the root logger. SUPPRESS_DETECT_LOG wins over `level`.
    Returns the level actually applied.
    """
    chosen = (LOG_LEVEL or level or DEFAULT_LOG_LEVEL).upper()
    _configure_root_logger().setLevel(getattr(logging, chosen, logging.INFO))
    return chosen


def get_logger(module_name: str) -> logging.Logger:
    """
    Return a child logger for a given module name.
    Example: get_logger("weighting") → suppress.weighting
    """
    root = _configure_root_logger()
    return root.getChild(module_name)


def log_debug(module: str, message: str):
    get_logger(module).debug(message)


def log_info(module: str, message: str):
    get_logger(module).info(message)


def log_warning(module: str, message: str):
    get_logger(module).warning(message)

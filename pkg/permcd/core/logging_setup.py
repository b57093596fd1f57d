"""
Console logging setup for command-line entry points.

Library modules only create module loggers; handlers are attached here.
"""

import logging
import os
import sys
from typing import Optional

import colorlog

LOG_FORMAT = "%(log_color)s%(asctime)s [%(levelname)8s]%(reset)s [%(name)s] %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "red,bg_white",
}


def setup_logging(level: Optional[str] = None) -> logging.Logger:
    """
    Attach a colored stderr handler to the package logger.

    Args:
        level: Level name; defaults to PERMCD_LOG_LEVEL or INFO

    Returns:
        The configured ``permcd`` logger
    """
    level_name = (level or os.getenv("PERMCD_LOG_LEVEL", "INFO")).upper()
    numeric = logging.getLevelName(level_name)
    if not isinstance(numeric, int):
        raise ValueError(f"Unknown log level: {level_name}")

    handler = colorlog.StreamHandler(sys.stderr)
    handler.setFormatter(
        colorlog.ColoredFormatter(LOG_FORMAT, datefmt=DATE_FORMAT, log_colors=LOG_COLORS)
    )

    logger = logging.getLogger("permcd")
    # Re-running inside one process (tests, notebooks) must not stack handlers
    for existing in list(logger.handlers):
        if getattr(existing, "_permcd_console", False):
            logger.removeHandler(existing)
    handler._permcd_console = True
    logger.addHandler(handler)
    logger.setLevel(numeric)
    return logger

"""
Logging Configuration
Centralized logging setup
"""

import logging
import sys
from pathlib import Path
from typing import Optional, Union

DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logger(
    name: str = "arc_lab",
    level: Union[int, str, None] = None,
    format_string: Optional[str] = None
) -> logging.Logger:
    """
    Set up and configure logger

    Args:
        name: Logger name
        level: Logging level; defaults to INFO until the application applies its own
        format_string: Custom format string

    Returns:
        Configured logger instance
    """
    if format_string is None:
        format_string = DEFAULT_FORMAT
    if level is None:
        level = logging.INFO

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Avoid adding multiple handlers
    if logger.handlers:
        return logger

    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(level)

    formatter = logging.Formatter(format_string)
    handler.setFormatter(formatter)

    logger.addHandler(handler)

    return logger


def set_level(logger: logging.Logger, level: Union[int, str]) -> None:
    """Apply a level to the logger and every handler already attached"""
    logger.setLevel(level)
    for handler in logger.handlers:
        handler.setLevel(level)


def add_sidecar_log(logger: logging.Logger, path: Union[str, Path]) -> logging.FileHandler:
    """
    Attach a file handler writing the same format next to run outputs.
    Timestamps belong here, never inside data files.

    Args:
        logger: Logger to extend
        path: Log file location

    Returns:
        The attached handler, so callers can detach it after the run
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setLevel(logger.level)
    handler.setFormatter(logging.Formatter(DEFAULT_FORMAT))
    logger.addHandler(handler)
    return handler


def remove_sidecar_log(logger: logging.Logger, handler: logging.FileHandler) -> None:
    """Detach and close a handler created by add_sidecar_log"""
    logger.removeHandler(handler)
    handler.close()


# Default logger instance
logger = setup_logger()

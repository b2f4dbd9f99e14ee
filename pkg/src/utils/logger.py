import logging
import os
import sys

_LOGGER_NAMES = set()


def setup_logger(name=None):
    """
    Simple logger that outputs to stdout so batch runs can be piped or
    collected by whatever launches them. Level comes from BILLIARD_LOG_LEVEL.
    """
    logger = logging.getLogger(name or "billiards")
    _LOGGER_NAMES.add(logger.name)
    if logger.handlers:
        return logger

    handler = logging.StreamHandler(sys.stdout)
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    handler.setFormatter(formatter)
    logger.addHandler(handler)
    logger.setLevel(os.getenv("BILLIARD_LOG_LEVEL", "INFO").upper())
    logger.propagate = False
    return logger


def set_log_level(level):
    """
    Applies a level to every logger created through setup_logger.
    Used by the CLI verbosity flags.
    """
    for name in _LOGGER_NAMES:
        logging.getLogger(name).setLevel(level)


def verbosity_to_level(verbosity):
    if verbosity >= 1:
        return logging.DEBUG
    if verbosity <= -1:
        return logging.WARNING
    return logging.INFO

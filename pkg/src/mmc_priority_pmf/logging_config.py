"""Logging helpers for the CLI."""

import logging

LOGGER_NAME = "mmc_priority_pmf"
WARNINGS_LOGGER_NAME = "py.warnings"

BRIEF_FORMAT = "%(levelname)s: %(message)s"
# verbose runs name the module so solver, inversion and simulator lines stay apart
VERBOSE_FORMAT = "%(levelname)s %(name)s: %(message)s"


def setup_logging(verbose=False):
    """Configure and return the project logger.

    Module loggers (``mmc_priority_pmf.fpi`` and so on) propagate into it.
    Python warnings, such as numpy overflow or invalid-value warnings raised
    while sampling a PGF near its singularities, are routed to the same handler.
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    formatter = logging.Formatter(VERBOSE_FORMAT if verbose else BRIEF_FORMAT)

    if not logger.handlers:
        logger.addHandler(logging.StreamHandler())
    for handler in logger.handlers:
        handler.setFormatter(formatter)
    logger.propagate = False

    logging.captureWarnings(True)
    warnings_logger = logging.getLogger(WARNINGS_LOGGER_NAME)
    for handler in logger.handlers:
        if handler not in warnings_logger.handlers:
            warnings_logger.addHandler(handler)
    warnings_logger.propagate = False
    return logger

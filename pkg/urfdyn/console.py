"""
Shared Rich Console singleton and logging setup.

All terminal output in urfdyn goes through the one Console created here, so
progress messages, tables and log records share a single coordinated output
pipeline (and tests can patch `console` in one place).

Library modules never print. They log through `logging.getLogger(__name__)`
and `configure_logging()` routes those records into the same console via
Rich's logging handler.

Usage:
    from .console import console
    console.print("[green]✓ Dataset written[/green]")
"""

import logging

from rich.console import Console
from rich.logging import RichHandler

console = Console()

# Parent logger for every module in the package (urfdyn.features, ...).
LOGGER_NAME = "urfdyn"


def configure_logging(verbose: bool = False) -> logging.Logger:
    """Attach a RichHandler bound to the shared console to the package logger.

    Safe to call more than once: an existing handler is reused and only the
    level changes.

    Args:
        verbose: DEBUG level when True (per-iteration solver traces), INFO otherwise.

    Returns:
        The configured package logger.
    """
    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(console=console, show_path=False, markup=False)
        handler.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(handler)
    # Keep records from reaching the root logger a second time.
    logger.propagate = False
    return logger

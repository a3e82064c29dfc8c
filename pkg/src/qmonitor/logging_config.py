"""
# Implements: qmonitor:Logging
# Description: Logging configuration for simulations and analyses
"""

import logging
import logging.handlers
import sys
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Generator, Optional

from rich.console import Console
from rich.logging import RichHandler


class ContextFilter(logging.Filter):
    """Filter that stamps experiment context onto log records."""

    def __init__(self):
        super().__init__()
        self._context = threading.local()
        self._context.data = {}

    def filter(self, record: logging.LogRecord) -> bool:
        context_data = getattr(self._context, "data", {})
        for key, value in context_data.items():
            setattr(record, key, value)
        return True

    @contextmanager
    def context(self, **kwargs) -> Generator[None, None, None]:
        """Add context data (experiment name, seed) for the enclosed block."""
        old_data = getattr(self._context, "data", {}).copy()
        self._context.data = {**old_data, **kwargs}
        try:
            yield
        finally:
            self._context.data = old_data


class ExperimentLogFormatter(logging.Formatter):
    """Formatter that tolerates records without experiment context."""

    def format(self, record: logging.LogRecord) -> str:
        if not hasattr(record, "experiment"):
            record.experiment = "-"
        if not hasattr(record, "seed"):
            record.seed = "-"
        return super().format(record)


DEFAULT_FORMAT = (
    "%(asctime)s [%(experiment)s] [seed=%(seed)s] "
    "%(name)s - %(levelname)s - %(message)s"
)
RICH_FORMAT = "[%(experiment)s] %(message)s"


def configure_logging(
    log_level: str = "INFO",
    log_file: Optional[str] = None,
    log_format: str = DEFAULT_FORMAT,
    use_rich: Optional[bool] = None,
) -> ContextFilter:
    """Configure logging for the application.

    Args:
        log_level: The logging level (default: INFO)
        log_file: Optional path to a rotating log file
        log_format: Format for plain and file handlers
        use_rich: Force the rich console handler on or off; by default it is
            used when stderr is a terminal

    Returns:
        The context filter for adding experiment context
    """
    numeric_level = getattr(logging, log_level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {log_level}")

    context_filter = ContextFilter()

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    if use_rich is None:
        use_rich = sys.stderr.isatty()

    if use_rich:
        console_handler: logging.Handler = RichHandler(
            console=Console(stderr=True), show_path=False
        )
        console_handler.setFormatter(ExperimentLogFormatter(RICH_FORMAT))
    else:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(ExperimentLogFormatter(log_format))
    console_handler.addFilter(context_filter)
    root_logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_file, maxBytes=10 * 1024 * 1024, backupCount=5  # 10MB
        )
        file_handler.setFormatter(ExperimentLogFormatter(log_format))
        file_handler.addFilter(context_filter)
        root_logger.addHandler(file_handler)

    return context_filter

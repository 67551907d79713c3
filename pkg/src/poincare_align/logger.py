"""
Logging system for Poincare Align
"""

import logging
import os

LOGGER_NAME = "poincare_align"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Logger:
    """Owns the handlers of the package logger.

    Library modules log through ``logging.getLogger(__name__)`` and their
    records propagate here. Creating a second ``Logger`` replaces the
    handlers of the first, so each run writes one log file.
    """

    def __init__(self, log_file: str = "poincare_align.log", enabled: bool = True, console: bool = True):
        self.enabled = enabled
        self.log_file = log_file
        self.console = console
        self.logger = None
        self.setup_logger()

    def setup_logger(self) -> None:
        if not self.enabled:
            return

        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False
        _remove_handlers(self.logger)

        os.makedirs(os.path.dirname(self.log_file) if os.path.dirname(self.log_file) else ".", exist_ok=True)

        formatter = logging.Formatter(LOG_FORMAT)

        file_handler = logging.FileHandler(self.log_file, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        self.logger.addHandler(file_handler)

        if self.console:
            console_handler = logging.StreamHandler()
            console_handler.setLevel(logging.INFO)
            console_handler.setFormatter(formatter)
            self.logger.addHandler(console_handler)

    def debug(self, message: str) -> None:
        if self.enabled and self.logger:
            self.logger.debug(message)

    def info(self, message: str) -> None:
        if self.enabled and self.logger:
            self.logger.info(message)

    def warning(self, message: str) -> None:
        if self.enabled and self.logger:
            self.logger.warning(message)

    def error(self, message: str) -> None:
        if self.enabled and self.logger:
            self.logger.error(message)

    def critical(self, message: str) -> None:
        if self.enabled and self.logger:
            self.logger.critical(message)

    def set_enabled(self, enabled: bool) -> None:
        self.enabled = enabled
        if enabled and not self.logger:
            self.setup_logger()
        elif not enabled and self.logger:
            _remove_handlers(self.logger)
            self.logger = None

    def close(self) -> None:
        """Detach and close every handler (releases the log file)."""
        if self.logger:
            _remove_handlers(self.logger)


def _remove_handlers(logger: logging.Logger) -> None:
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
        handler.close()

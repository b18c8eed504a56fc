import logging
from typing import Optional

from ._logger import LOGGER_NAME


class _Base:
    """ Base class for RepCNN components

    To implement for all class

    - log: Logger object for logging

    Args:
        log (logging.Logger, optional): Logger, default is None, use the package logger
        log_level (int, str, optional): Log level, default is None, leave the logger level untouched
    """
    def __init__(self, *args, log: Optional[logging.Logger] = None, log_level: [int, str] = None, **kwargs):
        self.log = log or logging.getLogger(LOGGER_NAME)
        if log_level is not None:
            if isinstance(log_level, str):
                log_level = log_level.upper()
            self.log.setLevel(log_level)

import logging
import os
from logging.handlers import RotatingFileHandler

LOGGER_NAME = "repcnn_kws"
""" Package root logger name """

LOG_ENV = "REPCNN_LOG"
""" Environment variable holding the log verbosity """


class ColoredFormatter(logging.Formatter):
    """ Colored formatter for logging """

    COLOR_CODES = {
        'DEBUG': '\033[94m',    # blue
        'INFO': '\033[92m',     # green
        'WARNING': '\033[93m',  # yellow
        'ERROR': '\033[91m',    # red
        'CRITICAL': '\033[95m'  # magenta
    }
    RESET_CODE = '\033[0m'

    def format(self, record):
        levelname = record.levelname
        color_code = self.COLOR_CODES.get(levelname, '')
        reset_code = self.RESET_CODE if color_code else ''
        record = logging.makeLogRecord(record.__dict__)
        record.levelname = f'{color_code}{levelname}{reset_code}'
        return super().format(record)


def level_from_env(default: int = logging.INFO) -> int:
    """ Read the log level from REPCNN_LOG

    Accepts level names (``debug``, ``info``, ...) or numbers.

    Args:
        default (int, optional): Level used when the variable is unset or invalid, default is INFO

    Returns:
        int: Log level
    """
    value = os.environ.get(LOG_ENV, "").strip()
    if not value:
        return default
    if value.isdigit():
        return int(value)
    level = logging.getLevelName(value.upper())
    return level if isinstance(level, int) else default


def setup_logger(name: str = LOGGER_NAME, level: [int, str] = None, file: str = None,
                 maxBytes: int = 10*1024*1024, backupCount: int = 10) -> logging.Logger:
    """ Configure a logger with a colored console handler and an optional rotating file handler

    Args:
        name (str, optional): Logger name, default is the package logger
        level (int or str, optional): Log level, default is None, read from REPCNN_LOG
        file (str, optional): Log file path, default is None, no log file will be created
        maxBytes (int, optional): Maximum log file size, default is 10MB
        backupCount (int, optional): Maximum number of backup log files, default is 10

    Returns:
        logging.Logger: The configured logger
    """
    if level is None:
        level = level_from_env()
    elif isinstance(level, str):
        level = level.upper()
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    for handler in list(logger.handlers):
        if getattr(handler, "_repcnn_handler", False):
            logger.removeHandler(handler)
            handler.close()

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(ColoredFormatter('[%(levelname)s] %(message)s'))
    console_handler._repcnn_handler = True
    logger.addHandler(console_handler)

    if file is not None:
        file_formatter = logging.Formatter('%(asctime)s.%(msecs)03d [%(levelname)s] %(message)s', datefmt='%y/%m/%d %H:%M:%S')
        file_handler = RotatingFileHandler(file, maxBytes=maxBytes, backupCount=backupCount)
        file_handler.setLevel(level)
        file_handler.setFormatter(file_formatter)
        file_handler._repcnn_handler = True
        logger.addHandler(file_handler)
    return logger

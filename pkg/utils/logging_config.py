"""
Logging Configuration for LatentForge
Provides centralized logging setup with file and console handlers
"""
import logging
import os
from datetime import datetime
from config.settings import Config


def setup_logging(level: str = None):
    """
    Configure application logging

    Handlers are installed on the root logger so every module logger
    (`logging.getLogger(__name__)`) reaches them.

    Args:
        level: Overrides Config.LOG_LEVEL when given

    Returns:
        logging.Logger: The 'latentforge' application logger
    """
    level_name = (level or Config.LOG_LEVEL).upper()
    level_value = getattr(logging, level_name, logging.INFO)

    root = logging.getLogger()
    root.setLevel(level_value)

    # Remove existing handlers
    root.handlers = []

    # Console handler
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level_value)
    console_format = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    console_handler.setFormatter(console_format)
    root.addHandler(console_handler)

    # File handler, one file per day
    log_file = None
    if Config.LOG_TO_FILE:
        os.makedirs(Config.LOG_DIR, exist_ok=True)
        log_file = os.path.join(Config.LOG_DIR, f"latentforge_{datetime.now().strftime('%Y%m%d')}.log")
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(level_value)
        file_format = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        file_handler.setFormatter(file_format)
        root.addHandler(file_handler)

    logger = logging.getLogger('latentforge')
    logger.debug("=" * 60)
    logger.debug("LatentForge - Logging Initialized")
    logger.debug(f"Log Level: {level_name}")
    logger.debug(f"Log File: {log_file or 'disabled'}")
    logger.debug("=" * 60)

    for warning in Config.validate():
        logger.warning(warning)

    return logger

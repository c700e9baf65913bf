"""
Configuration Management for LatentForge
Loads runtime settings from environment variables (and an optional .env file)
"""
import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _env_flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    """Application configuration from environment variables"""

    # Logging
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()
    LOG_DIR = os.getenv('LOG_DIR', 'logs')
    LOG_TO_FILE = _env_flag('LOG_TO_FILE', 'True')

    # Parallelism
    MAX_WORKERS = int(os.getenv('LATENTFORGE_THREADS', 4))

    # Test suite
    SLOW_TESTS = _env_flag('LATENTFORGE_SLOW_TESTS', 'False')

    # Container formats
    VDT_VERSION = 1
    CHECKPOINT_VERSION = 1

    @classmethod
    def worker_count(cls) -> int:
        """Thread cap for embarrassingly parallel work, never below 1"""
        return max(1, cls.MAX_WORKERS)

    @classmethod
    def validate(cls):
        """Validate configuration, returning warnings instead of raising"""
        warnings = []

        if cls.MAX_WORKERS < 1:
            warnings.append(f"LATENTFORGE_THREADS={cls.MAX_WORKERS} is below 1 - using a single worker")

        if cls.LOG_LEVEL not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            warnings.append(f"Unknown LOG_LEVEL {cls.LOG_LEVEL} - falling back to INFO")

        return warnings

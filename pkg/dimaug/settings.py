"""Process settings with environment variable support."""

import os

from dotenv import load_dotenv


load_dotenv()


class AppSettings:
    """Centralized process settings with environment variable fallbacks."""

    # Logging
    LOG_LEVEL = os.getenv('DIMAUG_LOG_LEVEL', 'INFO')
    LOG_JSON = os.getenv('DIMAUG_LOG_JSON', 'false').lower() in ('1', 'true', 'yes')

    # Output
    DEFAULT_OUT_DIR = os.getenv('DIMAUG_OUT_DIR', 'runs/default')

    # Data loading
    DECODE_WORKERS = int(os.getenv('DIMAUG_DECODE_WORKERS', '4'))
    PREFETCH_DEPTH = int(os.getenv('DIMAUG_PREFETCH_DEPTH', '2'))

    @classmethod
    def reload(cls) -> None:
        """Re-read the environment (used after ``.env`` changes and in tests)."""
        load_dotenv(override=False)
        cls.LOG_LEVEL = os.getenv('DIMAUG_LOG_LEVEL', 'INFO')
        cls.LOG_JSON = os.getenv('DIMAUG_LOG_JSON', 'false').lower() in ('1', 'true', 'yes')
        cls.DEFAULT_OUT_DIR = os.getenv('DIMAUG_OUT_DIR', 'runs/default')
        cls.DECODE_WORKERS = int(os.getenv('DIMAUG_DECODE_WORKERS', '4'))
        cls.PREFETCH_DEPTH = int(os.getenv('DIMAUG_PREFETCH_DEPTH', '2'))

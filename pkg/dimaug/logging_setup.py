"""Logging configuration and structured run context.

Every run gets a short correlation id. Log records emitted through ``run_logger`` carry
``run_id`` and ``stage`` so the JSON-lines sink can be filtered per run and stage.
"""

import sys
import uuid
from pathlib import Path
from typing import Any, Dict, Optional

from loguru import logger


_MAX_VALUE_CHARS = 200
_CONSOLE_FORMAT = (
    '<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | '
    '{extra[run_id]}:{extra[stage]} | {message}'
)


def configure_logging(
    level: str = 'INFO',
    log_file: Optional[Path] = None,
    serialize: bool = False,
) -> None:
    """Replace loguru's default handler with the dimaug sinks.

    Args:
        level: Minimum level for the stderr sink.
        log_file: Optional file sink; receives DEBUG and above.
        serialize: Write the file sink as JSON lines.
    """
    logger.remove()
    logger.configure(extra={'run_id': '-', 'stage': '-'})
    logger.add(sys.stderr, level=level, format=_CONSOLE_FORMAT)
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        logger.add(str(log_file), level='DEBUG', serialize=serialize, enqueue=False)


def new_run_id() -> str:
    """Return an 8-hex correlation id."""
    return uuid.uuid4().hex[:8]


def _truncate(value: Any) -> Any:
    if isinstance(value, str) and len(value) > _MAX_VALUE_CHARS:
        return value[:_MAX_VALUE_CHARS] + '...[TRUNCATED]'
    return value


def run_logger(run_id: str, stage: str, **context: Any):
    """Return a logger bound to a run and stage, with long string values truncated."""
    extra: Dict[str, Any] = {key: _truncate(value) for key, value in context.items()}
    return logger.bind(run_id=run_id, stage=stage, **extra)

"""Decorators for consistent stage error handling."""

import functools
from typing import Any, Callable

from loguru import logger

from dimaug.exceptions import DimAugError, PipelineStageError


def stage_error_handler(stage: str) -> Callable[[Callable], Callable]:
    """Convert failures inside a pipeline stage into ``PipelineStageError``.

    Domain errors keep their message; ValueErrors are logged as warnings and anything else as
    critical. An existing ``PipelineStageError`` passes through untouched.
    """

    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs) -> Any:
            try:
                return func(*args, **kwargs)
            except PipelineStageError:
                raise
            except DimAugError as e:
                logger.error(f'Stage {stage} failed in {func.__name__}: {e}')
                raise PipelineStageError(stage, str(e)) from e
            except ValueError as e:
                logger.warning(f'Invalid input in {func.__name__}: {e}')
                raise PipelineStageError(stage, f'Invalid input: {e}') from e
            except Exception as e:
                logger.critical(f'Unexpected error in {func.__name__}: {e}')
                raise PipelineStageError(stage, f'{type(e).__name__}: {e}') from e

        return wrapper

    return decorator

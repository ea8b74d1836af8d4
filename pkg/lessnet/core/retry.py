"""Bounded retry utilities."""

import logging
from collections.abc import Callable
from typing import TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


class RetryExhaustedError(Exception):
    """All attempts failed."""

    def __init__(self, attempts: int, last_error: Exception):
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"all {attempts} attempts failed; last error: {last_error}")


def retry_attempts(
    func: Callable[[int], T],
    max_attempts: int = 10,
    retryable_exceptions: tuple[type[Exception], ...] = (Exception,),
    log_errors: bool = True,
) -> T:
    """Call ``func(attempt)`` until it succeeds or the attempts run out.

    The attempt index is passed to ``func`` so that a retry can draw fresh
    randomness deterministically (e.g. ``seed + attempt``). There is no delay
    between attempts.

    Args:
        func: Callable receiving the zero-based attempt index
        max_attempts: Maximum number of attempts
        retryable_exceptions: Exceptions that trigger another attempt
        log_errors: Whether to log failed attempts

    Returns:
        Result of the first successful call

    Raises:
        RetryExhaustedError: If every attempt raised a retryable exception
    """
    if max_attempts < 1:
        raise ValueError(f"max_attempts must be >= 1, got {max_attempts}")

    last_exception: Exception | None = None
    for attempt in range(max_attempts):
        try:
            return func(attempt)
        except retryable_exceptions as e:
            last_exception = e
            if log_errors:
                logger.warning(f"Attempt {attempt + 1}/{max_attempts} failed: {e}")

    assert last_exception is not None
    if log_errors:
        logger.error(f"All {max_attempts} attempts failed. Last error: {last_exception}")
    raise RetryExhaustedError(max_attempts, last_exception)

"""
Exception hierarchy for Coexist Twin.

Every error raised on purpose by the library derives from CoexistError so callers
(and the CLI) can separate domain failures from programming errors.
"""

from typing import Optional


class CoexistError(Exception):
    """Base class for all library errors."""


class ConfigError(CoexistError, ValueError):
    """Malformed or invalid scenario configuration."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class DomainError(CoexistError, ValueError):
    """A mathematical function was evaluated outside its domain."""


class RegimeError(DomainError):
    """A convergence bound was requested outside the regime where it is defined."""


class OrderingError(CoexistError):
    """Metric events arrived out of time order."""


class ProtocolError(CoexistError):
    """The n-sync distributed-learning protocol was driven incorrectly."""


class PlanError(CoexistError, ValueError):
    """An experiment plan does not match the scenario it runs against."""

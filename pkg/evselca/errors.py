from __future__ import annotations

from typing import List, Optional, Any

__all__ = [
    'EvselcaError', 'InputError', 'ValidationError', 'InfeasibleError',
    'ClusteringError', 'LimitExceededError']


class EvselcaError(Exception):
    """Base class. `prefix` is printed in front of every CLI error message."""
    prefix = 'error'
    exit_code = 1

    def __str__(self) -> str:
        return f'{self.prefix}: {super().__str__()}'


class InputError(EvselcaError, ValueError):
    """Malformed files, unknown values or parameters outside their domain."""
    prefix = 'bad-input'
    exit_code = 2


class ValidationError(InputError):
    """Raised when an instance or configuration breaks its invariants."""

    def __init__(self, message: str, violations: Optional[List[Any]] = None):
        super().__init__(message)
        self.violations = list(violations or [])


class InfeasibleError(EvselcaError):
    """No solution exists for the requested problem."""
    prefix = 'infeasible'


class ClusteringError(InfeasibleError):
    """A route cannot be split without breaking the within-cluster travel cap."""

    def __init__(self, message: str, route: int, leg: int, leg_min: float):
        super().__init__(message)
        self.route = route
        self.leg = leg
        self.leg_min = leg_min


class LimitExceededError(EvselcaError):
    """A configured size cap would be exceeded. Nothing is silently truncated."""
    prefix = 'refused'

"""Exception hierarchy shared by all modules.

The CLI maps :class:`ConfigError` to exit code 2 and every other
:class:`BlendobsError` to exit code 3.
"""

from __future__ import annotations


class BlendobsError(Exception):
    """Base class for all package errors."""


class ConfigError(BlendobsError, ValueError):
    """Malformed or invalid configuration (network, scenario, law)."""


class SimulationError(BlendobsError, RuntimeError):
    """A run could not continue."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class DomainError(SimulationError, ValueError):
    """A state left the admissible range of a pressure law."""


class SubsonicError(SimulationError):
    """lambda_plus <= 0 or lambda_minus >= 0 somewhere on a pipe."""


class MixingSingularityError(SimulationError):
    """Perfect-mixing weights are undefined at a node (stalled flow)."""


class SteadyStateError(SimulationError):
    """Steady-state computation failed (sonic choking, Newton divergence)."""

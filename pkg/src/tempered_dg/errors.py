"""Exception hierarchy shared by every layer of the package.

Each class carries an ``exit_code`` so the command-line front end can map a
failure to a distinct process status without inspecting messages.
"""

from __future__ import annotations


class TemperedDGError(Exception):
    """Base class for all errors raised by the package."""

    exit_code = 1


class InvalidOrderError(TemperedDGError, ValueError):
    exit_code = 3


class OutOfDomainError(TemperedDGError, ValueError):
    exit_code = 3


class SingularPointError(TemperedDGError, ValueError):
    exit_code = 3


class NonIntegrableKernelError(TemperedDGError, ValueError):
    exit_code = 3


class InvalidInputError(TemperedDGError, ValueError):
    exit_code = 4


class DegenerateRayError(TemperedDGError, ValueError):
    """The query line passes through a mesh vertex."""

    exit_code = 4


class SolverFailure(TemperedDGError, RuntimeError):
    exit_code = 5


class AdaptivityAbort(TemperedDGError, RuntimeError):
    """Time step underflow or degree-of-freedom cap exceeded."""

    exit_code = 6


class UndefinedIndexError(TemperedDGError, ValueError):
    exit_code = 7


class ConfigError(TemperedDGError, ValueError):
    exit_code = 2

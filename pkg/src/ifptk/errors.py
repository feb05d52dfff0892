"""Exception hierarchy shared by the solvers."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class NumericalFailure(RuntimeError):
    """Base class for failures of a numerical procedure (CLI exit code 1)."""


class CompatibilityViolation(NumericalFailure):
    """The survival data cannot be produced by any barrier.

    ``time`` and ``iteration`` locate the failure when it is detected inside
    the inverse iteration; both are ``None`` for up-front checks.
    """

    def __init__(self, message: str, time: float | None = None, iteration: int | None = None):
        super().__init__(message)
        self.time = time
        self.iteration = iteration


class NonConvergence(NumericalFailure):
    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class StabilityError(NumericalFailure):
    def __init__(self, message: str, suggested_dt: float | None = None):
        super().__init__(message)
        self.suggested_dt = suggested_dt

from typing import List, Optional


class OtsepError(Exception):
    """Base class for all errors raised by otsep."""

    exit_code = 1


class ConfigurationError(OtsepError):
    """Invalid option combination or parameter value."""

    exit_code = 2


class DatasetError(OtsepError):
    """A dataset failed to parse or violates an observation invariant."""

    exit_code = 2

    def __init__(self, message: str, violations: Optional[List[str]] = None):
        self.violations = list(violations or [])
        if self.violations:
            message = message + ": " + "; ".join(self.violations)
        super().__init__(message)


class EmptyFitError(OtsepError):
    """Raised when a weighted fit receives zero total weight."""


class SolverError(OtsepError):
    """The linear programming solver could not produce an optimum."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        self.diagnostics = dict(diagnostics or {})
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class InfeasibleError(SolverError):
    """Raised when phase 1 ends with positive infeasibility."""


class UnboundedError(SolverError):
    """Raised when an entering column has no blocking row."""


class IterationLimitError(SolverError):
    """Raised when the pivot budget is exhausted."""


class DimensionMismatchError(ConfigurationError, ValueError):
    """Raised when points, measures or models disagree on the state dimension."""

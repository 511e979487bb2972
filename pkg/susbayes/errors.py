"""
Exception types raised by SusBayes.

Every error carries its kind in its class so callers (and the CLI exit
code mapping) can tell validation problems from runtime failures.
"""

from typing import Optional


class SusBayesError(Exception):
    """Base class for all SusBayes errors."""


class ConfigurationError(SusBayesError, ValueError):
    """Invalid run configuration, run file or problem setup."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.path = path

    def __str__(self) -> str:
        if self.path and self.line is not None:
            return f"{self.path}:{self.line}: {self.message}"
        if self.line is not None:
            return f"line {self.line}: {self.message}"
        return self.message


class DomainError(SusBayesError, ValueError):
    """Argument outside the domain of a numerical function."""


class ContractViolationError(SusBayesError, ValueError):
    """A precondition between cooperating routines was broken."""


class LikelihoodEvaluationError(SusBayesError, RuntimeError):
    """A user likelihood raised or returned NaN / +inf."""


class DegenerateLevelError(SusBayesError, ValueError):
    """No sample of a level crossed its threshold."""


class DegenerateWeightsError(SusBayesError, ValueError):
    """All importance weights are zero."""


class BoundViolationError(SusBayesError, ValueError):
    """A BUS sample exceeded the supplied likelihood bound."""


class QuadratureError(SusBayesError, RuntimeError):
    """Oracle quadrature failed to reach its tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved tolerance {achieved:.3g})")
        self.achieved = achieved


class ModalAnalysisError(SusBayesError, RuntimeError):
    """Structural eigenproblem could not be solved."""


class SingularResponseError(SusBayesError, ValueError):
    """Undamped mode evaluated exactly at its natural frequency."""

"""Exception types shared across the solver and validator layers."""


class LpCurvError(Exception):
    """Base class for all package-specific errors."""


class NotInCone(LpCurvError):
    """A tensor field left the positive-definite cone (strict convexity lost)."""

    def __init__(self, message: str, min_eigenvalue: float | None = None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class ConeExit(LpCurvError):
    """A solver iterate left the admissible cone and backtracking failed."""


class MaxStepsExceeded(LpCurvError):
    """Continuation or Newton iteration exhausted its step budget."""


class LinearSolveFailure(LpCurvError):
    """The linearized elliptic system could not be solved to tolerance."""


class HomotopyStalled(LpCurvError):
    """Outer continuation reached the minimum step in t without converging."""


class GammaOutOfRange(LpCurvError):
    """Gradient-estimate exponent outside the admissible open interval."""


class LemmaViolated(LpCurvError):
    """A checker for a theorem failed: indicates a bug or invalid input."""

"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class GridMismatch(ToolkitError):
    """Operands are sampled on different grids."""


class BlockStructureViolation(ToolkitError):
    """A similarity transform did not produce the expected zero block."""


class NonPositiveBound(ToolkitError):
    """A positive spectral lower bound was required but does not exist."""


class DuplicateFrequency(ToolkitError):
    """A signal-model block was requested twice at the same frequency."""


class NoConvergence(ToolkitError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, iterations=None, delta=None):
        super().__init__(message)
        self.iterations = iterations
        self.delta = delta


class ResonantSpectrum(ToolkitError):
    """Spectra that must be disjoint intersect within tolerance."""


class SingularSystem(ToolkitError):
    """A discretized boundary-value system is numerically singular."""


class NotControllable(ToolkitError):
    """A controllability hypothesis fails."""


class NewtonDivergence(ToolkitError):
    """The Riccati iteration did not reach its residual tolerance."""


class InconsistentCertificates(ToolkitError):
    """Two independent numerical tests of one property disagree."""


class SingularStep(ToolkitError):
    """A time step produced a singular linear solve."""


class NumericalBlowup(ToolkitError):
    """A simulated state left the configured bound."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ParseError(ToolkitError):
    """A scenario file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(ToolkitError):
    """A parsed scenario violates the schema; lists every violation."""

    def __init__(self, violations):
        violations = list(violations)
        super().__init__(
            "scenario schema violations:\n  - " + "\n  - ".join(violations)
        )
        self.violations = violations

"""Exception hierarchy for binjump."""


class BinJumpError(Exception):
    """Base class for all library errors."""


class KernelEvaluationError(BinJumpError, ValueError):
    """A kernel produced a non-finite or negative value on the grid."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class GridMismatchError(BinJumpError, ValueError):
    """Two objects live on different grids."""


class EnumerationLimitError(BinJumpError, ValueError):
    """A configuration is too large for subset enumeration."""


class HorizonError(BinJumpError, ValueError):
    """A time lies at or beyond the admissible horizon, or no margin exists."""


class ContractionError(BinJumpError, ValueError):
    """A fixed-point contraction precondition fails."""


class PreconditionError(BinJumpError, ValueError):
    """An operation was called on an object it does not support."""


class PicardConvergenceError(BinJumpError, RuntimeError):
    """Picard iteration did not converge within the iteration budget."""

    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class StiffnessError(BinJumpError, RuntimeError):
    """Step-size control gave up after repeated rejections."""


class ConfigError(BinJumpError, ValueError):
    """A configuration field failed validation."""

    def __init__(self, field, expected, actual):
        self.field = field
        self.expected = expected
        self.actual = actual
        super().__init__(f"config field '{field}': expected {expected}, got {actual!r}")

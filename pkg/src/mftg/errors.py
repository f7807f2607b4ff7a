"""Exception types shared across the toolkit.

Every failure mode that callers are expected to handle gets its own class so
that scenario runners can map errors onto process exit codes without string
matching.
"""


class MFTGError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MFTGError):
    """A scenario configuration is malformed or inconsistent."""


class NonFiniteError(MFTGError):
    """A computation produced NaN or infinity."""


class NoBracketError(MFTGError):
    """A root bracket does not enclose a sign change."""


class DelayNotOnGridError(MFTGError):
    """A delay is not an integer multiple of the grid step."""


class SingularStepError(MFTGError):
    """A backward recursion hit a singular or non-positive-definite step."""


class DegenerateSupportError(MFTGError):
    """A learning update removed all probability mass."""


class GridTooCoarseError(MFTGError):
    """A grid minimizer landed on the search-box boundary."""


class InfeasibleSharingError(MFTGError):
    """A sharing decision violates nonnegativity, zero-diagonal, or budget."""


class NonpositiveCostateError(MFTGError):
    """A costate value is outside the domain of the control formula."""


class MonotonicityViolationError(MFTGError):
    """An ordering that the model guarantees failed numerically."""


class AlphaOutOfRangeError(MFTGError):
    """A pricing exponent is outside the range with guaranteed participation."""


class NegativeSlopeError(MFTGError):
    """An arrival-cost regime has negative slope, so no interior optimum."""


class VertexSampleError(MFTGError):
    """A gradient sample point is too close to a non-smooth vertex."""


class ZeroDenominatorError(MFTGError):
    """A congestion coefficient vanished where a division is required."""


class IsolatedGraphWarning(UserWarning):
    """A contact graph contains degree-zero nodes; they can only
    self-transition."""

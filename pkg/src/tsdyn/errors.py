"""Exception and warning types shared by all tsdyn modules.

Every error carries a short machine-readable ``code`` used by the CLI when
it reports a failure on a single line.
"""


class TsdynError(Exception):
    """Base class for all library errors."""

    code = "TSDYN_ERROR"

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details


class ScaleValidationError(TsdynError, ValueError):
    code = "SCALE_INVALID"


class PointNotInScale(TsdynError, ValueError):
    code = "POINT_NOT_IN_SCALE"


class UnboundedRequired(TsdynError, ValueError):
    code = "UNBOUNDED_REQUIRED"


class BeyondHorizon(TsdynError, ValueError):
    code = "BEYOND_HORIZON"


class InsufficientSamples(TsdynError, ValueError):
    code = "INSUFFICIENT_SAMPLES"


class SingularMatrix(TsdynError, ValueError):
    code = "SINGULAR_MATRIX"


class IllConditioned(TsdynError, ValueError):
    code = "ILL_CONDITIONED"


class DomainMismatch(TsdynError, ValueError):
    code = "DOMAIN_MISMATCH"


class NotRegressive(TsdynError, ValueError):
    code = "NOT_REGRESSIVE"


class NonPositiveGapMatrix(TsdynError, ValueError):
    code = "NON_POSITIVE_GAP_MATRIX"


class SingularCoefficient(TsdynError, ValueError):
    code = "SINGULAR_COEFFICIENT"


class SingularLogFactor(TsdynError, ValueError):
    code = "SINGULAR_LOG_FACTOR"


class HorizonExceeded(TsdynError, ValueError):
    code = "HORIZON_EXCEEDED"


class NotHyperbolic(TsdynError):
    """Raised when no exponential dichotomy can be detected.

    ``witness`` holds the offending eigenvalue or Floquet multiplier.
    """

    code = "NOT_HYPERBOLIC"

    def __init__(self, message="", witness=None, **details):
        super().__init__(message, **details)
        self.witness = witness


class NonPeriodicUnsupported(TsdynError):
    code = "NON_PERIODIC_UNSUPPORTED"


class ToleranceUnreachable(TsdynError):
    code = "TOLERANCE_UNREACHABLE"


class HypothesisViolated(TsdynError):
    code = "HYPOTHESIS_VIOLATED"


class LipschitzWitness(TsdynError):
    """A sampled pair (or point) contradicting the declared bounds."""

    code = "LIPSCHITZ_WITNESS"

    def __init__(self, message="", witness=None, **details):
        super().__init__(message, **details)
        self.witness = witness


class NoConvergence(TsdynError):
    code = "NO_CONVERGENCE"


class GridPointTooLarge(TsdynError, ValueError):
    code = "GRID_POINT_TOO_LARGE"


class InputError(TsdynError, ValueError):
    """Malformed input file; ``details`` names file and field."""

    code = "INPUT_INVALID"


class TruncatedTailWarning(UserWarning):
    """Query touched the right end of a truncated (aperiodic) scale."""


class ComplexLiftWarning(UserWarning):
    """A gap matrix is not positive, so the lifted coefficient is complex."""

"""Exception hierarchy shared across the package."""


class IntRLError(Exception):
    """Base class for all errors raised by :mod:`intrl`."""


class DimensionError(IntRLError, ValueError):
    """Array shapes do not match the model or basis they are used with."""


class DomainError(IntRLError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ModelError(IntRLError, ValueError):
    """A plant model violates one of its construction invariants."""


class DivergenceError(IntRLError):
    """Adaptive step size underflowed before reaching the end of the span."""


class BlowUpError(IntRLError):
    """The integrated state became non-finite or exceeded the blow-up norm."""


class AccuracyError(IntRLError):
    """A numerical integral could not be resolved to the requested tolerance."""


class IllConditionedKernelError(IntRLError):
    """The Gram matrix stays numerically singular after jitter escalation."""


class SingularRegressionError(IntRLError):
    """The policy-evaluation regression matrix is rank deficient."""


class InadmissiblePolicyError(IntRLError):
    """A policy failed to keep closed-loop trajectories bounded."""


class StabilityError(IntRLError):
    """A closed-loop matrix is not Hurwitz where stability is required."""


class FitError(IntRLError, ValueError):
    """Too few usable points remain for a log-log slope fit."""


class ConfigError(IntRLError, ValueError):
    """Invalid experiment configuration (CLI flags or config file)."""

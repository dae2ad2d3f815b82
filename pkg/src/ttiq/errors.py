"""Exception types shared across the package."""


class TtiqError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(TtiqError, ValueError):
    """An input violates a model invariant; the message names the field."""


class UnstableQueueError(TtiqError):
    """Arrival rate is at or above the service rate; no stationary regime."""


class ZeroServiceError(TtiqError):
    """No transmission can ever succeed (duration-weighted success mass is zero)."""


class NoStableQ1Error(TtiqError):
    """No duration-mix probability in [0, 1] yields a stable queue."""


class ConvergenceError(TtiqError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class TruncationError(TtiqError):
    """Truncated chain kept non-negligible mass at the top level: truncation too
    small or the chain is unstable."""

"""Exception types shared across the package."""


class TbLabError(Exception):
    """Base class for all errors raised by tblab."""


class ChunkRangeError(TbLabError):
    """A chunk id falls outside the valid range for the operation
    (typically below the buffer offset, i.e. already played or dropped)."""


class BufferCapacityError(TbLabError):
    """A write would grow a bitmap beyond its configured maximum width."""


class TraceError(TbLabError):
    """A trace is malformed or internally inconsistent."""


class ConfigError(TbLabError):
    """A configuration value is invalid.  Carries the offending field name."""

    def __init__(self, field: str, message: str):
        super().__init__(f"invalid config field {field!r}: {message}")
        self.field = field


class ModelError(TbLabError):
    """Base class for analytical-model errors."""


class NeverReachedError(ModelError):
    """The playable-video threshold is never reached (download rate too low
    relative to the drain rate for the given threshold)."""


class NonConvergingError(ModelError):
    """The download curve never meets the service curve (download rate at or
    below the playback rate)."""


class InfeasibleDesignError(ModelError):
    """A design rule produced an empty feasible region (lower bound above
    upper bound)."""


class JoinTooEarlyError(TbLabError):
    """The stream is younger than one saturated buffer width, so a joining
    host cannot take its full initial offset lag."""


class EstimationError(TbLabError):
    """An estimator could not produce a value.  ``reason`` is one of a small
    set of stable machine-readable tokens."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason

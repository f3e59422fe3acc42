"""Exception types raised across the package."""


class ArcTopKError(Exception):
    """Base class for all package errors."""


class NonDivisibleDimension(ArcTopKError, ValueError):
    pass


class DimensionMismatch(ArcTopKError, ValueError):
    pass


class ShapeMismatch(ArcTopKError, ValueError):
    pass


class IndexOutOfRange(ArcTopKError, IndexError):
    pass


class TransportFailure(ArcTopKError, RuntimeError):
    """A peer disconnected, timed out, or sent a malformed frame."""


class LengthMismatch(TransportFailure):
    """Ranks entered the same collective with different payload lengths."""


class AuditMismatch(ArcTopKError, AssertionError):
    def __init__(self, method, expected, observed):
        self.method = method
        self.expected = expected
        self.observed = observed
        super().__init__(
            f"{method}: expected {expected} entries/node, observed {observed}"
        )


class NonFiniteIterate(ArcTopKError, FloatingPointError):
    def __init__(self, t, records=None):
        self.t = t
        self.records = records if records is not None else []
        super().__init__(f"iterate became non-finite at t={t}")


class ConfigError(ArcTopKError, ValueError):
    pass

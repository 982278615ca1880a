"""Exception hierarchy shared across the package."""


class RtmError(Exception):
    """Base class for all rtmlab errors."""


class ConfigError(RtmError, ValueError):
    """Infeasible or malformed configuration."""


class ProtocolError(RtmError):
    """Malformed halo frame or payload of the wrong length."""


class ExchangeError(RtmError):
    """A halo exchange failed (disconnect, timeout, step mismatch)."""

    def __init__(self, message, face=None, step=None, rank=None):
        super().__init__(message)
        self.face = face
        self.step = step
        self.rank = rank


class StepError(RtmError):
    """A time step failed; carries rank, face and step number."""

    def __init__(self, message, rank=None, face=None, step=None):
        super().__init__(message)
        self.rank = rank
        self.face = face
        self.step = step


class LoopError(RtmError):
    """A collapsed-loop body raised; carries the failing tile index."""

    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class UsageError(RtmError):
    """API misuse, e.g. releasing a view that was never acquired."""


class CorrectnessError(RtmError):
    """A variant's field differs from the reference."""

    def __init__(self, message, variant=None):
        super().__init__(message)
        self.variant = variant

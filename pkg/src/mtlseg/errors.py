"""Exception hierarchy shared by every module of the package."""


class MTLSegError(Exception):
    """Base class for all errors raised by mtlseg."""


class ShapeError(MTLSegError, ValueError):
    """A tensor shape does not satisfy an operation's contract.

    ``dim`` names the offending dimension (e.g. ``"C"``, ``"H"``) so callers
    can report it without parsing the message.
    """

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class BinaryMaskError(MTLSegError, ValueError):
    """A mask expected to hold only 0/1 values holds something else."""


class GradientError(MTLSegError, RuntimeError):
    """Backward pass or optimizer step called in an invalid state."""


class DivergenceError(MTLSegError, FloatingPointError):
    """A loss became non-finite during training.

    ``breakdown`` carries the per-task loss record of the offending step when
    one is available.
    """

    def __init__(self, message, breakdown=None, step=None):
        super().__init__(message)
        self.breakdown = breakdown
        self.step = step


class FormatError(MTLSegError, ValueError):
    """A file on disk is malformed, truncated or of an unsupported kind."""


class ConfigError(MTLSegError, ValueError):
    """Invalid configuration value or unknown configuration key."""

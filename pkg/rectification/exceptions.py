class RectificationError(Exception):
    """Base class for every error raised by the rectification app"""


class InvalidInputError(RectificationError, ValueError):
    """Non-finite values, malformed shapes or violated preconditions"""


class DimensionMismatchError(InvalidInputError):
    """Operands disagree on the descriptor dimension"""

    def __init__(self, what, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected dimension {expected}, got {got}")


class InvalidBatchError(InvalidInputError):
    """Batch is empty or larger than the memory queue"""


class InsufficientSamplesError(RectificationError):
    """Too few samples for a covariance estimate"""


class ConvergenceError(RectificationError):
    """Jacobi sweeps hit the iteration cap before the off-diagonal norm vanished"""


class NumericalFailureError(RectificationError):
    """A quantity that must be positive came out non-positive"""


class InvalidConfigError(RectificationError, ValueError):
    """Configuration value outside its allowed range"""


class StaleCacheError(RectificationError):
    """Forward cache does not belong to the current encoder parameters"""


class FormatError(RectificationError):
    """Binary or CSV artifact could not be parsed"""


class AbortStepError(RectificationError):
    """Optimizer refused to apply non-finite gradients"""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} {self.diagnostics}" if self.diagnostics else message)


class TrainingAbortedError(RectificationError):
    """Training stopped on a non-finite loss or a failed step; carries the last good encoder"""

    def __init__(self, message, last_good_encoder=None, epoch=None, step=None):
        self.last_good_encoder = last_good_encoder
        self.epoch = epoch
        self.step = step
        super().__init__(message)

class CocGanError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(CocGanError, ValueError):
    """Shapes, hyperparameters or config values that do not fit together."""


class ContractError(CocGanError, ValueError):
    """A caller broke a documented precondition."""


class NumericDomainError(CocGanError, ArithmeticError):
    """A value left the domain where an operation is defined."""


class InputError(CocGanError, ValueError):
    """Bad user-supplied data (labels, probability rows, sample counts)."""


class LoadError(CocGanError, IOError):
    """A file could not be parsed; the message names the offending field."""


class TrainingDiverged(CocGanError, RuntimeError):
    """A loss became NaN or infinite during training."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}

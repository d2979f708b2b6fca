"""GAN built from context-cluster blocks on a small numpy autodiff core."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CocGanError,
    ConfigurationError,
    ContractError,
    InputError,
    LoadError,
    NumericDomainError,
    TrainingDiverged,
)
from .kernels import BACKEND  # noqa: E402

__all__ = [
    "BACKEND",
    "CocGanError",
    "ConfigurationError",
    "ContractError",
    "InputError",
    "LoadError",
    "NumericDomainError",
    "TrainingDiverged",
    "__version__",
]

"""Adaptive per-segment modality selection for multi-modal sequence recognition.

A compact research codebase: a small float64 autodiff engine, a Gumbel-Softmax
selection policy with an LSTM aggregator, per-modality recognition networks
with learned late fusion, a three-phase trainer, a synthetic data generator
with planted informativeness masks, and an evaluation bench with baselines.
"""

from .autodiff import Tape, Tensor, backward, constant, grad_check
from .errors import (
    ConfigError,
    ContractError,
    DataFormatError,
    DimensionError,
    DomainError,
    InputError,
    MismatchError,
)

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "constant",
    "grad_check",
    "ConfigError",
    "ContractError",
    "DataFormatError",
    "DimensionError",
    "DomainError",
    "InputError",
    "MismatchError",
    "__version__",
]

"""Gaussianization flows: trainable kernel-layer Gaussianization with Householder rotations.

Also ships the RBIG baseline, histogram KL diagnostics and a CLI (``gaussflow``).
"""

from ._backend import NAME as BACKEND
from .config import PRESETS, FlowConfig, TrainConfig, get_preset
from .errors import (CheckpointError, ContractError, DomainError, GaussFlowError, NumericError,
                     ParseError)
from .flow import FlowTape, GaussianizationFlow
from .kernel_layer import KernelLayer
from .rotation import HouseholderStack, PatchRotation
from .training import AdamState, adam_step, evaluate, nll_loss, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "PRESETS", "FlowConfig", "TrainConfig", "get_preset",
    "CheckpointError", "ContractError", "DomainError", "GaussFlowError", "NumericError",
    "ParseError", "FlowTape", "GaussianizationFlow", "KernelLayer", "HouseholderStack",
    "PatchRotation", "AdamState", "adam_step", "evaluate", "nll_loss", "train",
]

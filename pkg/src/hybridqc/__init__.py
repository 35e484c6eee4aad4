"""Hybrid quantum-classical binary image classifiers and their adversarial robustness."""
from .attacks import AttackConfig, deepfool, evaluate_under_attack, fgsm, pgd
from .exceptions import (ConfigurationError, ContractError, DataError, DimensionError, FormatError,
                         HybridQCError, UnsupportedOracleError)
from .model import HybridClassifier, accuracy, load_checkpoint, save_checkpoint
from .qsim import CircuitProgram, GateOp, Param, adjoint_gradients, parameter_shift_gradient, run_circuit
from .vqc import CircuitTemplate, expand_template, registry
from .xpress import expressibility

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "CircuitProgram", "CircuitTemplate", "ConfigurationError", "ContractError",
    "DataError", "DimensionError", "FormatError", "GateOp", "HybridClassifier", "HybridQCError",
    "Param", "UnsupportedOracleError", "accuracy", "adjoint_gradients", "deepfool",
    "evaluate_under_attack", "expand_template", "expressibility", "fgsm", "load_checkpoint",
    "parameter_shift_gradient", "pgd", "registry", "run_circuit", "save_checkpoint",
]

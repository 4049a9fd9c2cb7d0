"""Auxiliary-task learning with searched, prunable cross-task connections.

Auxiliary branches train alongside the primary branch. Connections from
auxiliary to primary features are gated by architecture weights that an L1
penalty drives to zero, so the final primary network can be cut out and
run at single-task cost.
"""

from .archnet import AuxNetwork, BranchSpec, build, prune
from .estimators import AuxNASClassifier, AuxNASRegressor
from .exceptions import (
    AuxNASError,
    ConfigurationError,
    ContractViolation,
    DimensionError,
    NonFiniteError,
    ParseError,
    SchemaError,
    TrainingDiverged,
)
from .trainer import TrainConfig, TrainReport, train

__version__ = "0.1.0"

__all__ = [
    "AuxNASClassifier", "AuxNASError", "AuxNASRegressor", "AuxNetwork", "BranchSpec",
    "ConfigurationError", "ContractViolation", "DimensionError", "NonFiniteError",
    "ParseError", "SchemaError", "TrainConfig", "TrainReport", "TrainingDiverged",
    "build", "prune", "train",
]

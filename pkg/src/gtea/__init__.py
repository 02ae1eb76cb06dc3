"""Temporal interaction graph representation learning.

Edges carry time-ordered event sequences that a sequence model turns into
edge embeddings; a GNN with sparsemax neighbor attention aggregates them for
node classification.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    GteaError,
    NumericError,
    ShapeError,
)
from .gnn import GteaModel, ModelConfig, build_model, forward
from .graph import SyntheticSpec, TemporalGraph, generate_synthetic, load_graph
from .training import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

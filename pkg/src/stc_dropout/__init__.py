"""Node-level curriculum dropout for spatial-temporal graph forecasting."""

from stc_dropout.curriculum import CurriculumState, beta_heuristic, scheduler
from stc_dropout.difficulty import DifficultyReport, difficulty_scores
from stc_dropout.graph import Graph, NeighborIndex, gaussian_kernel_adjacency, k_order_neighbors
from stc_dropout.model import STModel
from stc_dropout.training import RunRecord, TrainConfig, fit

__all__ = [
    "CurriculumState",
    "DifficultyReport",
    "Graph",
    "NeighborIndex",
    "RunRecord",
    "STModel",
    "TrainConfig",
    "beta_heuristic",
    "difficulty_scores",
    "fit",
    "gaussian_kernel_adjacency",
    "k_order_neighbors",
    "scheduler",
]

__version__ = "0.1.0"

"""Table structure recognition by coarse-to-fine separator regression."""

from .geometry import Axis, GeometryConfig, LineStrip, ScoredSeparator, SingleLine, sample_points
from .matching import MatchConfig, MatchResult, brute_force_match, hungarian_match
from .losses import LossBreakdown, LossConfig, total_loss
from .model import ModelConfig, SepFormer, build_model
from .reconstruct import CellGrid, DegenerateTableError, grid_to_html_structure, separators_to_grid
from .metrics import adjacency_prf, adjacency_relations, teds_struct
from .synthdata import TableSpec, dataset, generate

__version__ = "0.1.0"

__all__ = [
    "Axis",
    "CellGrid",
    "DegenerateTableError",
    "GeometryConfig",
    "LineStrip",
    "LossBreakdown",
    "LossConfig",
    "MatchConfig",
    "MatchResult",
    "ModelConfig",
    "ScoredSeparator",
    "SepFormer",
    "SingleLine",
    "TableSpec",
    "adjacency_prf",
    "adjacency_relations",
    "brute_force_match",
    "build_model",
    "dataset",
    "generate",
    "grid_to_html_structure",
    "hungarian_match",
    "sample_points",
    "separators_to_grid",
    "teds_struct",
    "total_loss",
]

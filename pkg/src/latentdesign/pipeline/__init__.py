"""CLI orchestration, evaluation metrics, mesh export and coarse-to-fine training."""

from .config import ConfigError, RunConfig, derive_seed
from .mesh import EmptyDesign, export_mesh, surface_quads
from .metrics import EvalReport, EvalRow, binarize, binary_compliance, cosine_similarity, evaluate_designs, volume_fraction, write_histogram
from .multigrid import MultigridPlan, MultigridResult, MultigridStage, multigrid_schedule

__all__ = [
    "ConfigError",
    "EmptyDesign",
    "EvalReport",
    "EvalRow",
    "MultigridPlan",
    "MultigridResult",
    "MultigridStage",
    "RunConfig",
    "binarize",
    "binary_compliance",
    "cosine_similarity",
    "derive_seed",
    "evaluate_designs",
    "export_mesh",
    "multigrid_schedule",
    "surface_quads",
    "volume_fraction",
    "write_histogram",
]

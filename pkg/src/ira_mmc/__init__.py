"""Moving-morphable-component topology optimization with a two-grid
reanalysis solver and a hybrid MMA/GCMMA optimizer."""
from .driver import Comparison, RunConfig, RunRecord, compare, run
from .ira_solver import IRAConfig, IRASolver, exact_reanalysis, ira_solve
from .mesh_fe import GridSpec, assemble_global, build_element_stiffness, build_prolongation
from .mmc import Component, HeavisideParams
from .problems import build_problem, initial_layout

__all__ = [
    "Comparison", "Component", "GridSpec", "HeavisideParams", "IRAConfig", "IRASolver",
    "RunConfig", "RunRecord", "assemble_global", "build_element_stiffness", "build_problem",
    "build_prolongation", "compare", "exact_reanalysis", "initial_layout", "ira_solve", "run",
]
__version__ = "0.1.0"

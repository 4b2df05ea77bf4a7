"""模拟模块。"""

from src.simulation.grid import GridCellResult, load_grid_spec, paper_grid, results_frame, run_grid
from src.simulation.simulator import (
    SimulationScenario,
    SimulationTruth,
    load_truth,
    sample_mixture_prior,
    save_truth,
    simulate,
)

__all__ = [
    "GridCellResult",
    "SimulationScenario",
    "SimulationTruth",
    "load_grid_spec",
    "load_truth",
    "paper_grid",
    "results_frame",
    "run_grid",
    "sample_mixture_prior",
    "save_truth",
    "simulate",
]

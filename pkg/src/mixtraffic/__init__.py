"""Mixed-autonomy traffic microsimulation with learned intersection control and coverage-aware routing."""
from .engine import ScenarioConfig, Simulation, aggregate, run, sweep
from .metrics import MetricsReport, RunTrace
from .net import RoadNetwork, build_grid, shortest_path

__version__ = "0.1.0"

__all__ = [
    "MetricsReport",
    "RoadNetwork",
    "RunTrace",
    "ScenarioConfig",
    "Simulation",
    "aggregate",
    "build_grid",
    "run",
    "shortest_path",
    "sweep",
]

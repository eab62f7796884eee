"""STL motion planning through a harmonic disk map with hybrid CBF control."""
from .geometry import Circle, Polygon, SampledCurve, Workspace
from .harmonic import HarmonicMap, build_transform, forward, inverse, jacobian
from .hybrid import HybridPlanner, Problem, simulate, simulate_baseline
from .opt import ConstraintSystem, SolverConfig, feasible, solve_min_norm, solve_relaxed
from .scenario import Scenario, load_scenario
from .stl import parse, satisfies

__all__ = [
    "Circle", "Polygon", "SampledCurve", "Workspace",
    "HarmonicMap", "build_transform", "forward", "inverse", "jacobian",
    "HybridPlanner", "Problem", "simulate", "simulate_baseline",
    "ConstraintSystem", "SolverConfig", "feasible", "solve_min_norm", "solve_relaxed",
    "Scenario", "load_scenario", "parse", "satisfies",
]

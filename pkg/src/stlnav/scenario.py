"""Scenario files: JSON in, a validated :class:`Scenario` out.

A scenario bundles the workspace, the region table, the formula, the start
point, input bounds and the numerical knobs.  Units are SI throughout.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .geometry import GeometryError, Workspace, shape_from_dict
from .opt import box_rows
from .predicates import CircleRegion
from .stl import ScenarioError, STLSyntaxError, parse, rank_tasks, tasks_from_formula

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC2 = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_SHAPE = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["polygon", "circle"]},
        "vertices": {"type": "array", "items": _VEC2, "minItems": 3},
        "center": _VEC2,
        "radius": _POS,
    },
}

SCHEMA = {
    "type": "object",
    "required": ["workspace", "regions", "formula", "initial_position"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "workspace": {
            "type": "object",
            "required": ["outer"],
            "additionalProperties": False,
            "properties": {"outer": _SHAPE, "obstacles": {"type": "array", "items": _SHAPE}},
        },
        "regions": {
            "type": "object",
            "minProperties": 1,
            "patternProperties": {
                r"^mu[0-9]+$": {
                    "type": "object",
                    "required": ["center", "radius"],
                    "additionalProperties": False,
                    "properties": {"center": _VEC2, "radius": _POS},
                }
            },
            "additionalProperties": False,
        },
        "formula": {"type": "string"},
        "initial_position": _VEC2,
        "input_bounds": {
            "oneOf": [
                {"type": "null"},
                {"type": "object", "required": ["box"], "additionalProperties": False, "properties": {"box": _POS}},
                {
                    "type": "object",
                    "required": ["A", "b"],
                    "additionalProperties": False,
                    "properties": {"A": {"type": "array", "items": _VEC2}, "b": {"type": "array", "items": _NUM}},
                },
            ]
        },
        "priority_ranks": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "config": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kappa": _POS,
                "dt": _POS,
                "rho": _POS,
                "delta": {"type": "object", "patternProperties": {r"^[0-9]+$": _POS}, "additionalProperties": False},
                "puncture_guard": _POS,
                "guard_gain": _POS,
                "margin_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "funnel_depth": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "u_cap": _POS,
                "max_disk_step": _POS,
                "max_substeps": {"type": "integer", "minimum": 1},
                "region_samples": {"type": "integer", "minimum": 8},
                "map": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "panels_per_edge": {"type": "integer", "minimum": 4},
                        "circle_panels": {"type": "integer", "minimum": 8},
                        "corner_grading": {"type": "number", "minimum": 1},
                        "source_offset": _POS,
                        "tol": _POS,
                    },
                },
            },
        },
    },
}


@dataclass(frozen=True)
class SolverSettings:
    kappa: float = 1.0
    dt: float = 0.05
    rho: float = 100.0
    delta: dict = field(default_factory=dict)  # task id -> delta override
    puncture_guard: float = 0.02
    guard_gain: float = 100.0
    margin_fraction: float = 0.1
    funnel_depth: float = 0.5
    u_cap: float = 1000.0
    max_disk_step: float = 0.005
    max_substeps: int = 20_000
    region_samples: int = 360
    map: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    workspace: Workspace
    regions: dict  # predicate id -> CircleRegion
    formula_text: str
    formula: object
    tasks: tuple  # ranked TaskSpec list
    initial_position: np.ndarray
    static_A: np.ndarray
    static_b: np.ndarray
    has_input_bounds: bool
    settings: SolverSettings
    name: str = "scenario"

    def with_settings(self, **kw) -> "Scenario":
        from dataclasses import replace

        return replace(self, settings=replace(self.settings, **kw))


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def scenario_from_dict(d: dict, name: str = "scenario") -> Scenario:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(d), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(f"{_path(e)}: {e.message}")
    try:
        outer = shape_from_dict(d["workspace"]["outer"])
        obstacles = tuple(shape_from_dict(o) for o in d["workspace"].get("obstacles", []))
        w = Workspace(outer, obstacles)
    except (GeometryError, KeyError, ValueError) as exc:
        raise ScenarioError(f"workspace: {exc}") from exc
    regions = {int(k[2:]): CircleRegion(np.array(v["center"], float), float(v["radius"]))
               for k, v in d["regions"].items()}
    try:
        ast = parse(d["formula"], predicates=sorted(regions))
    except STLSyntaxError as exc:
        raise ScenarioError(f"formula: {exc}") from exc
    tasks = rank_tasks(tasks_from_formula(ast), d.get("priority_ranks"))
    p0 = np.array(d["initial_position"], dtype=float)
    if not w.contains(p0):
        raise ScenarioError("initial_position: must lie strictly inside the workspace and outside every obstacle")
    for k, reg in regions.items():
        pts = reg.center + reg.radius * np.column_stack([np.cos(np.linspace(0, 2 * np.pi, 64)),
                                                         np.sin(np.linspace(0, 2 * np.pi, 64))])
        if not w.contains(reg.center) or not np.all(w.contains_many(pts)):
            raise ScenarioError(f"regions.mu{k}: region leaves the workspace or overlaps an obstacle")
    bounds = d.get("input_bounds")
    if bounds is None:
        A, b = np.zeros((0, 2)), np.zeros(0)
    elif "box" in bounds:
        A, b = box_rows(bounds["box"])
    else:
        A, b = np.array(bounds["A"], float).reshape(-1, 2), np.array(bounds["b"], float)
        if len(A) != len(b):
            raise ScenarioError("input_bounds: A and b must have the same number of rows")
        if np.any(b > 0):
            raise ScenarioError("input_bounds: u = 0 must be admissible (every b_i <= 0)")
    cfg = dict(d.get("config", {}))
    if "delta" in cfg:
        cfg["delta"] = {int(k): float(v) for k, v in cfg["delta"].items()}
        unknown = set(cfg["delta"]) - {t.id for t in tasks}
        if unknown:
            raise ScenarioError(f"config.delta: unknown task ids {sorted(unknown)}")
    return Scenario(w, regions, d["formula"], ast, tuple(tasks), p0, A, b, bounds is not None,
                    SolverSettings(**cfg), d.get("name", name))


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(d, name=path.stem)


def builtin_scenario_path(name: str) -> Path:
    """Path of a packaged scenario such as ``"eight_tasks"``."""
    if not re.fullmatch(r"[a-z0-9_]+", name):
        raise ScenarioError(f"bad scenario name {name!r}")
    return Path(__file__).parent / "scenarios" / f"{name}.json"

"""Run artifacts: trace CSV, summary JSON and two static SVG plots.

The SVGs are written by hand (a few primitives), which keeps the package free
of a plotting dependency and makes the output byte-stable.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import Circle

CSV_SCHEMA_VERSION = 1

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["csv_schema_version", "scenario", "runs"],
    "properties": {
        "csv_schema_version": {"const": CSV_SCHEMA_VERSION},
        "scenario": {"type": "string"},
        "runs": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["mode", "steps", "verdicts", "satisfied_count", "jump_count", "jumps", "timing"],
                "properties": {
                    "mode": {"enum": ["hybrid", "baseline"]},
                    "steps": {"type": "integer", "minimum": 0},
                    "verdicts": {"type": "object",
                                 "additionalProperties": {"enum": ["satisfied", "violated", "undecided"]}},
                    "satisfied_count": {"type": "integer", "minimum": 0},
                    "jump_count": {"type": "integer", "minimum": 0},
                    "jumps": {"type": "array"},
                    "timing": {"type": "object", "required": ["qp_calls", "search_calls"]},
                },
            },
        },
    },
}

_PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
            "#bcbd22", "#17becf"]


def _f(x: float) -> str:
    return f"{x:.3f}"


class _Canvas:
    def __init__(self, lo, hi, width=640, pad=20):
        self.lo, self.hi = np.asarray(lo, float), np.asarray(hi, float)
        span = self.hi - self.lo
        self.scale = (width - 2 * pad) / max(span[0], 1e-12)
        self.pad = pad
        self.w = width
        self.h = int(round(span[1] * self.scale + 2 * pad))
        self.items = []

    def xy(self, p):
        x = self.pad + (p[0] - self.lo[0]) * self.scale
        y = self.h - self.pad - (p[1] - self.lo[1]) * self.scale
        return x, y

    def polygon(self, pts, fill, stroke="#000", opacity=1.0):
        s = " ".join(f"{_f(x)},{_f(y)}" for x, y in map(self.xy, pts))
        self.items.append(f'<polygon points="{s}" fill="{fill}" fill-opacity="{opacity}" stroke="{stroke}"/>')

    def circle(self, c, r, fill, stroke="#000", opacity=1.0):
        x, y = self.xy(c)
        self.items.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r * self.scale)}" fill="{fill}" '
                          f'fill-opacity="{opacity}" stroke="{stroke}"/>')

    def line(self, a, b, color, width=1.5):
        (x1, y1), (x2, y2) = self.xy(a), self.xy(b)
        self.items.append(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                          f'stroke="{color}" stroke-width="{width}"/>')

    def text(self, p, s, size=12):
        x, y = self.xy(p)
        self.items.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" font-family="sans-serif">{s}</text>')

    def svg(self) -> str:
        body = "\n".join(self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def _shape(cv: _Canvas, shape, fill, opacity=1.0):
    if isinstance(shape, Circle):
        cv.circle(shape.center, shape.radius, fill, opacity=opacity)
    else:
        cv.polygon(shape.vertices, fill, opacity=opacity)


def _gradient(k: int, n: int) -> str:
    # blue at the start, red at the end
    a = k / max(n - 1, 1)
    r, g, b = int(40 + 200 * a), 60, int(220 - 180 * a)
    return f"#{r:02x}{g:02x}{b:02x}"


def workspace_svg(scenario, logs: dict, max_segments: int = 1500) -> str:
    """Workspace, regions and time-coloured trajectories (one per run)."""
    w = scenario.workspace
    lo, hi = w.bounding_box()
    cv = _Canvas(lo, hi)
    _shape(cv, w.outer, "#f7f7f7")
    for o in w.obstacles:
        _shape(cv, o, "#555555")
    for k, (pid, reg) in enumerate(sorted(scenario.regions.items())):
        cv.circle(reg.center, reg.radius, _PALETTE[k % len(_PALETTE)], opacity=0.3)
        cv.text(reg.center, f"mu{pid}")
    for m, (mode, log) in enumerate(logs.items()):
        P = log.positions()
        stride = max(1, len(P) // max_segments)
        pts = P[::stride]
        if len(P) and not np.array_equal(pts[-1], P[-1]):
            pts = np.vstack([pts, P[-1]])
        for k in range(len(pts) - 1):
            cv.line(pts[k], pts[k + 1], _gradient(k, len(pts) - 1), width=2.0 if m == 0 else 1.0)
        if len(P):
            cv.circle(P[0], 0.08, "#000000")
            cv.text(P[-1], mode, size=10)
    return cv.svg()


def predicates_svg(scenario, log, width: int = 720, row_h: int = 90) -> str:
    """Per-task h(p(t)) against time with the task window shaded."""
    tasks = list(log.task_ids)
    T = np.array(log.t)
    H = np.array(log.h, dtype=float).reshape(len(T), len(tasks))
    by_id = {t.id: t for t in scenario.tasks}
    pad_l, pad_r = 60, 10
    t_max = max(float(T[-1]) if len(T) else 1.0, 1e-9)
    items = []
    for j, tid in enumerate(tasks):
        task = by_id[tid]
        y0 = j * row_h + 10
        h = H[:, j]
        lo, hi = float(min(h.min(), -0.1)), float(max(h.max(), 0.1))

        def px(t):
            return pad_l + (width - pad_l - pad_r) * t / t_max

        def py(v):
            return y0 + (row_h - 20) * (hi - v) / (hi - lo)

        x0, x1 = px(task.t0), px(min(task.t1, t_max))
        items.append(f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(max(x1 - x0, 0.5))}" height="{row_h - 20}" '
                     f'fill="#ffd27f" fill-opacity="0.5"/>')
        items.append(f'<line x1="{pad_l}" y1="{_f(py(0))}" x2="{width - pad_r}" y2="{_f(py(0))}" '
                     f'stroke="#999" stroke-dasharray="4,3"/>')
        stride = max(1, len(T) // 1200)
        idx = np.r_[np.arange(0, len(T), stride), len(T) - 1] if len(T) else np.arange(0)
        pts = " ".join(f"{_f(px(T[i]))},{_f(py(h[i]))}" for i in idx)
        items.append(f'<polyline points="{pts}" fill="none" stroke="{_PALETTE[j % len(_PALETTE)]}" stroke-width="1.2"/>')
        verdict = log.verdicts.get(tid, "undecided")
        items.append(f'<text x="4" y="{_f(y0 + 14)}" font-size="11" font-family="sans-serif">'
                     f'{task.operator} #{tid}</text>')
        items.append(f'<text x="4" y="{_f(y0 + 28)}" font-size="9" font-family="sans-serif">{verdict}</text>')
    height = len(tasks) * row_h + 20
    body = "\n".join(items)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n')


def write_run(out_dir, scenario, logs: dict) -> dict:
    """Write trace CSV(s), summary.json and both SVGs; return the summary dict.

    With one run the trace goes to ``trace.csv``; with several each run gets
    ``trace_<mode>.csv`` and ``trace.csv`` holds the first (hybrid) run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    first = next(iter(logs.values()))
    first.to_csv(out / "trace.csv")
    if len(logs) > 1:
        for mode, log in logs.items():
            log.to_csv(out / f"trace_{mode}.csv")
    summary = {
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "scenario": scenario.name,
        "csv_columns": first.columns(),
        "runs": {mode: log.summary() for mode, log in logs.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    (out / "workspace.svg").write_text(workspace_svg(scenario, logs))
    (out / "predicates.svg").write_text(predicates_svg(scenario, first))
    return summary


def map_diagnostics(T, grid: int = 50) -> dict:
    """Boundary radius error, det J on a grid, and round-trip errors."""
    w = T.workspace_
    lo, hi = w.bounding_box()
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], grid + 2)[1:-1], np.linspace(lo[1], hi[1], grid + 2)[1:-1])
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[w.contains_many(pts)]
    det = np.linalg.det(T.jacobian(pts))
    # round trip on points whose image is clear of the puncture guard disks
    Q = T.transform(pts)
    clear = np.ones(len(pts), bool)
    for c in T.punctures_:
        clear &= np.linalg.norm(Q - c, axis=1) > T.puncture_guard
    sample = pts[clear][:: max(1, int(clear.sum()) // 100)][:100]
    back = T.inverse_transform(T.transform(sample))  # Newton seeded from the grid, not the answer
    rt = np.linalg.norm(back - sample, axis=1)
    return {
        "boundary_radius_error": T.radius_error_,
        "boundary_fit_residual": T.fit_residual_,
        "obstacle_collapse_residual": T.obstacle_residual_,
        "punctures": T.punctures_.tolist(),
        "det_J_grid_points": int(len(pts)),
        "det_J_min": float(det.min()),
        "det_J_positive": bool(np.all(det > 0)),
        "round_trip_points": int(len(sample)),
        "round_trip_max_error": float(rt.max()) if len(rt) else 0.0,
    }

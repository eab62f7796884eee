"""Circular predicate regions and their signed-distance images on the disk."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Circle, SampledCurve, distance_to_polyline, points_in_polygon, sample_circle
from .stl import ScenarioError


@dataclass(frozen=True)
class CircleRegion:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.shape != (2,):
            raise ScenarioError("region center must be a 2-vector")
        if not self.radius > 0:
            raise ScenarioError(f"region radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    def __call__(self, p) -> float:
        return eval_predicate(self, p)


def eval_predicate(region: CircleRegion, p) -> float:
    """``r - ||p - c||``: nonnegative exactly on the closed disk."""
    p = np.asarray(p, dtype=float)
    return region.radius - float(np.hypot(p[0] - region.center[0], p[1] - region.center[1]))


@dataclass(frozen=True)
class TransformedPredicate:
    """Signed distance to the sampled disk image of a region boundary.

    The image curve is counter-clockwise (the map preserves orientation), so
    the sign of ``q - foot`` against the inward normal of the nearest feature
    decides inside/outside.  At a vertex the normal is the sum of the two
    adjacent edge normals, which gives the correct sign for closed polygons.
    """

    task_id: int
    boundary: SampledCurve
    interior_probe: np.ndarray
    negated: bool = False

    def __post_init__(self):
        pts = self.boundary.points
        ab = np.roll(pts, -1, axis=0) - pts
        len2 = ab[:, 0] ** 2 + ab[:, 1] ** 2
        edge_n = np.column_stack([-ab[:, 1], ab[:, 0]]) / np.sqrt(len2)[:, None]
        vert_n = edge_n + np.roll(edge_n, 1, axis=0)
        object.__setattr__(self, "_ax", pts[:, 0].copy())
        object.__setattr__(self, "_ay", pts[:, 1].copy())
        object.__setattr__(self, "_abx", ab[:, 0].copy())
        object.__setattr__(self, "_aby", ab[:, 1].copy())
        object.__setattr__(self, "_len2", len2)
        object.__setattr__(self, "_edge_n", edge_n)
        object.__setattr__(self, "_vert_n", vert_n)

    def _sign_normal(self, k: int, s: float) -> np.ndarray:
        if s <= 0.0:
            return self._vert_n[k]
        if s >= 1.0:
            return self._vert_n[(k + 1) % len(self._len2)]
        return self._edge_n[k]

    def value_and_gradient(self, q: np.ndarray):
        """Signed distance and its gradient at one disk point (hot path)."""
        rx = q[0] - self._ax
        ry = q[1] - self._ay
        s = np.clip((rx * self._abx + ry * self._aby) / self._len2, 0.0, 1.0)
        dx = rx - s * self._abx
        dy = ry - s * self._aby
        d2 = dx * dx + dy * dy
        k = int(np.argmin(d2))
        d = math.sqrt(d2[k])
        nrm = self._sign_normal(k, s[k])
        if d > 0:
            diff = np.array([dx[k], dy[k]]) / d
            inside = diff[0] * nrm[0] + diff[1] * nrm[1] > 0
            val, grad = (d, diff) if inside else (-d, -diff)
        else:
            # on the curve: inward normal of the image curve
            val, grad = 0.0, self._edge_n[k].copy()
        if self.negated:
            return -val, -grad
        return val, grad

    def values(self, Q, chunk: int = 2048) -> np.ndarray:
        """Signed distances for a batch of disk points (N, 2)."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        out = np.empty(len(Q))
        n = len(self._len2)
        for lo in range(0, len(Q), chunk):
            P = Q[lo:lo + chunk]
            rx = P[:, :1] - self._ax
            ry = P[:, 1:] - self._ay
            s = np.clip((rx * self._abx + ry * self._aby) / self._len2, 0.0, 1.0)
            dx = rx - s * self._abx
            dy = ry - s * self._aby
            d2 = dx * dx + dy * dy
            k = np.argmin(d2, axis=1)
            rows = np.arange(len(P))
            sk = s[rows, k]
            nrm = np.where((sk <= 0.0)[:, None], self._vert_n[k],
                           np.where((sk >= 1.0)[:, None], self._vert_n[(k + 1) % n], self._edge_n[k]))
            side = dx[rows, k] * nrm[:, 0] + dy[rows, k] * nrm[:, 1]
            d = np.sqrt(d2[rows, k])
            out[lo:lo + chunk] = np.where(side > 0, d, -d)
        return -out if self.negated else out


def transform_region(T, region: CircleRegion, n: int = 360, task_id: int = 0, negated: bool = False):
    """Push the sampled region boundary and center through the harmonic map."""
    w = T.workspace_
    curve = sample_circle(region.center, region.radius, n)
    if not np.all(w.contains_many(curve.points)) or not w.contains(region.center):
        raise ScenarioError(f"region of task {task_id} leaves the workspace or touches an obstacle")
    for k, o in enumerate(w.obstacles):
        pts = o.boundary_points() if not isinstance(o, Circle) else o.boundary_points(64)
        if np.any(np.linalg.norm(pts - region.center, axis=1) <= region.radius):
            raise ScenarioError(f"region of task {task_id} overlaps obstacle {k}")
    img = T.transform(curve.points)
    probe = T.transform(region.center[None, :])[0]
    return TransformedPredicate(task_id, SampledCurve(img, closed=True), probe, negated)


def refine_region(T, region: CircleRegion, task_id: int = 0, negated: bool = False,
                  n: int = 360, n_max: int = 2880, tol: float = 1e-4, probes=None):
    """Double the boundary sampling until h_T moves less than ``tol`` at the probes."""
    tp = transform_region(T, region, n, task_id, negated)
    if probes is None:
        ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        ring = region.center + 1.5 * region.radius * np.column_stack([np.cos(ang), np.sin(ang)])
        probes = T.transform(np.vstack([region.center, ring[T.workspace_.contains_many(ring)]]))
    while n < n_max:
        finer = transform_region(T, region, 2 * n, task_id, negated)
        delta = max(abs(eval_hT(finer, q) - eval_hT(tp, q)) for q in probes)
        tp, n = finer, 2 * n
        if delta < tol:
            break
    return tp


def eval_hT(tp: TransformedPredicate, q) -> float:
    return tp.value_and_gradient(np.asarray(q, dtype=float))[0]


def grad_hT(tp: TransformedPredicate, q) -> np.ndarray:
    return tp.value_and_gradient(np.asarray(q, dtype=float))[1]


def nearest_boundary_point(tp: TransformedPredicate, q) -> np.ndarray:
    _, foot, _ = distance_to_polyline(tp.boundary.points, np.asarray(q, dtype=float)[None, :])
    return foot[0]


def inside_transformed(tp: TransformedPredicate, q) -> bool:
    return bool(points_in_polygon(tp.boundary.points, np.asarray(q, dtype=float)[None, :])[0])

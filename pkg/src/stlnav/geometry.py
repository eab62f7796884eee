"""Planar primitives: polygons, circles, point membership and signed distances.

All geometry is in meters.  Boundary points never belong to the open interior,
so every membership test here uses strict inequalities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Degenerate or inconsistent planar geometry."""


def _as_point(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (2,):
        raise GeometryError(f"expected a 2-vector, got shape {p.shape}")
    return p


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def is_simple(vertices: np.ndarray) -> bool:
    n = len(vertices)
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a, b, vertices[j], vertices[(j + 1) % n]):
                return False
    return True


def points_in_polygon(vertices: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Even-odd rule membership for an (N, 2) batch of points.

    Points exactly on an edge may land on either side; callers that need the
    open interior combine this with a distance check.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0:1], pts[:, 1:2]
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    straddle = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = ax + (y - ay) * (bx - ax) / (by - ay)
    hits = straddle & (x < x_cross)
    return (np.count_nonzero(hits, axis=1) % 2) == 1


def winding_number(vertices: np.ndarray, p) -> int:
    """Winding number of a closed polygon around ``p`` (sum of signed crossings)."""
    p = _as_point(p)
    wn = 0
    n = len(vertices)
    for i in range(n):
        a, b = vertices[i], vertices[(i + 1) % n]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])
        if a[1] <= p[1] < b[1] and cross > 0:
            wn += 1
        elif b[1] <= p[1] < a[1] and cross < 0:
            wn -= 1
    return wn


def distance_to_polyline(points: np.ndarray, q: np.ndarray, closed: bool = True):
    """Distance from each query in ``q`` (N, 2) to the polyline.

    Returns ``(dist, nearest, segment_index)``.  Ties go to the lowest segment
    index because ``argmin`` returns the first minimum.
    """
    q = np.atleast_2d(q)
    a = points if closed else points[:-1]
    b = np.roll(points, -1, axis=0) if closed else points[1:]
    ab = b - a
    len2 = np.einsum("ij,ij->i", ab, ab)
    rel = q[:, None, :] - a[None, :, :]
    s = np.clip(np.einsum("nij,ij->ni", rel, ab) / len2, 0.0, 1.0)
    foot = a[None, :, :] + s[:, :, None] * ab[None, :, :]
    d2 = np.sum((q[:, None, :] - foot) ** 2, axis=2)
    k = np.argmin(d2, axis=1)
    rows = np.arange(q.shape[0])
    return np.sqrt(d2[rows, k]), foot[rows, k], k


@dataclass(frozen=True)
class Polygon:
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("a polygon needs at least 3 vertices")
        if np.any(np.linalg.norm(v - np.roll(v, -1, axis=0), axis=1) == 0):
            raise GeometryError("polygon has repeated consecutive vertices")
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def ccw(self) -> "Polygon":
        return self if self.area > 0 else Polygon(self.vertices[::-1].copy())

    def cw(self) -> "Polygon":
        return self if self.area < 0 else Polygon(self.vertices[::-1].copy())

    def inside(self, pts) -> np.ndarray:
        """Strict interior membership for a batch of points."""
        pts = np.atleast_2d(pts)
        d, _, _ = distance_to_polyline(self.vertices, pts)
        return points_in_polygon(self.vertices, pts) & (d > 0)

    def boundary_points(self) -> np.ndarray:
        return self.vertices

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cr = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = 0.5 * cr.sum()
        return np.array([((v[:, 0] + w[:, 0]) * cr).sum(), ((v[:, 1] + w[:, 1]) * cr).sum()]) / (6 * a)

    def to_dict(self) -> dict:
        return {"type": "polygon", "vertices": self.vertices.tolist()}


@dataclass(frozen=True)
class Circle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_point(self.center))
        if not self.radius > 0:
            raise GeometryError(f"circle radius must be positive, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    def inside(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.linalg.norm(pts - self.center, axis=1) < self.radius

    def boundary_points(self, n: int = 64) -> np.ndarray:
        return sample_circle(self.center, self.radius, n).points

    @property
    def centroid(self) -> np.ndarray:
        return self.center

    def to_dict(self) -> dict:
        return {"type": "circle", "center": self.center.tolist(), "radius": self.radius}


def shape_from_dict(d: dict):
    kind = d.get("type", "polygon")
    if kind == "polygon":
        return Polygon(np.asarray(d["vertices"], dtype=float))
    if kind == "circle":
        return Circle(np.asarray(d["center"], dtype=float), float(d["radius"]))
    raise GeometryError(f"unknown shape type {kind!r}")


@dataclass(frozen=True)
class SampledCurve:
    points: np.ndarray
    closed: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise GeometryError("curve points must be an (N, 2) array")
        if self.closed and len(pts) < 3:
            raise GeometryError("a closed curve needs at least 3 points")
        nxt = np.roll(pts, -1, axis=0) if self.closed else pts[1:]
        cur = pts if self.closed else pts[:-1]
        if np.any(np.all(nxt == cur, axis=1)):
            raise GeometryError("consecutive curve points must be distinct")
        object.__setattr__(self, "points", pts)


def sample_circle(center, radius: float, n: int) -> SampledCurve:
    """``n`` counter-clockwise points on a circle, the first at angle 0."""
    if not radius > 0:
        raise GeometryError(f"radius must be positive, got {radius}")
    if int(n) != n or n < 3:
        raise GeometryError(f"need an integer n >= 3, got {n}")
    c = _as_point(center)
    ang = 2.0 * np.pi * np.arange(int(n)) / int(n)
    pts = c + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    return SampledCurve(pts, closed=True)


def signed_distance(curve: SampledCurve, q):
    """Signed distance from ``q`` to a closed curve: positive inside (even-odd).

    Returns ``(value, nearest_point)``.
    """
    q = _as_point(q)
    d, foot, _ = distance_to_polyline(curve.points, q[None, :])
    inside = points_in_polygon(curve.points, q[None, :])[0]
    value = float(d[0]) if inside else -float(d[0])
    return value, foot[0]


@dataclass(frozen=True)
class Workspace:
    """Outer polygon (or disk) minus pairwise-disjoint inner obstacles."""

    outer: Polygon | Circle
    obstacles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        outer = self.outer.ccw() if isinstance(self.outer, Polygon) else self.outer
        if isinstance(outer, Polygon) and not is_simple(outer.vertices):
            raise GeometryError("outer boundary is self-intersecting")
        obs = tuple(o.cw() if isinstance(o, Polygon) else o for o in self.obstacles)
        object.__setattr__(self, "outer", outer)
        object.__setattr__(self, "obstacles", obs)
        for i, o in enumerate(obs):
            if isinstance(o, Polygon) and not is_simple(o.vertices):
                raise GeometryError(f"obstacle {i} is self-intersecting")
            pts = o.boundary_points()
            if not np.all(outer.inside(pts)):
                raise GeometryError(f"obstacle {i} is not strictly inside the outer boundary")
        for i, a in enumerate(obs):
            for j in range(i + 1, len(obs)):
                b = obs[j]
                if np.any(_closed_inside(a, b.boundary_points())) or np.any(
                    _closed_inside(b, a.boundary_points())
                ) or _boundaries_cross(a, b):
                    raise GeometryError(f"obstacles {i} and {j} overlap")

    def contains(self, p) -> bool:
        return bool(self.contains_many(np.asarray(p, dtype=float)[None, :])[0])

    def contains_many(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = self.outer.inside(pts)
        for o in self.obstacles:
            ok &= ~_closed_inside(o, pts)
        return ok

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.outer.boundary_points() if isinstance(self.outer, Polygon) else self.outer.boundary_points(256)
        return pts.min(axis=0), pts.max(axis=0)

    def distance_to_boundary(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        curves = [self.outer] + list(self.obstacles)
        out = np.full(len(pts), np.inf)
        for c in curves:
            if isinstance(c, Circle):
                d = np.abs(np.linalg.norm(pts - c.center, axis=1) - c.radius)
            else:
                d, _, _ = distance_to_polyline(c.vertices, pts)
            out = np.minimum(out, d)
        return out

    def to_dict(self) -> dict:
        return {"outer": self.outer.to_dict(), "obstacles": [o.to_dict() for o in self.obstacles]}

    @classmethod
    def from_dict(cls, d: dict) -> "Workspace":
        return cls(shape_from_dict(d["outer"]), tuple(shape_from_dict(o) for o in d.get("obstacles", [])))


def _closed_inside(shape, pts) -> np.ndarray:
    """Membership in the closed shape (boundary counts as inside)."""
    pts = np.atleast_2d(pts)
    if isinstance(shape, Circle):
        return np.linalg.norm(pts - shape.center, axis=1) <= shape.radius
    d, _, _ = distance_to_polyline(shape.vertices, pts)
    return points_in_polygon(shape.vertices, pts) | (d == 0)


def _boundaries_cross(a, b) -> bool:
    pa = a.boundary_points() if isinstance(a, Polygon) else a.boundary_points(128)
    pb = b.boundary_points() if isinstance(b, Polygon) else b.boundary_points(128)
    for i in range(len(pa)):
        for j in range(len(pb)):
            if _segments_cross(pa[i], pa[(i + 1) % len(pa)], pb[j], pb[(j + 1) % len(pb)]):
                return True
    return False


def contains(w: Workspace, p) -> bool:
    return w.contains(p)

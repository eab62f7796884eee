"""Harmonic map from a multiply connected workspace onto the punctured unit disk.

Each output coordinate is a harmonic function written as a constant plus a sum
of logarithmic point sources placed just outside the workspace (a
method-of-fundamental-solutions expansion).  The weights are fitted by
regularised least squares so that

* the outer boundary lands on the unit circle, following an arc-length
  proportional angle assignment, and
* every obstacle boundary collapses onto a single puncture point.

The puncture points are unknowns of the fit.  They are pinned down by asking
that the flux of each coordinate through every obstacle boundary vanishes,
which with log sources is simply "the weights of the sources inside obstacle
k sum to zero".  Zero flux is what makes the collapse locally one-to-one
(a disk obstacle of radius rho turns into the radial map r -> r - rho**2/r).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.linalg import null_space
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted

from .geometry import Circle, GeometryError, Polygon, Workspace, distance_to_polyline


class MapFitError(RuntimeError):
    """The boundary fit did not reach the requested tolerance."""


class DomainError(ValueError):
    """A point handed to the map lies outside the workspace."""


class InversionError(RuntimeError):
    """Newton inversion failed or landed outside the workspace."""


class SingularJacobianError(RuntimeError):
    pass


def _graded_fractions(n: int, power: float) -> np.ndarray:
    """Panel break points on [0, 1], clustered toward both ends as t**power.

    Reflex corners carry singular harmonic behaviour; strong grading keeps the
    outer-boundary residual under 1e-3 there with a modest panel count.
    """
    t = np.arange(n + 1) / n
    return np.where(t < 0.5, 0.5 * (2 * t) ** power, 1.0 - 0.5 * (2 * (1 - t)) ** power)


def _discretize(shape, is_outer: bool, panels_per_edge: int, circle_panels: int, n_check: int, grading: float):
    """Panel midpoints, lengths, normals pointing out of the workspace, and
    collocation / check points for one boundary component."""
    mids, lens, normals, colloc, check = [], [], [], [], []
    if isinstance(shape, Polygon):
        v = shape.vertices
        f = _graded_fractions(panels_per_edge, grading)
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            pa = a + np.outer(f[:-1], b - a)
            pb = a + np.outer(f[1:], b - a)
            d = pb - pa
            ln = np.linalg.norm(d, axis=1)
            # right-hand normal: outward for a ccw outer ring and for cw obstacles
            nrm = np.column_stack([d[:, 1], -d[:, 0]]) / ln[:, None]
            mids.append(0.5 * (pa + pb))
            lens.append(ln)
            normals.append(nrm)
            colloc.append(pa)
            colloc.append(0.5 * (pa + pb))
            g = np.arange(n_check) / n_check
            check.append((pa[:, None, :] + g[None, :, None] * d[:, None, :]).reshape(-1, 2))
    else:
        c, r = shape.center, shape.radius
        sign = 1.0 if is_outer else -1.0
        k = np.arange(circle_panels)
        phi = 2 * np.pi * (k + 0.5) / circle_panels
        u = np.column_stack([np.cos(phi), np.sin(phi)])
        mids.append(c + r * u)
        lens.append(np.full(circle_panels, 2 * np.pi * r / circle_panels))
        normals.append(sign * u)
        cphi = 2 * np.pi * np.concatenate([k, k + 0.5]) / circle_panels
        colloc.append(c + r * np.column_stack([np.cos(cphi), np.sin(cphi)]))
        hphi = 2 * np.pi * np.arange(circle_panels * n_check) / (circle_panels * n_check)
        check.append(c + r * np.column_stack([np.cos(hphi), np.sin(hphi)]))
    return (np.vstack(mids), np.concatenate(lens), np.vstack(normals), np.vstack(colloc), np.vstack(check))


def outer_boundary_angle(shape, pts: np.ndarray) -> np.ndarray:
    """Angle assigned to outer-boundary points: proportional to arc length,
    starting at the polar angle of the first vertex about the centroid."""
    pts = np.atleast_2d(pts)
    if isinstance(shape, Circle):
        d = pts - shape.center
        return np.arctan2(d[:, 1], d[:, 0])
    v = shape.vertices
    seg = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    _, foot, k = distance_to_polyline(v, pts)
    s = cum[k] + np.linalg.norm(foot - v[k], axis=1)
    c = shape.centroid
    theta0 = np.arctan2(v[0, 1] - c[1], v[0, 0] - c[0])
    return theta0 + 2 * np.pi * s / cum[-1]


class HarmonicMap(TransformerMixin, BaseEstimator):
    """Fit a harmonic homeomorphism ``W -> D`` from a :class:`Workspace`.

    Parameters
    ----------
    panels_per_edge : int
        Boundary panels on every polygon edge.
    corner_grading : float
        Exponent of the panel clustering toward polygon corners (1 = uniform).
    circle_panels : int
        Panels on every circular boundary.
    source_offset : float
        Distance of each source from its panel, in units of the panel length.
    regularization : float
        Tikhonov weight on the source strengths.
    tol : float
        Allowed deviation of outer-boundary images from their unit-circle targets.
    puncture_guard : float
        Radius of the keep-out disk around each puncture used by the controller.
    """

    def __init__(self, panels_per_edge=60, corner_grading=4.0, circle_panels=96, source_offset=1.0,
                 regularization=1e-12, tol=1e-3, puncture_guard=0.02, n_check=8,
                 newton_max_iter=50, newton_tol=1e-12):
        self.panels_per_edge = panels_per_edge
        self.corner_grading = corner_grading
        self.circle_panels = circle_panels
        self.source_offset = source_offset
        self.regularization = regularization
        self.tol = tol
        self.puncture_guard = puncture_guard
        self.n_check = n_check
        self.newton_max_iter = newton_max_iter
        self.newton_tol = newton_tol

    # -- fitting ---------------------------------------------------------
    def fit(self, X: Workspace, y=None):
        if not isinstance(X, Workspace):
            raise GeometryError("HarmonicMap.fit expects a Workspace")
        w = X
        shapes = [w.outer, *w.obstacles]
        src, owner, rows, row_owner, chk, chk_owner = [], [], [], [], [], []
        for i, s in enumerate(shapes):
            mid, ln, nrm, co, ch = _discretize(
                s, i == 0, self.panels_per_edge, self.circle_panels, self.n_check, self.corner_grading
            )
            src.append(mid + self.source_offset * ln[:, None] * nrm)
            owner.append(np.full(len(mid), i))
            rows.append(co)
            row_owner.append(np.full(len(co), i))
            chk.append(ch)
            chk_owner.append(np.full(len(ch), i))
        Y = np.vstack(src)
        owner = np.concatenate(owner)
        Xc = np.vstack(rows)
        row_owner = np.concatenate(row_owner)
        n_src, n_obs = len(Y), len(shapes) - 1

        bbox_lo, bbox_hi = w.bounding_box()
        scale = float(np.max(bbox_hi - bbox_lo))
        if scale <= 0:
            raise GeometryError("degenerate workspace")

        n_unk = n_src + 1 + n_obs
        A = np.zeros((len(Xc), n_unk))
        A[:, :n_src] = np.log(np.linalg.norm(Xc[:, None, :] - Y[None, :, :], axis=2))
        A[:, n_src] = 1.0
        for k in range(n_obs):
            A[row_owner == k + 1, n_src + 1 + k] = -1.0
        rhs = np.zeros((len(Xc), 2))
        th = outer_boundary_angle(shapes[0], Xc[row_owner == 0])
        rhs[row_owner == 0] = np.column_stack([np.cos(th), np.sin(th)])

        if n_obs:
            E = np.zeros((n_obs, n_unk))
            for k in range(n_obs):
                E[k, :n_src][owner == k + 1] = 1.0
            Z = null_space(E)
        else:
            Z = np.eye(n_unk)
        AZ = A @ Z
        reg = np.sqrt(self.regularization) * np.eye(AZ.shape[1])
        sol, *_ = np.linalg.lstsq(np.vstack([AZ, reg]), np.vstack([rhs, np.zeros((AZ.shape[1], 2))]), rcond=None)
        x = Z @ sol

        self.workspace_ = w
        self.sources_ = Y
        self.source_owner_ = owner
        self.weights_ = x[:n_src]
        self.offset_ = x[n_src]
        self.punctures_ = x[n_src + 1:].reshape(n_obs, 2)
        self._score_fit(shapes, np.vstack(chk), np.concatenate(chk_owner))
        self._build_seed_grid()
        return self

    def _score_fit(self, shapes, chk, chk_owner):
        q = self._eval(chk)
        outer = chk_owner == 0
        th = outer_boundary_angle(shapes[0], chk[outer])
        target = np.column_stack([np.cos(th), np.sin(th)])
        self.fit_residual_ = float(np.max(np.linalg.norm(q[outer] - target, axis=1)))
        self.radius_error_ = float(np.max(np.abs(np.linalg.norm(q[outer], axis=1) - 1.0)))
        obs_err = 0.0
        for k in range(len(self.punctures_)):
            m = chk_owner == k + 1
            obs_err = max(obs_err, float(np.max(np.linalg.norm(q[m] - self.punctures_[k], axis=1))))
        self.obstacle_residual_ = obs_err
        if self.fit_residual_ > self.tol:
            raise MapFitError(f"outer boundary residual {self.fit_residual_:.3e} exceeds tol {self.tol:.1e}")
        if len(self.punctures_) and obs_err > 0.5 * self.puncture_guard:
            raise MapFitError(
                f"obstacle collapse residual {obs_err:.3e} exceeds half the puncture guard {self.puncture_guard}"
            )
        if np.any(np.linalg.norm(self.punctures_, axis=1) >= 1.0):
            raise MapFitError("a puncture point fell outside the unit disk")

    def _build_seed_grid(self, n: int = 60):
        lo, hi = self.workspace_.bounding_box()
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        pts = pts[self.workspace_.contains_many(pts)]
        self.seed_points_ = pts
        self.seed_images_ = self._eval(pts)

    # -- evaluation ------------------------------------------------------
    def _eval(self, P: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(P[:, None, :] - self.sources_[None, :, :], axis=2)
        return np.log(r) @ self.weights_ + self.offset_

    def _jac(self, P: np.ndarray) -> np.ndarray:
        d = P[:, None, :] - self.sources_[None, :, :]
        g = d / np.sum(d * d, axis=2)[..., None]
        # J[n, i, j] = d q_i / d p_j
        return np.einsum("nsj,si->nij", g, self.weights_)

    def _check(self, X, check_domain: bool):
        check_is_fitted(self, "weights_")
        X = check_array(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != 2:
            raise ValueError("expected points with 2 columns")
        if check_domain and not np.all(self.workspace_.contains_many(X)):
            raise DomainError("point outside the open workspace")
        return X

    def transform(self, X, check_domain: bool = True) -> np.ndarray:
        """Map workspace points (N, 2) onto the disk."""
        return self._eval(self._check(X, check_domain))

    def jacobian(self, X, check_domain: bool = True) -> np.ndarray:
        """Analytic Jacobians ``dq_i/dp_j`` with shape (N, 2, 2)."""
        return self._jac(self._check(X, check_domain))

    def forward_and_jacobian(self, p: np.ndarray):
        """Unchecked single-point evaluation for the control loop."""
        d = p[None, :] - self.sources_
        r2 = np.einsum("ij,ij->i", d, d)
        q = 0.5 * np.log(r2) @ self.weights_ + self.offset_
        J = (d / r2[:, None]).T @ self.weights_
        return q, J.T

    def inverse_transform(self, Q, guess=None) -> np.ndarray:
        """Newton inversion of disk points (N, 2) back into the workspace."""
        check_is_fitted(self, "weights_")
        Q = check_array(np.atleast_2d(np.asarray(Q, dtype=float)))
        G = None if guess is None else np.atleast_2d(np.asarray(guess, dtype=float))
        out = np.empty_like(Q)
        for i, q in enumerate(Q):
            g = None if G is None else G[min(i, len(G) - 1)]
            out[i] = self._invert_one(q, g)
        return out

    def _invert_one(self, q: np.ndarray, guess, n_seeds: int = 8) -> np.ndarray:
        # near a puncture the closest image may sit across an obstacle, so fall
        # back to further grid seeds before giving up
        order = np.argsort(np.linalg.norm(self.seed_images_ - q, axis=1))[:n_seeds]
        seeds = [self.seed_points_[k] for k in order]
        if guess is not None:
            seeds.insert(0, np.asarray(guess, dtype=float))
        last = None
        for p0 in seeds:
            try:
                return self._newton(q, p0.copy())
            except InversionError as exc:
                last = exc
        raise last

    def _newton(self, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        w = self.workspace_
        if not w.contains(p):
            raise InversionError("Newton seed outside the workspace")
        fp, J = self.forward_and_jacobian(p)
        res = np.linalg.norm(fp - q)
        for _ in range(self.newton_max_iter):
            if res < self.newton_tol:
                break
            if abs(np.linalg.det(J)) < 1e-14:
                raise InversionError("singular Jacobian during inversion")
            step = np.linalg.solve(J, fp - q)
            lam = 1.0
            while True:
                cand = p - lam * step
                if w.contains(cand):
                    fc, Jc = self.forward_and_jacobian(cand)
                    rc = np.linalg.norm(fc - q)
                    if rc < res:
                        break
                lam *= 0.5
                if lam < 1e-8:
                    raise InversionError("Newton stalled")
            p, fp, J, res = cand, fc, Jc, rc
        if res >= 1e-8:
            raise InversionError(f"inversion did not converge (residual {res:.2e})")
        return p

    # -- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        check_is_fitted(self, "weights_")
        return {
            "params": self.get_params(),
            "workspace": self.workspace_.to_dict(),
            "sources": self.sources_.tolist(),
            "source_owner": self.source_owner_.tolist(),
            "weights": self.weights_.tolist(),
            "offset": self.offset_.tolist(),
            "punctures": self.punctures_.tolist(),
            "fit_residual": self.fit_residual_,
            "radius_error": self.radius_error_,
            "obstacle_residual": self.obstacle_residual_,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HarmonicMap":
        m = cls(**d["params"])
        m.workspace_ = Workspace.from_dict(d["workspace"])
        m.sources_ = np.asarray(d["sources"], dtype=float)
        m.source_owner_ = np.asarray(d["source_owner"], dtype=int)
        m.weights_ = np.asarray(d["weights"], dtype=float).reshape(-1, 2)
        m.offset_ = np.asarray(d["offset"], dtype=float)
        m.punctures_ = np.asarray(d["punctures"], dtype=float).reshape(-1, 2)
        m.fit_residual_ = float(d["fit_residual"])
        m.radius_error_ = float(d["radius_error"])
        m.obstacle_residual_ = float(d["obstacle_residual"])
        m._build_seed_grid()
        return m

    def save(self, path) -> None:
        # repr-exact floats so a reload is bit-identical
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "HarmonicMap":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# functional surface ------------------------------------------------------

def build_transform(w: Workspace, **cfg) -> HarmonicMap:
    return HarmonicMap(**cfg).fit(w)


def forward(T: HarmonicMap, p) -> np.ndarray:
    return T.transform(np.asarray(p, dtype=float)[None, :])[0]


def jacobian(T: HarmonicMap, p) -> np.ndarray:
    J = T.jacobian(np.asarray(p, dtype=float)[None, :])[0]
    if abs(np.linalg.det(J)) < 1e-10:
        raise SingularJacobianError("Jacobian is near-singular (close to a puncture or the boundary)")
    return J


def inverse(T: HarmonicMap, q, guess=None) -> np.ndarray:
    return T.inverse_transform(np.asarray(q, dtype=float)[None, :], guess)[0]


__all__ = [
    "HarmonicMap", "MapFitError", "DomainError", "InversionError", "SingularJacobianError",
    "NotFittedError", "build_transform", "forward", "jacobian", "inverse", "outer_boundary_angle",
]

"""Small dense solvers for the control loop.

* :func:`solve_min_norm`   min ||u||^2 subject to A u >= b   (dual active set)
* :func:`feasible`          nonemptiness of {u : A u >= b}    (phase-1 simplex, Bland's rule)
* :func:`solve_relaxed`     min ||u||^2 + rho ||s||^2 with slack on task rows
* :func:`dual_unbounded`    the dual LP  max b^T lam, A^T lam = 0, lam >= 0  (via scipy)

Rows are stored as normals ``A`` with shape (m, 2) and offsets ``b`` with
shape (m,), meaning ``A[i] @ u >= b[i]``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .stl import ScenarioError


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    kappa: float = 1.0
    qp_tolerance: float = 1e-9
    lp_tolerance: float = 1e-9

    def __post_init__(self):
        if not self.kappa > 0:
            raise ScenarioError(f"kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class ConstraintSystem:
    """Static input rows plus task rows; ``mask`` bit j enables the rows of task j.

    Disabled rows are kept (as ``0 . u >= 0``) so row indices never shift.
    """

    static_A: np.ndarray
    static_b: np.ndarray
    task_A: np.ndarray
    task_b: np.ndarray
    row_task: np.ndarray
    mask: tuple = ()

    @classmethod
    def build(cls, static_A=None, static_b=None, task_A=None, task_b=None, row_task=None, mask=None):
        sA = np.zeros((0, 2)) if static_A is None else np.asarray(static_A, dtype=float).reshape(-1, 2)
        sb = np.zeros(0) if static_b is None else np.asarray(static_b, dtype=float).reshape(-1)
        tA = np.zeros((0, 2)) if task_A is None else np.asarray(task_A, dtype=float).reshape(-1, 2)
        tb = np.zeros(0) if task_b is None else np.asarray(task_b, dtype=float).reshape(-1)
        rt = np.arange(len(tb)) if row_task is None else np.asarray(row_task, dtype=int)
        if mask is None:
            mask = (1,) * (int(rt.max()) + 1 if len(rt) else 0)
        return cls(sA, sb, tA, tb, rt, tuple(int(c) for c in mask))

    def with_mask(self, mask) -> "ConstraintSystem":
        return replace(self, mask=tuple(int(c) for c in mask))

    def task_rows(self):
        on = np.array([self.mask[j] for j in self.row_task], dtype=bool) if len(self.row_task) else np.zeros(0, bool)
        A = np.where(on[:, None], self.task_A, 0.0)
        b = np.where(on, self.task_b, 0.0)
        return A, b

    def rows(self):
        A, b = self.task_rows()
        return np.vstack([self.static_A, A]), np.concatenate([self.static_b, b])


# -- helpers ------------------------------------------------------------------

def _prune(A: np.ndarray, b: np.ndarray, tol: float):
    """Drop trivially true zero rows; report a trivially false one."""
    norms = np.hypot(A[:, 0], A[:, 1])
    zero = norms <= tol
    if np.any(b[zero] > tol):
        return None
    keep = ~zero
    return A[keep], b[keep], norms[keep]


def _as_rows(cs_or_A, b=None):
    if isinstance(cs_or_A, ConstraintSystem):
        return cs_or_A.rows()
    return np.asarray(cs_or_A, dtype=float).reshape(-1, 2), np.asarray(b, dtype=float).reshape(-1)


# -- dual active-set QP ---------------------------------------------------------

def _dual_active_set(Ginv: np.ndarray, x0: np.ndarray, C: np.ndarray, b: np.ndarray, tol: float):
    """Goldfarb-Idnani dual method for min 1/2 x'Gx + a'x s.t. C x >= b.

    ``x0`` is the unconstrained minimiser and ``Ginv`` the inverse Hessian.
    Returns the minimiser, or None when the constraints are inconsistent.
    """
    x = x0.copy()
    active: list[int] = []
    u: dict[int, float] = {}
    m = len(b)
    for _ in range(50 * (m + 1)):
        slack = C @ x - b
        if active:
            slack[active] = np.inf
        p = int(np.argmin(slack)) if m else 0
        if m == 0 or slack[p] >= -tol:
            return x
        u_p = 0.0
        while True:
            n_p = C[p]
            if active:
                N = C[active].T
                GN = Ginv @ N
                r = np.linalg.solve(N.T @ GN, GN.T @ n_p)
                z = Ginv @ n_p - GN @ r
            else:
                r = np.zeros(0)
                z = Ginv @ n_p
            t1, k_drop = np.inf, -1
            for idx, (j, rj) in enumerate(zip(active, r)):
                if rj > tol and u[j] / rj < t1:
                    t1, k_drop = u[j] / rj, idx
            zn = float(z @ n_p)
            t2 = np.inf if zn <= tol * max(1.0, float(n_p @ n_p)) else -(float(n_p @ x) - b[p]) / zn
            t = min(t1, t2)
            if not np.isfinite(t):
                return None
            if np.isfinite(t2):
                x = x + t * z
            for j, rj in zip(active, r):
                u[j] -= t * rj
            u_p += t
            if t == t2:
                active.append(p)
                u[p] = u_p
                break
            j = active.pop(k_drop)
            del u[j]
    raise SolverError("dual active-set iteration limit reached")


def solve_min_norm(cs_or_A, b=None, tol: float = 1e-9):
    """Minimum-norm point of ``{u : A u >= b}`` or None when that set is empty."""
    A, b = _as_rows(cs_or_A, b)
    pr = _prune(A, b, tol)
    if pr is None:
        return None
    A, b, norms = pr
    C, bb = A / norms[:, None], b / norms
    x = _dual_active_set(np.eye(2), np.zeros(2), C, bb, tol)
    return x


# -- phase-1 simplex --------------------------------------------------------------

def _phase1(A: np.ndarray, b: np.ndarray, tol: float) -> bool:
    """Is {u in R^2 : A u >= b} nonempty?  Tableau phase 1 with Bland's rule."""
    m = len(b)
    if m == 0:
        return True
    # columns: u+ (2), u- (2), surplus (m), artificial (one per row needing it)
    sign = np.where(b > 0, 1.0, -1.0)
    needs_art = b > 0
    n_art = int(np.count_nonzero(needs_art))
    ncol = 4 + m + n_art
    T = np.zeros((m + 1, ncol + 1))
    basis = np.empty(m, dtype=int)
    art_col = 4 + m
    for i in range(m):
        s = sign[i]
        T[i, 0:2] = s * A[i]
        T[i, 2:4] = -s * A[i]
        T[i, 4 + i] = -s
        T[i, -1] = s * b[i]
        if needs_art[i]:
            T[i, art_col] = 1.0
            basis[i] = art_col
            art_col += 1
        else:
            basis[i] = 4 + i
    # objective row: minimise the sum of artificials, expressed in non-basic terms
    for i in range(m):
        if needs_art[i]:
            T[m] -= T[i]
    T[m, 4 + m:ncol] = 0.0
    for _ in range(10_000):
        cost = T[m, :ncol]
        cand = np.flatnonzero(cost < -tol)
        if len(cand) == 0:
            break
        e = int(cand[0])  # Bland: lowest index
        col = T[:m, e]
        pos = col > tol
        if not np.any(pos):
            # unbounded direction in phase 1 cannot happen (objective >= 0)
            raise SolverError("phase-1 objective unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + tol * max(1.0, abs(rmin)))
        r = int(ties[np.argmin(basis[ties])])  # Bland tie-break on basic index
        piv = T[r] / T[r, e]
        T -= np.outer(T[:, e], piv)
        T[r] = piv
        basis[r] = e
    else:
        raise SolverError("phase-1 simplex iteration limit reached")
    return -T[m, -1] <= tol * max(1.0, float(np.max(np.abs(b))))


def feasible(cs_or_A, b=None, tol: float = 1e-9) -> int:
    """1 if the (masked) half-plane system has a solution, else 0."""
    A, b = _as_rows(cs_or_A, b)
    pr = _prune(A, b, tol)
    if pr is None:
        return 0
    A, b, norms = pr
    return int(_phase1(A / norms[:, None], b / norms, tol))


def dual_unbounded(cs_or_A, b=None, tol: float = 1e-9) -> bool:
    """True when ``max b'lam s.t. A'lam = 0, lam >= 0`` is unbounded.

    The feasible set is a cone, so it is unbounded exactly when some ray has
    positive objective; normalising ``sum(lam) = 1`` turns that into one LP.
    """
    from scipy.optimize import linprog

    A, b = _as_rows(cs_or_A, b)
    m = len(b)
    if m == 0:
        return False
    norms = np.maximum(np.linalg.norm(np.column_stack([A, b]), axis=1), 1e-300)
    A, b = A / norms[:, None], b / norms
    A_eq = np.vstack([A.T, np.ones((1, m))])
    b_eq = np.array([0.0, 0.0, 1.0])
    res = linprog(-b, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * m, method="highs")
    if res.status == 2:  # no normalised ray: the cone is {0}
        return False
    if res.status != 0:
        raise SolverError(f"dual LP failed: {res.message}")
    return -res.fun > tol


# -- slack relaxation ------------------------------------------------------------

def solve_relaxed(cs: ConstraintSystem, rho: float, tol: float = 1e-9, use_mask: bool = False):
    """Minimise ``||u||^2 + rho ||s||^2`` with task rows softened by ``s >= 0``.

    Static rows stay hard.  Returns ``(u, slacks)`` with one slack per task row.
    """
    if not rho > 0:
        raise ScenarioError("rho must be positive")
    sA, sb = cs.static_A, cs.static_b
    if feasible(sA, sb, tol) == 0:
        raise ScenarioError("static input constraints are empty")
    tA, tb = cs.task_rows() if use_mask else (cs.task_A, cs.task_b)
    k = len(tb)
    n = 2 + k
    rows, rhs = [], []
    for a, bi in zip(sA, sb):
        nrm = np.linalg.norm(a)
        if nrm > tol:
            rows.append(np.concatenate([a, np.zeros(k)]) / nrm)
            rhs.append(bi / nrm)
    for j in range(k):
        nrm = max(np.linalg.norm(tA[j]), 1.0)
        r = np.zeros(n)
        r[:2] = tA[j]
        r[2 + j] = 1.0
        rows.append(r / nrm)
        rhs.append(tb[j] / nrm)
        e = np.zeros(n)
        e[2 + j] = 1.0
        rows.append(e)
        rhs.append(0.0)
    C = np.array(rows).reshape(-1, n)
    bb = np.array(rhs)
    Ginv = np.diag(np.concatenate([[0.5, 0.5], np.full(k, 0.5 / rho)]))
    x = _dual_active_set(Ginv, np.zeros(n), C, bb, tol)
    if x is None:
        raise SolverError("relaxed QP reported infeasible")
    s = np.maximum(x[2:], 0.0)
    return x[:2], s


def box_rows(bound: float):
    """Rows for ``|u_1|, |u_2| <= bound`` in the ``A u >= b`` convention."""
    A = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return A, np.full(4, -float(bound))

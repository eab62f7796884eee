"""The hybrid closed loop: masked CBF-QP flow plus configuration jumps.

Configurations are tuples of bits in priority order, so ``C[0]`` belongs to
the rank-1 task and is the most significant bit of the binary counter the
configuration search decrements.

Besides the task rows every constraint system carries hard "static" rows:
the input polytope (or a large numerical speed cap when the scenario has no
bounds), a keep-out disk around every puncture and a thin band inside the
unit circle.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .cbf import always_spec, cbf_value_and_partials, eventually_spec
from .harmonic import HarmonicMap
from .opt import ConstraintSystem, box_rows, feasible, solve_min_norm, solve_relaxed
from .predicates import eval_predicate, transform_region
from .scenario import Scenario
from .stl import Trace, satisfies

PENDING, SATISFIED, VIOLATED = 0, 1, 2
FLAG_CODES = "PSV"
_EPS = 1e-9


class SimulationAbort(RuntimeError):
    """The loop cannot continue (robot left W or integration stalled)."""

    def __init__(self, msg: str, log=None):
        super().__init__(msg)
        self.log = log


# -- configurations ----------------------------------------------------------------

def config_to_int(bits) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def int_to_config(v: int, n: int) -> tuple:
    return tuple((v >> (n - 1 - j)) & 1 for j in range(n))


def config_str(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def configuration_search(cs: ConstraintSystem, start, pending, tol: float = 1e-9):
    """Binary-decrement search for the next feasible configuration.

    Candidates are ``start - 1, start - 2, ...``.  A candidate that enforces a
    task which is no longer pending is skipped without a feasibility check.
    Returns ``(config, n_checks)``; the all-zero configuration is the fallback.
    """
    n = len(start)
    v = config_to_int(start)
    checks = 0
    while v > 0:
        v -= 1
        cand = int_to_config(v, n)
        if any(c and not ok for c, ok in zip(cand, pending)):
            continue
        checks += 1
        if feasible(cs.with_mask(cand), tol=tol):
            return cand, checks
    zero = (0,) * n
    if not feasible(cs.with_mask(zero), tol=tol):
        raise SimulationAbort("static constraints are infeasible: the all-zero configuration has no solution")
    return zero, checks


# -- problem set-up -----------------------------------------------------------------

@dataclass(frozen=True)
class BarrierRow:
    bit: int
    spec: object  # CbfSpec
    tp: object  # TransformedPredicate


class Problem:
    """Everything the loop needs, precomputed from a :class:`Scenario`."""

    def __init__(self, scenario: Scenario, transform: HarmonicMap | None = None):
        s = scenario.settings
        self.scenario = scenario
        if transform is None:
            transform = HarmonicMap(puncture_guard=s.puncture_guard, **s.map).fit(scenario.workspace)
        self.transform = transform
        self.tasks = list(scenario.tasks)
        self.n_tasks = len(self.tasks)
        self.kappa = s.kappa
        self.dt = s.dt
        self.guard = s.puncture_guard
        self.guard_gain = s.guard_gain
        if scenario.has_input_bounds:
            self.static_A, self.static_b = scenario.static_A, scenario.static_b
        else:
            self.static_A, self.static_b = box_rows(s.u_cap)
        self.box = None
        if scenario.has_input_bounds and len(self.static_b) == 4:
            A_box, b_box = box_rows(-scenario.static_b[0])
            if np.array_equal(A_box, scenario.static_A) and np.array_equal(b_box, scenario.static_b):
                self.box = -scenario.static_b[0]
        self.p0 = np.asarray(scenario.initial_position, dtype=float)
        q0 = transform.transform(self.p0[None, :])[0]
        self.q0 = q0

        self._tp_cache = {}
        rows, primary = [], []
        for bit, task in enumerate(self.tasks):
            delta = s.delta.get(task.id)
            if task.operator == "F":
                tp, m = self._literal(task.region)
                rows.append(BarrierRow(bit, eventually_spec(task.t0, task.t1, delta, m), tp))
            elif task.operator == "G":
                rows.append(BarrierRow(bit, *self._always(task.region, task.t0, task.t1, delta, q0)))
            else:
                rows.append(BarrierRow(bit, *self._always(task.region, 0.0, task.t1, None, q0)))
                tp, m = self._literal(task.until_second_region)
                rows.append(BarrierRow(bit, eventually_spec(task.t0, task.t1, delta, m), tp))
            primary.append(len(rows) - 1)
        self.rows = rows
        self.primary_row = primary
        self.row_task = np.array([r.bit for r in self.rows], dtype=int)
        self.t_end = max(t.t1 for t in self.tasks)

    def _literal(self, lit):
        if lit not in self._tp_cache:
            s = self.scenario.settings
            region = self.scenario.regions[lit.id]
            tp = transform_region(self.transform, region, s.region_samples, lit.id, lit.negated)
            depth = abs(tp.value_and_gradient(tp.interior_probe)[0])
            self._tp_cache[lit] = (tp, s.margin_fraction * depth, depth)
        tp, m, _ = self._tp_cache[lit]
        return tp, m

    def _always(self, lit, t0, t1, delta, q0):
        tp, m = self._literal(lit)
        depth = self._tp_cache[lit][2]
        z_hT = tp.value_and_gradient(q0)[0]
        a = None
        if not lit.negated and z_hT < m:
            # settle halfway between the margin and the deepest point
            a = (m - z_hT) + self.scenario.settings.funnel_depth * (depth - m)
        return always_spec(t0, t1, z_hT, delta, m, a=a), tp

    # -- literal truth in the workspace --------------------------------------
    def literal_value(self, lit, p) -> float:
        v = eval_predicate(self.scenario.regions[lit.id], p)
        return -v if lit.negated else v

    def literal_holds(self, lit, p) -> bool:
        return (eval_predicate(self.scenario.regions[lit.id], p) >= 0.0) != lit.negated

    def report_literal(self, task):
        return task.until_second_region if task.operator == "U" else task.region


@dataclass
class Assembled:
    cs: ConstraintSystem
    q: np.ndarray
    hT: np.ndarray  # per row
    b: np.ndarray  # per row


def guard_rows(problem: Problem, q: np.ndarray, Jm: np.ndarray):
    """Keep-out rows for the punctures and the unit circle (always enforced).

    Each row is a barrier ``g = distance - eps`` with its own gain.  Once a
    discrete step has crossed into the keep-out band the row only forbids
    going deeper (offset clipped at 0), so ``u = 0`` always satisfies it.
    """
    eps, kappa = problem.guard, problem.guard_gain
    A, b = [], []
    for c in problem.transform.punctures_:
        d = q - c
        r = math.hypot(d[0], d[1])
        A.append(Jm.T @ (d / r))
        b.append(-kappa * max(r - eps, 0.0))
    r = math.hypot(q[0], q[1])
    if r > 0:
        A.append(-(Jm.T @ (q / r)))
        b.append(-kappa * max((1.0 - eps) - r, 0.0))
    return np.array(A).reshape(-1, 2), np.array(b)


def assemble(problem: Problem, p, t: float, mask=None, q=None, Jm=None, live=None) -> Assembled:
    """Constraint rows at workspace point ``p`` and time ``t``.

    Task row normals are ``J(p)^T grad_q b`` and offsets ``-kappa b - db/dt``,
    except on a falling switch edge with ``b >= 0``, where the switch
    derivative is left out (the row then guards the inner barrier).
    ``mask`` (bits per task, default all ones) is applied as given; callers
    fold the task flags into it.  Rows of tasks with ``live[j]`` false, and
    rows whose switching function is flat zero at ``t``, are left as
    ``0 . u >= 0`` without evaluating h_T (reported as NaN).
    """
    if q is None:
        q, Jm = problem.transform.forward_and_jacobian(np.asarray(p, dtype=float))
    gA, gb = guard_rows(problem, q, Jm)
    n = len(problem.rows)
    A = np.zeros((n, 2))
    B = np.zeros(n)
    hT = np.full(n, np.nan)
    bv = np.zeros(n)
    for i, row in enumerate(problem.rows):
        if live is not None and not live[row.bit]:
            continue
        if row.spec.switch(t) == 0.0 and row.spec.dswitch(t) == 0.0:
            continue
        h, g = row.tp.value_and_gradient(q)
        b, gq, bt = cbf_value_and_partials(row.spec, h, g, t)
        ds = row.spec.dswitch(t)
        if ds < 0.0 and b >= 0.0:
            # falling edge while the inner barrier holds: enforce the condition
            # on the inner value, which keeps b >= 0 without asking h to
            # outgrow the vanishing switch
            bt -= ds * (h - row.spec.margin + row.spec.gamma(t))
        A[i] = Jm.T @ gq
        B[i] = -problem.kappa * b - bt
        hT[i], bv[i] = h, b
    if mask is None:
        mask = (1,) * problem.n_tasks
    cs = ConstraintSystem(np.vstack([problem.static_A, gA]), np.concatenate([problem.static_b, gb]),
                          A, B, problem.row_task, tuple(int(c) for c in mask))
    return Assembled(cs, q, hT, bv)


# -- online monitor --------------------------------------------------------------

class OnlineFlags:
    """Per-task verdict tracking at the logged sample times.

    F: satisfied at the first in-window sample inside the region, violated
    once t passes t1.  G: violated at the first in-window sample outside,
    satisfied once t passes t1.  U: violated as soon as the left literal
    fails, satisfied at the first in-window sample where both hold.
    """

    def __init__(self, problem: Problem):
        self.problem = problem
        self.flags = [PENDING] * problem.n_tasks
        self.resolved_at = [None] * problem.n_tasks

    def pending(self):
        return tuple(f == PENDING for f in self.flags)

    def all_resolved(self) -> bool:
        return all(f != PENDING for f in self.flags)

    def update(self, t: float, p) -> list[int]:
        changed = []
        pr = self.problem
        for j, task in enumerate(pr.tasks):
            if self.flags[j] != PENDING:
                continue
            in_win = task.t0 - _EPS <= t <= task.t1 + _EPS
            past = t > task.t1 + _EPS
            new = PENDING
            if task.operator == "F":
                if in_win and pr.literal_holds(task.region, p):
                    new = SATISFIED
                elif past:
                    new = VIOLATED
            elif task.operator == "G":
                if in_win and not pr.literal_holds(task.region, p):
                    new = VIOLATED
                elif past:
                    new = SATISFIED
            else:
                left = pr.literal_holds(task.region, p)
                if not left:
                    new = VIOLATED
                elif in_win and pr.literal_holds(task.until_second_region, p):
                    new = SATISFIED
                elif past:
                    new = VIOLATED
            if new != PENDING:
                self.flags[j] = new
                self.resolved_at[j] = t
                changed.append(j)
        return changed


# -- trace log --------------------------------------------------------------------

@dataclass
class TraceLog:
    mode: str
    task_ids: list
    t: list = field(default_factory=list)
    p: list = field(default_factory=list)
    q: list = field(default_factory=list)
    u: list = field(default_factory=list)
    config: list = field(default_factory=list)
    feasible: list = field(default_factory=list)
    jump: list = field(default_factory=list)
    h: list = field(default_factory=list)
    hT: list = field(default_factory=list)
    b: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    slacks: list = field(default_factory=list)
    jumps: list = field(default_factory=list)
    searches: list = field(default_factory=list)
    qp_seconds: list = field(default_factory=list)
    substeps: int = 0
    wall_seconds: float = 0.0
    verdicts: dict = field(default_factory=dict)
    offline_verdicts: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def steps(self) -> int:
        return len(self.t) - 1

    def positions(self) -> np.ndarray:
        return np.array(self.p)

    def controls(self) -> np.ndarray:
        return np.array(self.u)

    def satisfied_count(self) -> int:
        return sum(v == "satisfied" for v in self.verdicts.values())

    def columns(self) -> list[str]:
        cols = ["t", "p_x", "p_y", "q_x", "q_y", "u_x", "u_y", "config_bits", "feasible", "jump"]
        for j in self.task_ids:
            cols += [f"h_{j}", f"hT_{j}", f"b_{j}", f"flag_{j}"]
        return cols

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns())
        for k in range(len(self.t)):
            row = [repr(self.t[k]), *map(repr, map(float, self.p[k])), *map(repr, map(float, self.q[k])),
                   *map(repr, map(float, self.u[k])), self.config[k], self.feasible[k], self.jump[k]]
            for j in range(len(self.task_ids)):
                row += [repr(float(self.h[k][j])), repr(float(self.hT[k][j])), repr(float(self.b[k][j])),
                        self.flags[k][j]]
            wr.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text

    def summary(self) -> dict:
        search_s = [s["seconds"] for s in self.searches]
        return {
            "mode": self.mode,
            "steps": self.steps,
            "final_time": self.t[-1] if self.t else 0.0,
            "verdicts": {str(k): v for k, v in self.verdicts.items()},
            "offline_verdicts": {str(k): v for k, v in self.offline_verdicts.items()},
            "satisfied_count": self.satisfied_count(),
            "jump_count": len(self.jumps),
            "jumps": self.jumps,
            "timing": {
                "wall_seconds": self.wall_seconds,
                "substeps": self.substeps,
                "qp_calls": len(self.qp_seconds),
                "qp_mean_seconds": float(np.mean(self.qp_seconds)) if self.qp_seconds else 0.0,
                "qp_histogram": _histogram(self.qp_seconds),
                "search_calls": [{"t": s["t"], "checks": s["checks"], "seconds": s["seconds"]} for s in self.searches],
                "search_mean_seconds": float(np.mean(search_s)) if search_s else 0.0,
                "search_histogram": _histogram(search_s),
            },
        }


def _histogram(xs, bins: int = 10) -> dict:
    if not xs:
        return {"edges": [], "counts": []}
    counts, edges = np.histogram(np.log10(np.maximum(xs, 1e-9)), bins=bins)
    return {"log10_seconds_edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


# -- the loop ---------------------------------------------------------------------

_VERDICT = {SATISFIED: "satisfied", VIOLATED: "violated", PENDING: "undecided"}


def _predicate_table(problem: Problem) -> dict:
    return {k: (lambda p, r=r: eval_predicate(r, p)) for k, r in problem.scenario.regions.items()}


def offline_verdicts(problem: Problem, log: TraceLog) -> dict:
    """Verdicts of the sampled-trace monitor for every task."""
    trace = Trace(np.array(log.t), np.array(log.p))
    table = _predicate_table(problem)
    out = {}
    for task in problem.tasks:
        try:
            out[task.id] = "satisfied" if satisfies(task.formula(), trace, table) else "violated"
        except Exception:  # window beyond the trace
            out[task.id] = "undecided"
    return out


def _fill_hT(problem: Problem, log: TraceLog) -> None:
    """Evaluate the h_T columns skipped during the run, in one batch per task."""
    H = np.array(log.hT, dtype=float).reshape(len(log.t), problem.n_tasks)
    Q = np.array(log.q)
    for j, i in enumerate(problem.primary_row):
        miss = np.isnan(H[:, j])
        if np.any(miss):
            H[miss, j] = problem.rows[i].tp.values(Q[miss])
    log.hT = [list(map(float, r)) for r in H]


class _Loop:
    def __init__(self, problem: Problem, mode: str, rho: float | None = None):
        self.pr = problem
        self.mode = mode
        self.rho = rho
        self.mon = OnlineFlags(problem)
        n = problem.n_tasks
        self.C = (1,) * n
        self.log = TraceLog(mode, [t.id for t in problem.tasks])
        self.s = problem.scenario.settings
        self.jumped = False

    def mask(self):
        return tuple(c if ok else 0 for c, ok in zip(self.C, self.mon.pending()))

    def _search(self, asm: Assembled, start, t, p, reason):
        t_start = time.perf_counter()
        before = self.mask()
        self.C, checks = configuration_search(asm.cs, start, self.mon.pending())
        dur = time.perf_counter() - t_start
        self.log.searches.append({"t": t, "checks": checks, "seconds": dur, "reason": reason})
        if reason == "event" and self.mask() == before:
            return  # re-search after a task resolved but nothing changed: no jump
        self.log.jumps.append({
            "t": t, "reason": reason, "from": config_str(before), "to": config_str(self.mask()),
            "start": config_str(start), "checks": checks, "p": [float(p[0]), float(p[1])],
            "pending": config_str(self.mon.pending()),
        })
        self.jumped = True

    def control(self, p, t, q, Jm, events=False):
        """Resolve the configuration at (p, t) and return ``(u, feasible_flag, asm)``."""
        pr = self.pr
        if self.mode == "baseline":
            asm = assemble(pr, p, t, None, q, Jm)
            t_start = time.perf_counter()
            u, s = solve_relaxed(asm.cs, self.rho)
            self.log.qp_seconds.append(time.perf_counter() - t_start)
            self.last_slacks = s
            feas = feasible(asm.cs)
            return self._admissible(u), feas, asm
        asm = assemble(pr, p, t, (1,) * pr.n_tasks, q, Jm, live=self.mon.pending())
        if events:
            self._search(asm, (1,) * pr.n_tasks, t, p, "event")
        feas = feasible(asm.cs.with_mask(self.mask()))
        if not feas:
            self._search(asm, self.C, t, p, "infeasible")
        while True:
            t_start = time.perf_counter()
            u = solve_min_norm(asm.cs.with_mask(self.mask()))
            self.log.qp_seconds.append(time.perf_counter() - t_start)
            if u is not None:
                break
            # LP and QP disagree only on razor-thin sets; keep dropping tasks
            self._search(asm, self.C, t, p, "qp-infeasible")
        return self._admissible(u), feas, asm

    def _admissible(self, u):
        if self.pr.box is not None:
            u = np.clip(u, -self.pr.box, self.pr.box)
        return u

    def record(self, t, p, u, feas, asm):
        pr, log = self.pr, self.log
        log.t.append(t)
        log.p.append(np.array(p, dtype=float))
        log.q.append(asm.q.copy())
        log.u.append(np.array(u, dtype=float))
        log.config.append(config_str(self.mask()) if self.mode == "hybrid" else "1" * pr.n_tasks)
        log.feasible.append(int(feas))
        log.jump.append(int(self.jumped))
        idx = pr.primary_row
        log.h.append([pr.literal_value(pr.report_literal(task), p) for task in pr.tasks])
        log.hT.append([float(asm.hT[i]) for i in idx])
        log.b.append([float(asm.b[i]) for i in idx])
        log.flags.append("".join(FLAG_CODES[f] for f in self.mon.flags))
        if self.mode == "baseline":
            log.slacks.append([float(x) for x in self.last_slacks])

    def flow(self, p, t, u, q, Jm):
        """Integrate p' = u over one logging step, re-solving on disk sub-steps."""
        pr, s = self.pr, self.s
        w = pr.scenario.workspace
        remaining = pr.dt
        n_sub = 0
        while remaining > 1e-12:
            if n_sub:
                ts = t + (pr.dt - remaining)
                q, Jm = pr.transform.forward_and_jacobian(p)
                u, _, _ = self.control(p, ts, q, Jm)
            speed = float(np.linalg.norm(Jm @ u))
            tau = remaining if speed * remaining <= s.max_disk_step else s.max_disk_step / speed
            p_new = p + tau * u
            if not w.contains(p_new):
                raise SimulationAbort(f"robot left the workspace at t={t + pr.dt - remaining:.4f}", self.log)
            p = p_new
            remaining -= tau
            n_sub += 1
            if n_sub > s.max_substeps:
                raise SimulationAbort(f"sub-step limit hit at t={t:.4f}", self.log)
        self.log.substeps += n_sub
        return p

    def run(self) -> TraceLog:
        pr = self.pr
        wall = time.perf_counter()
        p = pr.p0.copy()
        k = 0
        while True:
            t = round(k * pr.dt, 9)
            self.jumped = False
            events = self.mon.update(t, p)
            q, Jm = pr.transform.forward_and_jacobian(p)
            u, feas, asm = self.control(p, t, q, Jm, events=bool(events))
            self.record(t, p, u, feas, asm)
            if t > pr.t_end or self.mon.all_resolved():
                break
            p = self.flow(p, t, u, q, Jm)
            if self.jumped:
                self.log.jump[-1] = 1
            k += 1
        log = self.log
        _fill_hT(pr, log)
        log.wall_seconds = time.perf_counter() - wall
        log.verdicts = {task.id: _VERDICT[f] for task, f in zip(pr.tasks, self.mon.flags)}
        log.offline_verdicts = offline_verdicts(pr, log)
        return log


def _problem(scenario_or_problem) -> Problem:
    if isinstance(scenario_or_problem, Problem):
        return scenario_or_problem
    return Problem(scenario_or_problem)


def simulate(scenario) -> TraceLog:
    """Hybrid controller run (masked min-norm QP with configuration jumps)."""
    return _Loop(_problem(scenario), "hybrid").run()


def simulate_baseline(scenario, rho: float | None = None) -> TraceLog:
    """Relaxation baseline: every task row softened by a penalised slack, no jumps."""
    pr = _problem(scenario)
    rho = pr.scenario.settings.rho if rho is None else rho
    return _Loop(pr, "baseline", rho).run()


def controller_step(problem: Problem, p, t: float, config) -> np.ndarray | None:
    """Min-norm input at (p, t) under a fixed configuration, or None if infeasible."""
    asm = assemble(problem, p, t, config)
    return solve_min_norm(asm.cs)


class HybridPlanner(BaseEstimator):
    """Estimator-style wrapper: ``fit(scenario)`` runs the closed loop.

    ``mode`` is "hybrid" or "baseline"; ``rho`` only matters for the baseline.
    """

    def __init__(self, mode: str = "hybrid", rho=None):
        self.mode = mode
        self.rho = rho

    def fit(self, X, y=None):
        if self.mode not in ("hybrid", "baseline"):
            raise ValueError(f"mode must be 'hybrid' or 'baseline', got {self.mode!r}")
        self.problem_ = _problem(X)
        self.log_ = simulate(self.problem_) if self.mode == "hybrid" else simulate_baseline(self.problem_, self.rho)
        self.verdicts_ = dict(self.log_.verdicts)
        return self

    def predict(self, X=None) -> np.ndarray:
        """Logged workspace trajectory (one row per record)."""
        return self.log_.positions()

    def score(self, X=None, y=None) -> float:
        """Fraction of tasks satisfied."""
        return self.log_.satisfied_count() / max(1, self.problem_.n_tasks)

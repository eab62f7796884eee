"""Checks that every simulated run must satisfy."""
import numpy as np

from stlnav.hybrid import assemble
from stlnav.opt import feasible


def check_admissible(problem, log, tol=1e-9):
    U = log.controls()
    viol = U @ problem.static_A.T - problem.static_b
    assert np.all(viol >= -tol), f"input left U by {-viol.min():.3e}"


def check_post_jump_feasible(problem, log):
    for j in log.jumps:
        live = tuple(c == "1" for c in j["pending"])
        mask = tuple(int(c) for c in j["to"])
        asm = assemble(problem, np.array(j["p"]), j["t"], mask, live=live)
        assert feasible(asm.cs) == 1, j


def check_position_continuity(problem, log):
    T = np.array(log.t)
    P = log.positions()
    for j in log.jumps:
        k = int(np.searchsorted(T, j["t"], side="right")) - 1
        assert log.jump[k] == 1
        if abs(T[k] - j["t"]) < 1e-12:
            np.testing.assert_array_equal(j["p"], P[k])
        else:
            # a jump between records happened on a flow substep; its p is a point
            # of the integrated path
            assert problem.scenario.workspace.contains(j["p"])
            assert T[k] < j["t"] < T[k + 1]


def check_search_bound(problem, log):
    assert all(s["checks"] <= 2 ** problem.n_tasks for s in log.searches)


def check_monitor_agreement(log):
    assert log.verdicts == log.offline_verdicts


def check_record_count(log):
    n = len(log.t)
    assert n == log.steps + 1
    for col in (log.p, log.q, log.u, log.config, log.feasible, log.jump, log.h, log.hT, log.b, log.flags):
        assert len(col) == n


def check_all(problem, log):
    check_record_count(log)
    check_admissible(problem, log)
    check_search_bound(problem, log)
    check_monitor_agreement(log)
    if log.mode == "hybrid":
        check_post_jump_feasible(problem, log)
        check_position_continuity(problem, log)

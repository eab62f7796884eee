import numpy as np
import pytest
from sklearn.base import clone

from _invariants import check_all
from stlnav.hybrid import (
    HybridPlanner, OnlineFlags, assemble, config_str, config_to_int, configuration_search, controller_step,
    int_to_config, simulate, simulate_baseline,
)
from stlnav.opt import ConstraintSystem, box_rows, feasible
from stlnav.predicates import eval_hT

TWO_G = dict(
    formula="G[2,6] mu1 & G[3,8] mu2",
    regions={"mu1": {"center": [0.5, 0.0], "radius": 0.15}, "mu2": {"center": [-0.5, 0.0], "radius": 0.15}},
    p0=(0.0, 0.5),
    bounds={"box": 2.0},
)


@pytest.fixture(scope="module")
def one_f(disk_scenario_factory):
    return disk_scenario_factory()


@pytest.fixture(scope="module")
def two_g(disk_scenario_factory):
    return disk_scenario_factory(**TWO_G)


@pytest.fixture(scope="module")
def one_f_log(one_f):
    return simulate(one_f)


@pytest.fixture(scope="module")
def two_g_log(two_g):
    return simulate(two_g)


# -- configurations and search ---------------------------------------------------------

def test_bit_order():
    assert config_to_int((1, 0, 1)) == 5
    assert int_to_config(4, 3) == (1, 0, 0)
    assert config_str((0, 1, 1)) == "011"


def _system(feasible_masks, n):
    """Rows that are jointly feasible exactly for the listed masks (built from a 1-D toy)."""
    # task j demands u1 >= j+1 under the box |u| <= n; masks with any bit set
    # above the limit become infeasible.  Used only for the examples below.
    A = np.tile([1.0, 0.0], (n, 1))
    b = np.array([float(k) for k in feasible_masks])
    return ConstraintSystem.build(*box_rows(float(n)), task_A=A, task_b=b)


def test_search_first_decrement_when_all_feasible():
    cs = ConstraintSystem.build(*box_rows(2.0), task_A=np.zeros((3, 2)), task_b=np.zeros(3))
    assert configuration_search(cs, (1, 1, 1), (True,) * 3) == ((1, 1, 0), 1)
    assert configuration_search(cs, (1, 0, 1), (True,) * 3) == ((1, 0, 0), 1)


def test_search_exhausts_to_zero():
    cs = ConstraintSystem.build(*box_rows(1.0), task_A=np.tile([1.0, 0.0], (3, 1)), task_b=np.full(3, 5.0))
    config, checks = configuration_search(cs, (1, 1, 1), (True,) * 3)
    assert config == (0, 0, 0)
    assert checks == 7 <= 2 ** 3


def test_search_skips_resolved_tasks():
    cs = ConstraintSystem.build(*box_rows(2.0), task_A=np.zeros((3, 2)), task_b=np.zeros(3))
    # task 2 (last bit) resolved: 110 is the first candidate that enforces only pending tasks
    assert configuration_search(cs, (1, 1, 1), (True, True, False)) == ((1, 1, 0), 1)
    # task 0 resolved: 111 -> 110 -> ... -> 011 is the first admissible candidate
    assert configuration_search(cs, (1, 1, 1), (False, True, True)) == ((0, 1, 1), 1)


def test_search_keeps_high_priority_task():
    # rows 0 and 2 are compatible, row 1 contradicts row 0
    cs = ConstraintSystem.build(*box_rows(2.0), task_A=[[1, 0], [-1, 0], [0, 1]], task_b=[1.0, 0.5, 1.0])
    config, _ = configuration_search(cs, (1, 1, 1), (True,) * 3)
    assert config == (1, 0, 1)


# -- assembly and the controller -----------------------------------------------------

def test_assemble_plateau_row(one_f):
    p, t = np.array([-0.2, 0.0]), 5.0
    asm = assemble(one_f, p, t)
    A, b = asm.cs.task_rows()
    q = asm.q
    h = eval_hT(one_f.rows[0].tp, q)
    d = -h
    assert d > 0
    # identity-like map: normal points from q toward the region center, unit length
    expected = (one_f.scenario.regions[1].center - q) / np.linalg.norm(one_f.scenario.regions[1].center - q)
    np.testing.assert_allclose(A[0], expected, atol=2e-2)
    m = one_f.rows[0].spec.margin
    assert b[0] == pytest.approx(-one_f.kappa * (-d - m), rel=1e-12)


def test_assemble_before_windows_is_trivial(disk_scenario_factory):
    pr = disk_scenario_factory(formula="F[5,10] mu1")
    A, b = assemble(pr, pr.p0, 0.0).cs.task_rows()
    assert np.all(A == 0) and np.all(b == 0)
    np.testing.assert_array_equal(controller_step(pr, pr.p0, 0.0, (1,)), [0.0, 0.0])


def test_masked_row_is_trivial(two_g):
    asm = assemble(two_g, two_g.p0, 3.0, (1, 0))
    A, b = asm.cs.task_rows()
    assert np.all(A[1] == 0) and b[1] == 0
    assert np.any(A[0] != 0)


def test_controller_step_satisfies_cbf_inequality(one_f):
    for t in (1.0, 5.0, 12.0):
        p = np.array([-0.3, 0.1])
        u = controller_step(one_f, p, t, (1,))
        A, b = assemble(one_f, p, t).cs.task_rows()
        assert A[0] @ u >= b[0] - 1e-9


def test_controller_step_respects_box(two_g):
    for t in np.linspace(0, 8, 17):
        u = controller_step(two_g, two_g.p0, t, (0, 0))
        if u is not None:
            assert np.max(np.abs(u)) <= 2.0 + 1e-12


# -- closed loop ---------------------------------------------------------------------

def test_single_eventually_task(one_f, one_f_log):
    assert one_f_log.verdicts == {1: "satisfied"}
    assert one_f_log.jumps == []
    check_all(one_f, one_f_log)
    # reached the region at some sample on the plateau
    spec = one_f.rows[0].spec
    T, H = np.array(one_f_log.t), np.array(one_f_log.hT)[:, 0]
    on = (T >= spec.t0) & (T <= spec.t1 - spec.delta)
    assert np.any(H[on] >= 0)


def test_conflicting_always_tasks_keep_the_higher_priority(two_g, two_g_log):
    assert len(two_g_log.jumps) >= 1
    first = two_g_log.jumps[0]
    assert first["reason"] == "infeasible" and first["to"] == "10"
    # after the jump only the rank-1 row is enforced and it is really incompatible with rank 2
    asm = assemble(two_g, np.array(first["p"]), first["t"])
    assert feasible(asm.cs) == 0 and feasible(asm.cs.with_mask((1, 0))) == 1
    assert two_g_log.verdicts[two_g.tasks[0].id] == "satisfied"
    check_all(two_g, two_g_log)


def test_enforced_always_task_stays_inside(two_g, two_g_log):
    spec = two_g.rows[0].spec
    T, H = np.array(two_g_log.t), np.array(two_g_log.hT)[:, 0]
    bits = np.array([c[0] == "1" for c in two_g_log.config])
    win = (T >= spec.t0) & (T <= spec.t1) & bits
    assert win.any() and np.all(H[win] >= -1e-3)


def test_flags_are_monotone(two_g_log):
    for j in range(2):
        seq = [f[j] for f in two_g_log.flags]
        first = next((k for k, c in enumerate(seq) if c != "P"), len(seq))
        assert all(c == "P" for c in seq[:first])
        assert len(set(seq[first:])) <= 1


def test_baseline_matches_when_jointly_feasible(one_f, one_f_log):
    base = simulate_baseline(one_f)
    assert base.verdicts == one_f_log.verdicts
    check_all(one_f, base)
    # a quadratic slack penalty leaves an O(1/rho) slack on active rows
    tight = simulate_baseline(one_f, rho=1e6)
    assert tight.slacks[0][0] < 1e-5 < base.slacks[0][0]
    assert tight.verdicts == one_f_log.verdicts


def test_baseline_is_worse_on_conflict(two_g, two_g_log):
    base = simulate_baseline(two_g)
    check_all(two_g, base)
    assert base.satisfied_count() < two_g_log.satisfied_count()


def test_deterministic(two_g, two_g_log):
    assert simulate(two_g).to_csv() == two_g_log.to_csv()


def test_online_flags_until(disk_scenario_factory):
    pr = disk_scenario_factory(
        formula="mu1 U[1,5] mu2",
        regions={"mu1": {"center": [0.0, 0.0], "radius": 0.6}, "mu2": {"center": [0.3, 0.0], "radius": 0.1}},
        p0=(-0.3, 0.0),
    )
    mon = OnlineFlags(pr)
    assert mon.update(0.0, np.array([-0.3, 0.0])) == []
    assert mon.update(0.5, np.array([0.3, 0.0])) == []  # right literal before the window opens
    assert mon.update(1.0, np.array([0.3, 0.0])) == [0]
    assert mon.flags == [1]
    log = simulate(pr)
    assert log.verdicts == {1: "satisfied"}
    check_all(pr, log)


def test_planner_estimator_api(one_f, one_f_log):
    est = HybridPlanner()
    assert clone(est).get_params() == {"mode": "hybrid", "rho": None}
    est.fit(one_f)
    assert est.verdicts_ == one_f_log.verdicts
    np.testing.assert_array_equal(est.predict(), one_f_log.positions())
    assert est.score() == 1.0
    with pytest.raises(ValueError):
        HybridPlanner(mode="other").fit(one_f)

import numpy as np
import pytest

from gridscreen import dynamics as dyn
from gridscreen.dynamics import Trajectory
from gridscreen.grid import equilibrium_angles
from gridscreen.overload import (
    SafetyPolicy,
    ZONE_EMERGENCY,
    ZONE_SAFE,
    ZONE_WARNING,
    flow_ratios,
    global_overload,
    line_overload_times,
    polytope_contains,
    polytope_violations,
)
from toys import triangle, two_bus


def synthetic_trajectory(angle_rows, dt=0.01, branch=None, tau=0.0):
    """Trajectory with prescribed angles and zero frequencies."""
    angle_rows = np.asarray(angle_rows, dtype=float)
    k, n = angle_rows.shape
    states = np.hstack([np.zeros((k, n)), angle_rows])
    times = np.arange(k) * dt
    return Trajectory(times=times, states=states, n=n, branch=branch, tau=tau)


def test_equilibrium_has_zero_overload():
    g = triangle()
    ss = dyn.assemble(g)
    traj = dyn.propagate_deterministic(ss, 0.0, 1.0, 0.01)
    assert np.array_equal(line_overload_times(traj, g), np.zeros(3))
    assert global_overload(traj, g) == 0.0


def test_overload_counts_left_endpoints():
    g = two_bus(beta=1.0, limit=1.0)
    # angle difference 1.5 for rows 0..36, then back inside the limit
    rows = np.zeros((101, 2))
    rows[:37, 0] = 1.5
    traj = synthetic_trajectory(rows)
    times = line_overload_times(traj, g)
    assert times[0] == pytest.approx(0.37)
    assert times[0] / traj.dt == pytest.approx(round(times[0] / traj.dt))


def test_horizon_endpoint_starts_no_interval():
    g = two_bus(beta=1.0, limit=1.0)
    rows = np.zeros((11, 2))
    rows[-1, 0] = 5.0  # only the final stored state exceeds
    traj = synthetic_trajectory(rows)
    assert line_overload_times(traj, g)[0] == 0.0


def test_strict_inequality_at_limit():
    g = two_bus(beta=1.0, limit=1.0)
    rows = np.zeros((11, 2))
    rows[:, 0] = 1.0  # flow exactly at the limit never counts
    traj = synthetic_trajectory(rows)
    assert line_overload_times(traj, g)[0] == 0.0


def test_faulted_branch_uses_derated_flow():
    g = two_bus(beta=1.0, limit=0.8)
    rows = np.zeros((21, 2))
    rows[:, 0] = 1.0  # |flow| = 1 nominal, 2/3 during the fault window
    traj = synthetic_trajectory(rows, dt=0.01, branch=0, tau=0.1)
    times = line_overload_times(traj, g)
    # rows 0..10 fall in the fault window (2/3 < 0.8), rows 11..19 exceed
    assert times[0] == pytest.approx(0.09)


def test_global_is_sum_over_monitored():
    g = triangle(limits=(0.1, 0.1, 0.1))
    rows = np.tile([0.5, 0.0, -0.5], (11, 1))
    traj = synthetic_trajectory(rows)
    times = line_overload_times(traj, g)
    assert global_overload(traj, g) == pytest.approx(times.sum())
    assert global_overload(traj, g, monitored=(1,)) == pytest.approx(times[1])
    assert global_overload(traj, g, monitored=()) == 0.0


def test_overload_bounded_by_horizon():
    g = two_bus(beta=1.0, limit=0.1)
    rows = np.ones((51, 2))
    rows[:, 1] = 0.0
    traj = synthetic_trajectory(rows)
    assert line_overload_times(traj, g)[0] <= traj.times[-1] + 1e-12


def test_raising_limits_never_raises_overload():
    g_tight = triangle(limits=(0.2, 0.2, 0.2))
    g_loose = triangle(limits=(0.4, 0.4, 0.4))
    ss = dyn.assemble(g_tight, branch=0)
    traj = dyn.propagate_deterministic(ss, 1.0, 5.0, 0.01)
    t_tight = line_overload_times(traj, g_tight)
    t_loose = line_overload_times(traj, g_loose)
    assert np.all(t_loose <= t_tight + 1e-12)


def test_refinement_changes_bounded_by_crossings():
    g = two_bus(beta=1.0, limit=1.0)
    ss = dyn.assemble(g, branch=0)
    coarse = dyn.propagate_deterministic(ss, 0.8, 4.0, 0.02)
    fine = dyn.propagate_deterministic(ss, 0.8, 4.0, 0.01)
    s_coarse = line_overload_times(coarse, g)[0]
    s_fine = line_overload_times(fine, g)[0]
    r = flow_ratios(fine, g)[:, 0]
    crossings = int(np.abs(np.diff(np.sign(r - 1.0))).sum() // 2) + 1
    assert abs(s_coarse - s_fine) <= crossings * 0.02 + 1e-12


def test_flow_ratio_shape_and_schedule():
    g = triangle()
    ss = dyn.assemble(g, branch=1)
    traj = dyn.propagate_deterministic(ss, 0.5, 2.0, 0.01)
    ratios = flow_ratios(traj, g)
    assert ratios.shape == (201, 3)
    # recompute row 10 by hand: fault active, branch 1 derated
    theta = traj.angles()[10]
    d21 = theta[1] - theta[2]
    expected = abs(2.0 / 3.0 * g.branches[1].susceptance * d21) / g.branches[1].limit
    assert ratios[10, 1] == pytest.approx(expected)
    # row 60 is past clearing, nominal susceptance everywhere
    theta = traj.angles()[60]
    expected = abs(g.branches[1].susceptance * (theta[1] - theta[2]))
    expected /= g.branches[1].limit
    assert ratios[60, 1] == pytest.approx(expected)


# ---------------------------------------------------------------------------
# Safety polytope


def test_equilibrium_inside_polytope(ieee118):
    theta = equilibrium_angles(ieee118)
    assert polytope_contains(theta, ieee118)


def test_scaled_injections_leave_polytope(ieee118):
    theta = 3.0 * equilibrium_angles(ieee118)
    violations = polytope_violations(theta, ieee118)
    assert violations
    # every reported ratio really exceeds one, sorted descending
    ratios = [r for _, r in violations]
    assert all(r > 1.0 for r in ratios)
    assert ratios == sorted(ratios, reverse=True)


def test_polytope_zero_angles():
    assert polytope_contains(np.zeros(3), triangle())


def test_polytope_cross_check_with_ratios():
    g = triangle(limits=(0.1, 0.4, 0.2))
    theta = np.array([0.3, 0.0, -0.3])
    viol = dict(polytope_violations(theta, g))
    from gridscreen.grid import branch_arrays

    fr, to, beta, limit = branch_arrays(g)
    manual = np.abs(beta * (theta[fr] - theta[to])) / limit
    for e in range(3):
        if manual[e] > 1.0:
            assert viol[e] == pytest.approx(manual[e])
        else:
            assert e not in viol


# ---------------------------------------------------------------------------
# Risk zones


def test_zone_examples():
    policy = SafetyPolicy()
    assert policy.zone(0.05) == ZONE_EMERGENCY
    assert policy.zone(0.03) == ZONE_WARNING
    assert policy.zone(0.01) == ZONE_SAFE


def test_zone_boundaries_belong_to_warning():
    policy = SafetyPolicy()
    assert policy.zone(0.025) == ZONE_WARNING
    assert policy.zone(0.04) == ZONE_WARNING
    assert policy.zone(0.0249999) == ZONE_SAFE
    assert policy.zone(0.0400001) == ZONE_EMERGENCY


def test_zone_extremes():
    policy = SafetyPolicy()
    assert policy.zone(0.0) == ZONE_SAFE
    assert policy.zone(1.0) == ZONE_EMERGENCY

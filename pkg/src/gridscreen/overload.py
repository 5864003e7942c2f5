"""Overload indicators, safety polytope, and risk zone classification.

A branch is overloaded at an instant when the magnitude of its flow,
evaluated with the fault-window susceptance schedule, strictly exceeds its
thermal limit. The per-branch overload time integrates that indicator over
the horizon with a left-endpoint rule on the trajectory's step grid, so
every overload time is an integer multiple of the step and never exceeds
the horizon. The global indicator sums the monitored branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import RETAINED_FRACTION, fault_steps
from .grid import branch_arrays

ZONE_SAFE = "safe"
ZONE_WARNING = "warning"
ZONE_EMERGENCY = "emergency"


@dataclass(frozen=True)
class SafetyPolicy:
    """Zone thresholds on overload probabilities at the critical duration."""

    t_star: float = 1.0
    warning: float = 0.025
    emergency: float = 0.04

    def zone(self, probability):
        """Classify a probability; both boundaries belong to the warning zone."""
        if probability < self.warning:
            return ZONE_SAFE
        if probability <= self.emergency:
            return ZONE_WARNING
        return ZONE_EMERGENCY


def risk_classify(probability, policy):
    """Zone label for an overload probability under the given policy."""
    return policy.zone(probability)


def flow_ratios(traj, grid, retained=RETAINED_FRACTION, arrays=None):
    """|flow| / limit for every branch at every stored time.

    The faulted branch (taken from the trajectory) uses the derated
    susceptance while ``t <= tau``, matching the fault schedule closed on
    the right after tau snaps to the step grid.
    """
    fr, to, beta, limit = branch_arrays(grid) if arrays is None else arrays
    theta = traj.angles()
    diffs = theta[:, fr] - theta[:, to]
    ratios = np.abs(diffs) * (beta / limit)
    if traj.branch is not None:
        k_tau = fault_steps(traj.tau, traj.dt, len(traj.times) - 1)
        ratios[: k_tau + 1, traj.branch] *= retained
    return ratios


def line_overload_times(traj, grid, retained=RETAINED_FRACTION, arrays=None):
    """Seconds each branch spends strictly above its limit (left endpoints)."""
    ratios = flow_ratios(traj, grid, retained=retained, arrays=arrays)
    # the state at the horizon endpoint starts no interval
    exceed = ratios[:-1] > 1.0
    return exceed.sum(axis=0) * traj.dt


def global_overload(traj, grid, monitored=None, retained=RETAINED_FRACTION,
                    arrays=None):
    """Total overload seconds across the monitored branch set."""
    times = line_overload_times(traj, grid, retained=retained, arrays=arrays)
    idx = list(grid.monitored if monitored is None else monitored)
    return float(times[idx].sum())


def polytope_violations(theta, grid, arrays=None):
    """Branches whose nominal flow exceeds the limit at the given angles.

    Returns a list of (branch index, |flow|/limit) for violating branches,
    in decreasing ratio order.
    """
    fr, to, beta, limit = branch_arrays(grid) if arrays is None else arrays
    theta = np.asarray(theta)
    ratios = np.abs(beta * (theta[fr] - theta[to])) / limit
    bad = np.flatnonzero(ratios > 1.0)
    order = bad[np.argsort(-ratios[bad])]
    return [(int(e), float(ratios[e])) for e in order]


def polytope_contains(theta, grid, arrays=None):
    """True when every branch flow is within its limit."""
    return not polytope_violations(theta, grid, arrays=arrays)

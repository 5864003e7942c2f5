"""Swing dynamics in first-order form and its analytic propagators.

The linearized swing equations ``M ddtheta + D dtheta + L theta = p`` are
rewritten on the stacked state ``x = (omega; theta)`` as

    dx/dt = A x + P,   A = [[-M^-1 D, -M^-1 L], [I, 0]],   P = (M^-1 p; 0).

A single-branch fault retains a fraction (2/3 by default) of the faulted
branch susceptance for ``t in [0, tau]`` and adds a multiplicative noise
term ``G x dW`` whose only nonzero block couples the faulted branch angle
difference into the endpoint frequencies. That makes ``G`` rank one and
nilpotent (``G @ G == 0``), so the per-step stochastic propagator

    x_{k+1} = E_f (x_k + G x_k dW_k) + J_f

is exact in distribution for the linearized model up to the usual weak
discretization error from freezing the noise within a step. Deterministic
segments use the same affine step ``x_{k+1} = E x_k + J`` with ``E`` the
matrix exponential over one step, so deterministic propagation is exact
at grid times. Two slower integrators (a moment ODE and Euler-Maruyama)
serve as independent cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import build_laplacian, equilibrium_angles

#: Fraction of branch susceptance retained during a single-phase fault.
RETAINED_FRACTION = 2.0 / 3.0

#: Relative reconstruction tolerance above which a matrix is treated as
#: defective and propagation falls back to scipy's expm.
EIG_RTOL = 1e-9


class DynamicsError(Exception):
    """Propagation or assembly failure."""


class DefectiveMatrixError(DynamicsError):
    """Eigenvector basis too ill-conditioned to reconstruct the matrix."""


@dataclass(frozen=True)
class StateSpace:
    """First-order model of one fault scenario on a grid.

    ``a0`` is the post-clearing drift, ``da`` the fault-window correction
    (zero matrix when no branch is faulted). The noise matrix is stored in
    factored form: ``G = outer(gain, probe)`` where ``probe`` selects the
    faulted branch angle difference. ``x0`` is the pre-fault equilibrium.
    """

    a0: np.ndarray
    da: np.ndarray
    gain: np.ndarray
    probe_plus: int
    probe_minus: int
    forcing: np.ndarray
    x0: np.ndarray
    n: int
    branch: int | None
    sigma: float

    @property
    def a_fault(self):
        return self.a0 + self.da

    def noise_matrix(self):
        """Dense noise matrix G (rank one, nilpotent)."""
        g = np.zeros_like(self.a0)
        if self.branch is not None and self.sigma != 0.0:
            g[:, self.probe_plus] += self.gain
            g[:, self.probe_minus] -= self.gain
        return g

    def probe(self, x):
        """Faulted branch angle difference theta_i - theta_j of a state."""
        return x[..., self.probe_plus] - x[..., self.probe_minus]


def assemble(grid, branch=None, *, sigma=None, sigma_scale=1.0,
             retained=RETAINED_FRACTION, theta0=None):
    """Build the StateSpace for a fault on ``branch`` (or no fault).

    Parameters
    ----------
    grid : Grid
    branch : int or None
        Faulted branch index; None yields the unfaulted system.
    sigma : float, optional
        Noise magnitude. Defaults to the faulted branch susceptance
        scaled by ``sigma_scale``.
    retained : float
        Susceptance fraction kept on the faulted branch during the fault.
    theta0 : ndarray, optional
        Pre-computed equilibrium angles, to avoid re-solving.
    """
    n = grid.n_buses
    minv = 1.0 / grid.inertias()
    damping = grid.dampings()
    lap = build_laplacian(grid)

    a0 = np.zeros((2 * n, 2 * n))
    a0[:n, :n] = np.diag(-minv * damping)
    a0[:n, n:] = -minv[:, None] * lap
    a0[n:, :n] = np.eye(n)

    forcing = np.zeros(2 * n)
    forcing[:n] = minv * grid.injections()

    if theta0 is None:
        theta0 = equilibrium_angles(grid, laplacian=lap)
    x0 = np.zeros(2 * n)
    x0[n:] = theta0

    da = np.zeros((2 * n, 2 * n))
    gain = np.zeros(2 * n)
    pi = pj = n  # placeholder probe for the no-fault system
    if branch is not None:
        br = grid.branches[branch]
        i, j = grid.bus_index(br.from_bus), grid.bus_index(br.to_bus)
        drop = (1.0 - retained) * br.susceptance
        # removing `drop` of the susceptance adds drop * M^-1 C in the
        # angle-coupling block, C the branch edge Laplacian
        da[i, n + i] += drop * minv[i]
        da[i, n + j] -= drop * minv[i]
        da[j, n + j] += drop * minv[j]
        da[j, n + i] -= drop * minv[j]
        if sigma is None:
            sigma = br.susceptance * sigma_scale
        gain[i] = sigma * minv[i]
        gain[j] = -sigma * minv[j]
        pi, pj = n + i, n + j
    else:
        sigma = 0.0

    return StateSpace(
        a0=a0,
        da=da,
        gain=gain,
        probe_plus=pi,
        probe_minus=pj,
        forcing=forcing,
        x0=x0,
        n=n,
        branch=branch,
        sigma=float(sigma),
    )


# ---------------------------------------------------------------------------
# Eigendecomposition and exact affine steps


@dataclass(frozen=True)
class Eigensystem:
    values: np.ndarray
    vectors: np.ndarray
    inverse: np.ndarray

    def reconstruct(self):
        return (self.vectors * self.values) @ self.inverse


def eigendecompose(a, rtol=EIG_RTOL):
    """Diagonalize a real matrix, refusing defective or ill-conditioned bases.

    Raises DefectiveMatrixError when ``U diag(w) U^-1`` fails to reproduce
    the input to ``rtol`` in the Frobenius norm.
    """
    values, vectors = np.linalg.eig(a)
    try:
        inverse = np.linalg.inv(vectors)
    except np.linalg.LinAlgError:
        raise DefectiveMatrixError("eigenvector matrix is singular")
    eig = Eigensystem(values=values, vectors=vectors, inverse=inverse)
    scale = np.linalg.norm(a)
    err = np.linalg.norm(eig.reconstruct().real - a)
    if err > rtol * max(scale, 1e-300):
        raise DefectiveMatrixError(
            f"reconstruction error {err:.2e} exceeds {rtol:.0e} * {scale:.2e}"
        )
    return eig


def _phi1(z):
    """(exp(z) - 1) / z, stable near zero, elementwise on complex arrays."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-8
    zs = z[small]
    out[small] = 1.0 + zs / 2.0 + zs * zs / 6.0
    zb = z[~small]
    out[~small] = np.expm1(zb) / zb
    return out


def step_operator(a, forcing, dt, eig=None):
    """Exact one-step affine update (E, J) for ``dx/dt = a x + forcing``.

    ``x(t + dt) = E x(t) + J`` holds exactly for the linear ODE. Uses the
    eigendecomposition when the matrix is diagonalizable and falls back to
    an augmented matrix exponential otherwise.
    """
    if eig is None:
        try:
            eig = eigendecompose(a)
        except DefectiveMatrixError:
            return _step_operator_expm(a, forcing, dt)
    w = eig.values * dt
    growth = np.exp(w)
    e_mat = ((eig.vectors * growth) @ eig.inverse).real
    coeff = _phi1(w) * dt * (eig.inverse @ forcing)
    j_vec = (eig.vectors @ coeff).real
    return e_mat, j_vec


def _step_operator_expm(a, forcing, dt):
    m = a.shape[0]
    aug = np.zeros((m + 1, m + 1))
    aug[:m, :m] = a * dt
    aug[:m, m] = forcing * dt
    full = scipy.linalg.expm(aug)
    return full[:m, :m], full[:m, m]


# ---------------------------------------------------------------------------
# Noise paths and trajectories


@dataclass(frozen=True)
class NoisePath:
    """Brownian increments over the fault window on a fixed step grid."""

    dt: float
    increments: np.ndarray

    @classmethod
    def draw(cls, rng, n_steps, dt):
        return cls(dt=dt, increments=rng.standard_normal(n_steps) * np.sqrt(dt))

    @classmethod
    def zeros(cls, n_steps, dt):
        return cls(dt=dt, increments=np.zeros(n_steps))


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform time grid; row k is the state at ``times[k]``."""

    times: np.ndarray
    states: np.ndarray
    n: int
    branch: int | None
    tau: float

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def angles(self):
        return self.states[:, self.n:]

    def frequencies(self):
        return self.states[:, : self.n]


def fault_steps(tau, dt, n_steps):
    """Number of fault-on steps after snapping tau to the step grid."""
    return int(np.clip(round(tau / dt), 0, n_steps))


def _grid_times(horizon, dt):
    n_steps = int(round(horizon / dt))
    if n_steps < 1:
        raise DynamicsError(f"horizon {horizon} shorter than one step {dt}")
    return n_steps, np.arange(n_steps + 1) * dt


def propagate_deterministic(ss, tau, horizon, dt, x0=None, operators=None):
    """Noise-free trajectory, exact at grid times.

    ``operators`` may carry precomputed ((E_f, J_f), (E_0, J_0)) pairs.
    """
    n_steps, times = _grid_times(horizon, dt)
    k_tau = fault_steps(tau, dt, n_steps)
    if operators is None:
        op_fault = step_operator(ss.a_fault, ss.forcing, dt) if k_tau else None
        op_clear = step_operator(ss.a0, ss.forcing, dt)
    else:
        op_fault, op_clear = operators
    x = ss.x0.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    for k in range(n_steps):
        e_mat, j_vec = op_fault if k < k_tau else op_clear
        x = e_mat @ x + j_vec
        states[k + 1] = x
    return Trajectory(times=times, states=states, n=ss.n, branch=ss.branch, tau=tau)


def propagate_stochastic(ss, path, tau, horizon, x0=None, operators=None):
    """Trajectory under the multiplicative fault noise.

    The homogeneous part of each fault-window step applies the exact
    stochastic propagator ``E_f (I + G dW)``; the forced contribution and
    all post-clearing steps reuse the deterministic affine update. A path
    of zeros reproduces :func:`propagate_deterministic` bitwise.
    """
    dt = path.dt
    n_steps, times = _grid_times(horizon, dt)
    k_tau = fault_steps(tau, dt, n_steps)
    if len(path.increments) < k_tau:
        raise DynamicsError(
            f"noise path has {len(path.increments)} increments, "
            f"fault window needs {k_tau}"
        )
    if operators is None:
        op_fault = step_operator(ss.a_fault, ss.forcing, dt) if k_tau else None
        op_clear = step_operator(ss.a0, ss.forcing, dt)
    else:
        op_fault, op_clear = operators
    x = ss.x0.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    dw = path.increments
    for k in range(n_steps):
        if k < k_tau:
            e_mat, j_vec = op_fault
            x = x + ss.gain * (ss.probe(x) * dw[k])
            x = e_mat @ x + j_vec
        else:
            e_mat, j_vec = op_clear
            x = e_mat @ x + j_vec
        states[k + 1] = x
    return Trajectory(times=times, states=states, n=ss.n, branch=ss.branch, tau=tau)


def propagate_euler_maruyama(ss, path, tau, horizon, x0=None):
    """Euler-Maruyama reference integrator on the path's step grid.

    Slow and biased at coarse steps; used as an independent oracle for the
    analytic stochastic propagator.
    """
    dt = path.dt
    n_steps, times = _grid_times(horizon, dt)
    k_tau = fault_steps(tau, dt, n_steps)
    if len(path.increments) < k_tau:
        raise DynamicsError("noise path shorter than the fault window")
    a_fault = ss.a_fault
    x = ss.x0.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    dw = path.increments
    for k in range(n_steps):
        if k < k_tau:
            drift = a_fault @ x + ss.forcing
            x = x + drift * dt + ss.gain * (ss.probe(x) * dw[k])
        else:
            drift = ss.a0 @ x + ss.forcing
            x = x + drift * dt
        states[k + 1] = x
    return Trajectory(times=times, states=states, n=ss.n, branch=ss.branch, tau=tau)


def moment_evolution(ss, tau, rtol=1e-10, atol=1e-12):
    """First and second moments of the fault-window state at ``t = tau``.

    Integrates the closed moment ODEs of the linear SDE with the high
    order adaptive integrator from scipy, independent of the analytic
    propagator. Returns ``(mean, cov)`` at the clearing time.
    """
    from scipy.integrate import solve_ivp

    m = 2 * ss.n
    a_tilde = ss.a_fault
    g = ss.noise_matrix()
    forcing = ss.forcing

    def rhs(_t, y):
        mean = y[:m]
        smat = y[m:].reshape(m, m)
        dmean = a_tilde @ mean + forcing
        dsmat = (
            a_tilde @ smat
            + smat @ a_tilde.T
            + np.outer(forcing, mean)
            + np.outer(mean, forcing)
            + g @ smat @ g.T
        )
        return np.concatenate([dmean, dsmat.ravel()])

    y0 = np.concatenate([ss.x0, np.outer(ss.x0, ss.x0).ravel()])
    if tau <= 0:
        mean = ss.x0.copy()
        return mean, np.zeros((m, m))
    sol = solve_ivp(rhs, (0.0, tau), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise DynamicsError(f"moment integration failed: {sol.message}")
    mean = sol.y[:m, -1]
    smat = sol.y[m:, -1].reshape(m, m)
    cov = smat - np.outer(mean, mean)
    return mean, 0.5 * (cov + cov.T)

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from gridscreen import dynamics as dyn
from gridscreen.grid import Branch, Bus, Grid
from toys import random_connected, triangle, two_bus


def reference_trajectory(ss, tau, horizon, t_eval):
    """High-order adaptive integration of the piecewise-linear ODE."""

    def rhs(t, x):
        a = ss.a_fault if t < tau else ss.a0
        return a @ x + ss.forcing

    sol = solve_ivp(
        rhs,
        (0.0, horizon),
        ss.x0,
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        t_eval=t_eval,
        max_step=0.05,
    )
    assert sol.success
    return sol.y.T


# ---------------------------------------------------------------------------
# Assembly


def test_two_bus_noise_block():
    ss = dyn.assemble(two_bus(beta=1.0), branch=0)
    g = ss.noise_matrix()
    expected = np.zeros((4, 4))
    expected[:2, 2:] = [[1.0, -1.0], [-1.0, 1.0]]
    assert np.array_equal(g, expected)


def test_no_fault_has_zero_noise_and_da():
    ss = dyn.assemble(triangle())
    assert not ss.noise_matrix().any()
    assert not ss.da.any()
    assert ss.sigma == 0.0


def test_sigma_zero_noise_matrix_vanishes():
    ss = dyn.assemble(triangle(), branch=1, sigma=0.0)
    assert not ss.noise_matrix().any()


def test_fault_block_is_rank_one():
    ss = dyn.assemble(triangle(), branch=2)
    assert np.linalg.matrix_rank(ss.da) == 1
    # the fault correction only touches frequency rows of the endpoints
    rows = np.flatnonzero(np.abs(ss.da).sum(axis=1))
    assert set(rows) <= set(range(ss.n))


def test_noise_nilpotent_on_random_grids():
    rng = np.random.default_rng(3)
    for _ in range(10):
        grid = random_connected(rng, 7, 4)
        e = int(rng.integers(grid.n_branches))
        ss = dyn.assemble(grid, branch=e)
        g = ss.noise_matrix()
        assert np.linalg.norm(g @ g) <= 1e-14 * max(np.linalg.norm(g) ** 2, 1e-300)


def test_noise_nilpotent_all_ieee118_branches(ieee118):
    for e in range(ieee118.n_branches):
        ss = dyn.assemble(ieee118, branch=e)
        g = ss.noise_matrix()
        prod = g @ g
        assert np.linalg.norm(prod) <= 1e-14 * np.linalg.norm(g) ** 2


def test_sigma_defaults_to_branch_susceptance():
    grid = triangle()
    ss = dyn.assemble(grid, branch=1)
    assert ss.sigma == grid.branches[1].susceptance
    scaled = dyn.assemble(grid, branch=1, sigma_scale=0.25)
    assert scaled.sigma == 0.25 * grid.branches[1].susceptance


def test_fault_drift_matches_derated_laplacian():
    from gridscreen.grid import build_laplacian

    grid = triangle()
    ss = dyn.assemble(grid, branch=0)
    minv = 1.0 / grid.inertias()
    lap_f = build_laplacian(grid, scale={0: dyn.RETAINED_FRACTION})
    expected = -minv[:, None] * lap_f
    assert np.allclose(ss.a_fault[: ss.n, ss.n :], expected, atol=1e-14)


def test_gauge_mode_present():
    ss = dyn.assemble(triangle())
    ones = np.zeros(2 * ss.n)
    ones[ss.n :] = 1.0
    assert np.abs(ss.a0 @ ones).max() <= 1e-12


def test_drift_spectrum_stable(ieee118):
    ss = dyn.assemble(ieee118)
    eigs = np.linalg.eigvals(ss.a0)
    re = np.sort(eigs.real)
    # a single neutral gauge mode, everything else strictly damped
    assert re[-1] <= 1e-8
    assert (np.abs(eigs) < 1e-8).sum() == 1
    assert re[-2] < -1e-4


# ---------------------------------------------------------------------------
# Eigendecomposition and step operators


def test_eigendecompose_diagonal_matrix():
    a = np.diag([-1.0, -2.0, -3.0])
    eig = dyn.eigendecompose(a)
    assert np.allclose(sorted(eig.values.real), [-3, -2, -1])
    assert np.allclose(eig.reconstruct().real, a, atol=1e-12)


def test_eigendecompose_rejects_jordan_block():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(dyn.DefectiveMatrixError):
        dyn.eigendecompose(a)


def test_eigendecompose_random_stable_matrices():
    rng = np.random.default_rng(11)
    for _ in range(100):
        m = rng.integers(2, 12)
        a = rng.normal(size=(m, m))
        a = a - (np.linalg.eigvals(a).real.max() + 0.1) * np.eye(m)
        eig = dyn.eigendecompose(a)
        err = np.linalg.norm(eig.reconstruct().real - a)
        assert err <= 1e-8 * max(np.linalg.norm(a), 1e-300)


def test_step_operator_matches_expm():
    import scipy.linalg

    rng = np.random.default_rng(5)
    a = rng.normal(size=(6, 6))
    forcing = rng.normal(size=6)
    dt = 0.013
    e_mat, j_vec = dyn.step_operator(a, forcing, dt)
    assert np.allclose(e_mat, scipy.linalg.expm(a * dt), atol=1e-11)
    # J = integral of expm(a s) forcing ds over one step
    x0 = rng.normal(size=6)
    sol = solve_ivp(
        lambda t, x: a @ x + forcing, (0, dt), x0, method="DOP853",
        rtol=1e-12, atol=1e-14,
    )
    assert np.allclose(e_mat @ x0 + j_vec, sol.y[:, -1], atol=1e-10)


def test_step_operator_defective_fallback():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])  # pure Jordan block
    forcing = np.array([0.0, 1.0])
    dt = 0.5
    e_mat, j_vec = dyn.step_operator(a, forcing, dt)
    assert np.allclose(e_mat, [[1.0, 0.5], [0.0, 1.0]], atol=1e-12)
    # x(t) = (t^2/2, t) from rest
    assert np.allclose(j_vec, [dt**2 / 2, dt], atol=1e-12)


def test_step_operator_handles_zero_eigenvalue():
    ss = dyn.assemble(triangle())
    e_mat, j_vec = dyn.step_operator(ss.a0, ss.forcing, 0.01)
    assert np.all(np.isfinite(e_mat)) and np.all(np.isfinite(j_vec))
    # equilibrium is a fixed point of the affine step
    assert np.abs(e_mat @ ss.x0 + j_vec - ss.x0).max() <= 1e-12


# ---------------------------------------------------------------------------
# Deterministic propagation


def test_equilibrium_is_fixed_point():
    ss = dyn.assemble(triangle())
    traj = dyn.propagate_deterministic(ss, 0.0, 2.0, 0.01)
    assert np.abs(traj.states - ss.x0).max() <= 1e-10


def test_fault_excursion_and_recovery():
    ss = dyn.assemble(triangle(), branch=0)
    traj = dyn.propagate_deterministic(ss, 1.0, 40.0, 0.01)
    moved = np.abs(traj.states[100] - ss.x0).max()
    assert moved > 1e-3
    # with the fault cleared the system relaxes back to equilibrium
    assert np.abs(traj.states[-1] - ss.x0).max() < 1e-6


def test_deterministic_matches_reference_triangle():
    ss = dyn.assemble(triangle(), branch=1)
    traj = dyn.propagate_deterministic(ss, 0.73, 6.0, 0.01)
    # tau snaps to the grid; integrate the snapped switching time
    tau_snapped = dyn.fault_steps(0.73, 0.01, 600) * 0.01
    ref = reference_trajectory(ss, tau_snapped, 6.0, traj.times)
    assert np.abs(traj.states - ref).max() <= 1e-9


def test_deterministic_random_grid_reference():
    rng = np.random.default_rng(23)
    grid = random_connected(rng, 8, 5)
    ss = dyn.assemble(grid, branch=3)
    traj = dyn.propagate_deterministic(ss, 0.5, 4.0, 0.005)
    ref = reference_trajectory(ss, 0.5, 4.0, traj.times)
    assert np.abs(traj.states - ref).max() <= 1e-8


def test_tau_snapping():
    assert dyn.fault_steps(0.104, 0.01, 100) == 10
    assert dyn.fault_steps(0.106, 0.01, 100) == 11
    assert dyn.fault_steps(0.0, 0.01, 100) == 0
    assert dyn.fault_steps(99.0, 0.01, 100) == 100


def test_trajectory_layout():
    ss = dyn.assemble(two_bus(), branch=0)
    traj = dyn.propagate_deterministic(ss, 0.2, 1.0, 0.1)
    assert traj.states.shape == (11, 4)
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(1.0)
    assert traj.angles().shape == (11, 2)
    assert traj.dt == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# Stochastic propagation


def test_zero_path_reduces_to_deterministic():
    ss = dyn.assemble(triangle(), branch=0)
    path = dyn.NoisePath.zeros(80, 0.01)
    det = dyn.propagate_deterministic(ss, 0.8, 3.0, 0.01)
    sto = dyn.propagate_stochastic(ss, path, 0.8, 3.0)
    assert np.array_equal(det.states, sto.states)


def test_sigma_zero_path_equals_deterministic():
    ss = dyn.assemble(triangle(), branch=0, sigma=0.0)
    rng = np.random.default_rng(0)
    path = dyn.NoisePath.draw(rng, 80, 0.01)
    det = dyn.propagate_deterministic(ss, 0.8, 3.0, 0.01)
    sto = dyn.propagate_stochastic(ss, path, 0.8, 3.0)
    assert np.abs(det.states - sto.states).max() <= 1e-10


def test_post_clearing_is_deterministic_function_of_clearing_state():
    ss = dyn.assemble(triangle(), branch=0)
    rng = np.random.default_rng(4)
    path = dyn.NoisePath.draw(rng, 50, 0.01)
    traj = dyn.propagate_stochastic(ss, path, 0.5, 2.0)
    k_tau = 50
    tail = dyn.propagate_deterministic(
        ss, 0.0, 2.0 - 0.5, 0.01, x0=traj.states[k_tau]
    )
    assert np.abs(tail.states - traj.states[k_tau:]).max() <= 1e-10


def test_short_noise_path_rejected():
    ss = dyn.assemble(triangle(), branch=0)
    path = dyn.NoisePath.zeros(10, 0.01)
    with pytest.raises(dyn.DynamicsError):
        dyn.propagate_stochastic(ss, path, 0.5, 2.0)


def test_gauge_invariance_of_angle_differences():
    ss = dyn.assemble(triangle(), branch=0)
    rng = np.random.default_rng(9)
    path = dyn.NoisePath.draw(rng, 60, 0.01)
    base = dyn.propagate_stochastic(ss, path, 0.6, 2.0)
    shifted_x0 = ss.x0.copy()
    shifted_x0[ss.n :] += 0.37
    shifted = dyn.propagate_stochastic(ss, path, 0.6, 2.0, x0=shifted_x0)
    d_base = base.angles()[:, 0] - base.angles()[:, 2]
    d_shift = shifted.angles()[:, 0] - shifted.angles()[:, 2]
    assert np.abs(d_base - d_shift).max() <= 1e-10
    # the constant offset itself survives unchanged
    assert np.abs((shifted.angles() - base.angles()) - 0.37).max() <= 1e-9


# ---------------------------------------------------------------------------
# Moment oracle and Euler-Maruyama cross-checks


def test_moments_sigma_zero_match_deterministic():
    ss = dyn.assemble(triangle(), branch=0, sigma=0.0)
    mean, cov = dyn.moment_evolution(ss, 0.7)
    det = dyn.propagate_deterministic(ss, 0.7, 0.7, 0.007)
    assert np.abs(mean - det.states[-1]).max() <= 1e-8
    assert np.abs(cov).max() <= 1e-10


def test_moment_mean_matches_analytic_exactly():
    # first moments of the analytic scheme have no discretization bias
    ss = dyn.assemble(triangle(), branch=0)
    mean, _ = dyn.moment_evolution(ss, 0.8)
    det = dyn.propagate_deterministic(ss, 0.8, 0.8, 0.01)
    assert np.abs(mean - det.states[-1]).max() <= 1e-8


def _scheme_moments(ss, tau, dt):
    """Exact mean and covariance of the per-step analytic scheme."""
    k_tau = round(tau / dt)
    e_mat, j_vec = dyn.step_operator(ss.a_fault, ss.forcing, dt)
    u = ss.gain
    vi, vj = ss.probe_plus, ss.probe_minus
    mean = ss.x0.copy()
    smat = np.outer(mean, mean)
    for _ in range(k_tau):
        vsv = smat[vi, vi] - smat[vi, vj] - smat[vj, vi] + smat[vj, vj]
        hat = smat + dt * vsv * np.outer(u, u)
        new_mean = e_mat @ mean + j_vec
        smat = (
            e_mat @ hat @ e_mat.T
            + np.outer(e_mat @ mean, j_vec)
            + np.outer(j_vec, e_mat @ mean)
            + np.outer(j_vec, j_vec)
        )
        mean = new_mean
    return mean, smat - np.outer(mean, mean)


def test_scheme_covariance_bias_is_first_order():
    ss = dyn.assemble(triangle(), branch=0)
    tau = 0.8
    _, cov_oracle = dyn.moment_evolution(ss, tau)
    errs = []
    for dt in (1e-2, 1e-3):
        mean, cov = _scheme_moments(ss, tau, dt)
        errs.append(np.abs(cov - cov_oracle).max())
    # halving-by-ten the step shrinks the covariance bias by ten
    assert errs[1] <= errs[0] / 5
    assert errs[0] <= 0.05 * np.abs(cov_oracle).max()


def test_euler_maruyama_strong_self_convergence():
    ss = dyn.assemble(two_bus(beta=1.5), branch=0)
    tau, horizon = 0.5, 0.5
    rng = np.random.default_rng(31)
    fine_dt = 1e-4
    n_fine = round(tau / fine_dt)
    errs = {}
    for _ in range(40):
        dw_fine = rng.standard_normal(n_fine) * np.sqrt(fine_dt)
        ref = dyn.propagate_euler_maruyama(
            ss, dyn.NoisePath(fine_dt, dw_fine), tau, horizon
        )
        for factor in (100, 10):
            dt = fine_dt * factor
            dw = dw_fine.reshape(-1, factor).sum(axis=1)
            coarse = dyn.propagate_euler_maruyama(
                ss, dyn.NoisePath(dt, dw), tau, horizon
            )
            err = np.abs(coarse.states[-1] - ref.states[-1]).max()
            errs.setdefault(factor, []).append(err)
    e100 = np.mean(errs[100])
    e10 = np.mean(errs[10])
    # strong error should drop roughly linearly with the step here
    assert e10 < e100 / 3


def test_analytic_and_em_agree_pathwise():
    # on the same Brownian path the two integrators converge to the same
    # solution, so at a fine step they should be close
    ss = dyn.assemble(two_bus(beta=1.5), branch=0)
    tau = 0.4
    dt = 1e-4
    rng = np.random.default_rng(12)
    path = dyn.NoisePath.draw(rng, round(tau / dt), dt)
    a = dyn.propagate_stochastic(ss, path, tau, tau)
    b = dyn.propagate_euler_maruyama(ss, path, tau, tau)
    assert np.abs(a.states[-1] - b.states[-1]).max() <= 2e-3


def test_moment_oracle_vs_mc_two_bus():
    ss = dyn.assemble(two_bus(beta=1.5), branch=0)
    tau, dt, n_paths = 0.5, 1e-3, 3000
    rng = np.random.default_rng(77)
    k_tau = round(tau / dt)
    finals = np.empty((n_paths, 4))
    for r in range(n_paths):
        path = dyn.NoisePath.draw(rng, k_tau, dt)
        finals[r] = dyn.propagate_stochastic(ss, path, tau, tau).states[-1]
    mean_o, cov_o = dyn.moment_evolution(ss, tau)
    se = finals.std(axis=0, ddof=1) / np.sqrt(n_paths)
    assert np.all(np.abs(finals.mean(axis=0) - mean_o) <= 4 * np.maximum(se, 1e-12))


def test_moment_zero_tau():
    ss = dyn.assemble(triangle(), branch=0)
    mean, cov = dyn.moment_evolution(ss, 0.0)
    assert np.array_equal(mean, ss.x0)
    assert not cov.any()

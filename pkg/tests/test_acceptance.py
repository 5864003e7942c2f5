"""End-to-end acceptance suite on the IEEE-118 case and toy grids.

Each test here checks one shipped behavior at its stated tolerance and
runtime budget, using independent oracles (high order integrators,
moment ODEs, exhaustive enumeration) rather than the implementation
under test. The suite is slower than the unit tests; budgets are
asserted inside the tests themselves.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from gridscreen import (
    CEParams,
    DiscreteDurations,
    RunConfig,
    ScenarioBatchEvaluator,
    ScenarioDistribution,
    assemble,
    cross_entropy_optimize,
    equilibrium_angles,
    moment_evolution,
    monte_carlo,
    nominal_distribution,
    propagate_deterministic,
    propagate_stochastic,
    run_screening,
)
from gridscreen.dynamics import NoisePath, fault_steps, step_operator
from gridscreen.rare import exceeds, importance_sample
from gridscreen.scenarios import defensive_mixture, sampling_stream
from toys import random_connected, triangle, two_bus


def test_nilpotency_suite(ieee118):
    """Every fault noise matrix squares to zero, within 1e-14 relative."""
    t0 = time.perf_counter()
    worst = 0.0
    grids = [
        ieee118,
        triangle(),
        two_bus(),
        random_connected(np.random.default_rng(7), n_buses=6, extra_branches=3),
    ]
    n_checked = 0
    for grid in grids:
        theta0 = equilibrium_angles(grid)
        for b in range(len(grid.branches)):
            ss = assemble(grid, b, theta0=theta0)
            g = ss.noise_matrix()
            denom = np.linalg.norm(g) ** 2
            assert denom > 0.0
            residual = np.linalg.norm(g @ g) / denom
            worst = max(worst, residual)
            n_checked += 1
    elapsed = time.perf_counter() - t0
    print(f"nilpotency: {n_checked} fault matrices, worst relative "
          f"residual {worst:.2e}, {elapsed:.2f}s")
    assert n_checked == 186 + 3 + 1 + 8
    assert worst < 1e-14
    assert elapsed < 5.0


def test_deterministic_propagator_fidelity(ieee118):
    """Angles match a high order adaptive reference to 1e-6 rad over 20 s."""
    from scipy.integrate import solve_ivp

    t0 = time.perf_counter()
    horizon, dt = 20.0, 0.01
    n_steps = int(round(horizon / dt))
    theta0 = equilibrium_angles(ieee118)
    rng = np.random.default_rng(118)
    branches = rng.choice(len(ieee118.branches), size=10, replace=False)
    taus = rng.uniform(0.5, 5.0, size=10)
    worst = 0.0
    for b, tau in zip(branches, taus):
        ss = assemble(ieee118, int(b), theta0=theta0)
        traj = propagate_deterministic(ss, float(tau), horizon, dt)
        k_tau = fault_steps(float(tau), dt, n_steps)
        t_switch = k_tau * dt
        times = traj.times
        a_fault, a0, forcing = ss.a_fault, ss.a0, ss.forcing

        first = solve_ivp(
            lambda _t, x: a_fault @ x + forcing,
            (0.0, t_switch),
            ss.x0,
            method="DOP853",
            rtol=1e-10,
            atol=1e-12,
            t_eval=times[: k_tau + 1],
        )
        assert first.success
        second = solve_ivp(
            lambda _t, x: a0 @ x + forcing,
            (t_switch, horizon),
            first.y[:, -1],
            method="DOP853",
            rtol=1e-10,
            atol=1e-12,
            t_eval=times[k_tau:],
        )
        assert second.success
        ref = np.vstack([first.y.T[:-1], second.y.T])
        err = np.abs(traj.angles - ref[:, ss.n:]).max()
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    print(f"deterministic fidelity: 10 faulted branches, worst angle "
          f"error {worst:.2e} rad, {elapsed:.1f}s")
    assert worst < 1e-6
    assert elapsed < 120.0


def _batch_analytic(ss, tau, dt, n_paths, rng):
    """Fault-window states at t=tau for a batch of analytic-propagator paths."""
    e_f, j_f = step_operator(ss.a_fault, ss.forcing, dt)
    x = np.tile(ss.x0, (n_paths, 1))
    root = np.sqrt(dt)
    for _ in range(int(round(tau / dt))):
        dw = rng.standard_normal(n_paths) * root
        probe = x[:, ss.probe_plus] - x[:, ss.probe_minus]
        x = (x + ss.gain * (probe * dw)[:, None]) @ e_f.T + j_f
    return x


def _batch_euler(ss, tau, dt, n_paths, rng):
    """Fault-window states at t=tau for a batch of Euler-Maruyama paths."""
    a_f = ss.a_fault
    x = np.tile(ss.x0, (n_paths, 1))
    root = np.sqrt(dt)
    for _ in range(int(round(tau / dt))):
        dw = rng.standard_normal(n_paths) * root
        probe = x[:, ss.probe_plus] - x[:, ss.probe_minus]
        x = x + (x @ a_f.T + ss.forcing) * dt + ss.gain * (probe * dw)[:, None]
    return x


def _assert_moments_match(label, states, mean_ref, cov_ref):
    n_paths = states.shape[0]
    mean_err = np.abs(states.mean(axis=0) - mean_ref)
    mean_se = states.std(axis=0, ddof=1) / np.sqrt(n_paths)
    assert np.all(mean_err <= 3.0 * mean_se + 1e-12), (
        f"{label}: mean off by {(mean_err / np.maximum(mean_se, 1e-300)).max():.2f} SE"
    )
    centered = states - states.mean(axis=0)
    prods = centered[:, :, None] * centered[:, None, :]
    cov_err = np.abs(prods.mean(axis=0) - cov_ref)
    cov_se = prods.std(axis=0, ddof=1) / np.sqrt(n_paths)
    assert np.all(cov_err <= 3.0 * cov_se + 1e-12), (
        f"{label}: covariance off by "
        f"{(cov_err / np.maximum(cov_se, 1e-300)).max():.2f} SE"
    )
    print(f"{label}: worst mean deviation "
          f"{(mean_err / np.maximum(mean_se, 1e-300)).max():.2f} SE, worst "
          f"covariance deviation {(cov_err / np.maximum(cov_se, 1e-300)).max():.2f} SE")


def test_stochastic_moment_fidelity():
    """Path moments at t = tau = 1 s match the moment-ODE oracle to 3 SE."""
    t0 = time.perf_counter()
    tau, n_paths = 1.0, 10**4
    ss = assemble(triangle(), 0, sigma=0.4)
    mean_ref, cov_ref = moment_evolution(ss, tau)

    states = _batch_analytic(ss, tau, 1e-3, n_paths, np.random.default_rng(31))
    _assert_moments_match("analytic paths (dt=1e-3)", states, mean_ref, cov_ref)

    states = _batch_euler(ss, tau, 1e-4, n_paths, np.random.default_rng(32))
    _assert_moments_match("euler-maruyama (dt=1e-4)", states, mean_ref, cov_ref)

    elapsed = time.perf_counter() - t0
    print(f"moment fidelity: {elapsed:.1f}s")
    assert elapsed < 300.0


def test_deterministic_limit_sigma_zero(ieee118):
    """With sigma = 0 the stochastic propagator collapses to the ODE flow."""
    horizon, dt = 20.0, 0.01
    n_steps = int(round(horizon / dt))
    rng = np.random.default_rng(5)
    cases = [(ieee118, 42, 2.37), (triangle(), 1, 0.8)]
    for grid, branch, tau in cases:
        ss = assemble(grid, branch, sigma=0.0)
        path = NoisePath.draw(rng, n_steps, dt)
        stoch = propagate_stochastic(ss, path, tau, horizon)
        det = propagate_deterministic(ss, tau, horizon, dt)
        gap = np.abs(stoch.states - det.states).max()
        print(f"sigma=0 gap on {len(grid.branches)}-branch grid: {gap:.2e}")
        assert gap < 1e-10

    # a zero increment path must collapse the same way at any sigma
    ss = assemble(ieee118, 42)
    zeros = NoisePath.zeros(n_steps, dt)
    stoch = propagate_stochastic(ss, zeros, 2.37, horizon)
    det = propagate_deterministic(ss, 2.37, horizon, dt)
    assert np.abs(stoch.states - det.states).max() < 1e-10


def test_estimator_correctness_enumerable_toy():
    """MC, CE-IS, and exhaustive enumeration agree on a discrete toy."""
    t0 = time.perf_counter()
    grid = triangle()
    ev = ScenarioBatchEvaluator(grid, dt=0.01, horizon=20.0, sigma_scale=0.0,
                                master_seed=2024)
    values = np.array([0.5, 1.0, 2.0, 4.0, 8.0])
    probs = np.array([
        [0.40, 0.30, 0.15, 0.10, 0.05],
        [0.10, 0.20, 0.40, 0.20, 0.10],
        [0.05, 0.10, 0.15, 0.30, 0.40],
    ])
    weights = np.array([0.5, 0.3, 0.2])
    nominal = ScenarioDistribution(
        weights=weights, durations=DiscreteDurations(values=values, probs=probs))

    # exhaustive enumeration over the 15 scenario atoms
    all_b = np.repeat(np.arange(3), len(values))
    all_t = np.tile(values, 3)
    scores = np.asarray(ev(all_b, all_t, 0))
    mass = (weights[:, None] * probs).ravel()
    t_max = scores.max()
    assert t_max > 0.0

    for gamma in (0.0, 0.5 * t_max):
        exact = float(mass[exceeds(scores, gamma)].sum())
        assert 0.0 < exact < 1.0

        mc = monte_carlo(ev, nominal, gamma, 20000, 2024)
        mc_gap = abs(mc.estimate - exact)
        assert mc_gap <= 3.0 * mc.stderr + 1e-12, (
            f"MC off exact by {mc_gap:.3g} at gamma={gamma:.3g} "
            f"(3 SE = {3 * mc.stderr:.3g})"
        )

        params = CEParams()
        fit, _trace, n_opt, _warn = cross_entropy_optimize(
            ev, nominal, gamma, params, 2000, 2024)
        proposal = defensive_mixture(fit, nominal, params.defense)
        ce = importance_sample(ev, nominal, proposal, gamma, 20000, 2024,
                               iteration=params.max_iters + 1)
        ce_gap = abs(ce.estimate - exact)
        assert ce_gap <= 3.0 * ce.stderr + 1e-12, (
            f"CE-IS off exact by {ce_gap:.3g} at gamma={gamma:.3g} "
            f"(3 SE = {3 * ce.stderr:.3g})"
        )
        print(f"gamma={gamma:.3f}: exact={exact:.4f} "
              f"mc={mc.estimate:.4f}+-{mc.stderr:.4f} "
              f"ce={ce.estimate:.4f}+-{ce.stderr:.4f} (opt {n_opt})")
    elapsed = time.perf_counter() - t0
    print(f"enumerable toy: {elapsed:.1f}s")
    assert elapsed < 60.0


def test_ce_efficiency_vs_mc(ieee118):
    """CE-IS matches MC precision with a quarter of the evaluations.

    One nominal Monte Carlo run prices every threshold level; each CE
    run gets a trajectory budget at most a quarter of the MC run's and
    must reach the MC standard error at its level, with both estimates
    agreeing within three combined standard errors.
    """
    t0 = time.perf_counter()
    cfg = RunConfig()
    ev = ScenarioBatchEvaluator.from_config(ieee118, cfg)
    nominal = nominal_distribution(len(ieee118.branches), rate=cfg.scenario_rate,
                                   no_fault=cfg.scenario_no_fault_mass)

    n_mc = 160000
    rng = sampling_stream(cfg.master_seed, 0)
    mc_branches, mc_taus = nominal.sample_arrays(rng, n_mc)
    mc_scores = np.asarray(ev(mc_branches, mc_taus, 0))

    budgets = {0.0: (4000, 40000), 0.5: (4000, 40000),
               5.0: (1000, 16000), 10.0: (1000, 16000)}
    params = CEParams()
    failures = []
    for gamma, (n_per_iter, budget) in budgets.items():
        hits = exceeds(mc_scores, gamma)
        q_mc = float(hits.mean())
        se_mc = float(np.sqrt(q_mc * (1.0 - q_mc) / n_mc))

        fit, _trace, n_opt, _warn = cross_entropy_optimize(
            ev, nominal, gamma, params, n_per_iter, cfg.master_seed)
        proposal = defensive_mixture(fit, nominal, params.defense)
        ce = importance_sample(ev, nominal, proposal, gamma, budget - n_opt,
                               cfg.master_seed, iteration=params.max_iters + 1)
        n_ce = n_opt + ce.n_samples
        gap = abs(ce.estimate - q_mc)
        combined = float(np.sqrt(se_mc**2 + ce.stderr**2))
        ok_se = ce.stderr <= se_mc
        ok_evals = 4 * n_ce <= n_mc
        ok_gap = gap <= 3.0 * combined
        print(f"gamma={gamma:>4}: mc={q_mc:.5f}+-{se_mc:.1e} "
              f"ce={ce.estimate:.5f}+-{ce.stderr:.1e} "
              f"evals {n_ce} vs {n_mc} ({n_mc / n_ce:.1f}x) "
              f"se {'ok' if ok_se else 'FAIL'} "
              f"evals {'ok' if ok_evals else 'FAIL'} "
              f"agreement {'ok' if ok_gap else 'FAIL'}")
        if not (ok_se and ok_evals and ok_gap):
            failures.append(
                f"gamma={gamma}: se_ce={ce.stderr:.2e} vs se_mc={se_mc:.2e}, "
                f"evals {n_ce} vs {n_mc}, gap {gap:.2e} vs 3SE {3 * combined:.2e}"
            )
    elapsed = time.perf_counter() - t0
    print(f"ce efficiency experiment: {elapsed / 60:.1f} min")
    assert elapsed < 1800.0
    if failures:
        pytest.fail("CE did not reach MC precision on a quarter budget:\n"
                    + "\n".join(failures))


def test_stochastic_vs_deterministic_risk_landscape(ieee118):
    """Noise strictly enlarges the emergency set and the overloading set."""
    t0 = time.perf_counter()
    cfg = RunConfig()
    ev = ScenarioBatchEvaluator.from_config(ieee118, cfg)
    stoch = run_screening(ieee118, cfg, evaluator=ev)

    det_cfg = replace(cfg, sigma_scale=0.0)
    det = run_screening(ieee118, det_cfg, evaluator=ev.sibling(0.0))

    def emergency(report):
        return {e["branch"] for e in report.elements if e["zone"] == "emergency"}

    def positive(report):
        return {e["branch"] for e in report.elements if e["q_any"] > 0.0}

    em_s, em_d = emergency(stoch), emergency(det)
    pos_s, pos_d = positive(stoch), positive(det)

    def pair(report, b):
        e = report.element(b)
        return f"{e['from_bus']}-{e['to_bus']}"

    print(f"emergency zones: stochastic {len(em_s)}, deterministic {len(em_d)}")
    print(f"positive overload probability: stochastic {len(pos_s)}, "
          f"deterministic {len(pos_d)}")
    print("stochastic emergency buses:",
          sorted(pair(stoch, b) for b in em_s))
    print("deterministic emergency buses:",
          sorted(pair(det, b) for b in em_d))
    print("top faulted:", [r["branch"] for r in stoch.faulted_ranking[:5]])
    print("top vulnerable:",
          [pair(stoch, r["branch"]) for r in stoch.vulnerable_ranking[:5]])

    assert em_d < em_s, "emergency set must strictly grow with noise"
    assert len(pos_d) < len(pos_s), "overloading set must strictly grow with noise"
    print(f"risk landscape: {time.perf_counter() - t0:.0f}s")


def _pruned_doc(report):
    doc = report.to_doc()
    md = doc["metadata"]
    for key in ("timings", "created", "workers", "config_hash"):
        md.pop(key, None)
    md["config"].pop("workers", None)
    return doc


def test_worker_count_determinism(ieee118):
    """Reports are identical across worker counts, timing metadata aside."""
    cfg = replace(RunConfig(), screen_n=4000, ce_n_per_iter=1000)

    t1 = time.perf_counter()
    one = run_screening(ieee118, cfg)
    t1 = time.perf_counter() - t1

    t2 = time.perf_counter()
    two = run_screening(ieee118, replace(cfg, workers=2))
    t2 = time.perf_counter() - t2

    doc1, doc2 = _pruned_doc(one), _pruned_doc(two)
    assert doc1 == doc2, "screen runs diverged across worker counts"
    print(f"determinism: 1 worker {t1:.1f}s, 2 workers {t2:.1f}s")
    assert t2 < 2.0 * t1 + 2.0


def test_linear_sweep_scaling():
    """Sweep time grows linearly with branch count at fixed bus count."""
    rng = np.random.default_rng(2024)
    per_branch = 300
    sizes = []
    times = []
    for extra in (0, 40, 176):
        grid = random_connected(np.random.default_rng(11), n_buses=11,
                                extra_branches=extra)
        nb = len(grid.branches)
        n = per_branch * nb
        branches = rng.integers(0, nb, size=n)
        taus = rng.exponential(10.0, size=n).clip(0.0, 20.0)
        t0 = time.perf_counter()
        ev = ScenarioBatchEvaluator(grid, dt=0.01, horizon=20.0,
                                    sigma_scale=0.04, master_seed=2024)
        ev(branches, taus, 0)
        times.append(time.perf_counter() - t0)
        sizes.append(nb)
    slope = np.polyfit(np.log(sizes), np.log(times), 1)[0]
    detail = ", ".join(f"{b} branches {t:.2f}s" for b, t in zip(sizes, times))
    print(f"sweep scaling: {detail}; log-log slope {slope:.3f}")
    assert 0.8 <= slope <= 1.3

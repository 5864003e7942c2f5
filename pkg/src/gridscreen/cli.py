"""Command-line front end: parse, simulate, estimate, screen, serve."""

import dataclasses
import json
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, RunConfig, load_config, make_config
from .dynamics import (
    DynamicsError,
    NoisePath,
    assemble,
    propagate_deterministic,
    propagate_stochastic,
)
from .grid import GridError, load_grid
from .overload import flow_ratios, line_overload_times
from .rare import (
    CEParams,
    DegenerateEliteError,
    EstimatorError,
    estimate_overload_probability,
)
from .scenarios import ScenarioError, nominal_distribution, request_noise_stream
from .screening import (
    ScreeningError,
    canonical_json,
    emit_report,
    grid_document,
    run_screening,
)
from .sweep import ScenarioBatchEvaluator, SweepError

_USER_ERRORS = (
    ConfigError,
    DynamicsError,
    EstimatorError,
    GridError,
    ScenarioError,
    ScreeningError,
    SweepError,
)

_FLAG_HELP = {
    "grid_gen_inertia": "Inertia assigned to generator buses.",
    "grid_gen_damping": "Damping assigned to generator buses.",
    "grid_load_inertia_scale": "Load/condenser inertia as a fraction of the generator median.",
    "grid_limit_margin": "Thermal limit as a multiple of the equilibrium flow.",
    "grid_limit_floor": "Smallest flow magnitude the margin applies to.",
    "dt": "Integration step in seconds.",
    "horizon": "Simulated window length in seconds.",
    "fault_retained_fraction": "Susceptance fraction kept on the faulted branch.",
    "sigma_scale": "Noise amplitude as a multiple of the faulted susceptance.",
    "scenario_rate": "Rate of the exponential fault-duration law.",
    "scenario_no_fault_mass": "Nominal probability of drawing no fault at all.",
    "estimate_n": "Final sample size for the estimate command.",
    "ce_n_per_iter": "Scenarios per cross-entropy optimization iteration.",
    "ce_rho": "Elite quantile for cross-entropy updates.",
    "ce_smoothing": "Fixed smoothing weight for proposal updates.",
    "ce_mixing": "Mixing of the update toward the previous proposal.",
    "ce_tol": "Relative proposal change that stops the optimization.",
    "ce_max_iters": "Cross-entropy iteration cap.",
    "ce_elite_min": "Smallest usable elite set.",
    "screen_n": "Scenarios in the final screening sample.",
    "t_star": "Critical overload duration in seconds.",
    "zone_warning": "Probability bound between safe and warning zones.",
    "zone_emergency": "Probability bound between warning and emergency zones.",
    "top_k": "Scenario count used by the vulnerability ranking.",
    "tau_bin_width": "Duration bin width for the risk curves, seconds.",
    "workers": "Worker threads for the sweep.",
    "batch_size": "Scenarios per propagation batch.",
    "master_seed": "Root seed; fixes every random draw.",
    "server_sync_limit": "Largest what-if sample answered synchronously.",
    "server_queue_limit": "Pending what-if jobs before the service pushes back.",
}


def _config_flags(fn):
    """Attach one option per run-configuration field plus --config."""
    for f in reversed(dataclasses.fields(RunConfig)):
        flag = "--" + f.name.replace("_", "-")
        kind = int if f.type == "int" else float
        fn = click.option(
            flag, f.name, type=kind, default=None,
            help=_FLAG_HELP.get(f.name, ""),
        )(fn)
    return click.option(
        "--config", "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="TOML or JSON settings file; explicit flags override it.",
    )(fn)


def _build_config(config_path, flags):
    try:
        base = load_config(config_path) if config_path else None
        return make_config(
            {k: v for k, v in flags.items() if v is not None}, base=base
        )
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc


def _load_grid(path, config):
    try:
        return load_grid(path, config.grid_defaults())
    except GridError as exc:
        raise click.ClickException(f"{path}: {exc}") from exc


def _fail_on(exc):
    raise click.ClickException(str(exc)) from exc


def _write_json(path, doc):
    Path(path).write_text(canonical_json(doc))


@click.group()
def main():
    """Dynamic contingency screening for transmission grids."""


@main.command()
@click.argument("grid_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", type=click.Path(dir_okay=False), default=None,
              help="Write the topology JSON here instead of stdout.")
@_config_flags
def parse(grid_path, out, config_path, **flags):
    """Validate a grid case file and emit its topology as JSON."""
    config = _build_config(config_path, flags)
    grid = _load_grid(grid_path, config)
    text = canonical_json(grid_document(grid))
    if out:
        Path(out).write_text(text)
        click.echo(
            f"{grid_path}: {len(grid.buses)} buses, {len(grid.branches)} "
            f"branches -> {out}"
        )
    else:
        click.echo(text, nl=False)


@main.command()
@click.argument("grid_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--branch", "-b", required=True, type=int,
              help="Index of the faulted branch.")
@click.option("--tau", required=True, type=float,
              help="Fault duration in seconds; snapped to the step grid.")
@click.option("--deterministic", is_flag=True,
              help="Drop the noise term and propagate the mean path.")
@click.option("--request-seed", type=int, default=0, show_default=True,
              help="Sub-seed for the noise draw of this run.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False),
              help="Write the trajectory as columnar CSV.")
@click.option("--dump", "dump_path", type=click.Path(dir_okay=False),
              help="Write the trajectory as a compressed binary dump.")
@_config_flags
def simulate(grid_path, branch, tau, deterministic, request_seed,
             csv_path, dump_path, config_path, **flags):
    """Propagate a single fault scenario and report its overloads."""
    config = _build_config(config_path, flags)
    grid = _load_grid(grid_path, config)
    n_branches = len(grid.branches)
    if not 0 <= branch < n_branches:
        raise click.ClickException(
            f"branch {branch} out of range for {n_branches} branches"
        )
    if tau < 0:
        raise click.ClickException("tau must be nonnegative")
    try:
        system = assemble(
            grid, branch,
            sigma_scale=config.sigma_scale,
            retained=config.fault_retained_fraction,
        )
        if deterministic:
            traj = propagate_deterministic(system, tau, config.horizon, config.dt)
        else:
            rng = request_noise_stream(config.master_seed, request_seed, 0)
            n_steps = int(round(config.horizon / config.dt))
            path = NoisePath.draw(rng, n_steps, config.dt)
            traj = propagate_stochastic(system, path, tau, config.horizon)
        seconds = line_overload_times(traj, grid)
        peak = float(np.max(flow_ratios(traj, grid)))
    except _USER_ERRORS as exc:
        _fail_on(exc)

    snapped = round(tau / config.dt) * config.dt
    mode = "deterministic" if deterministic else "stochastic"
    click.echo(
        f"fault on branch {branch}, tau {min(snapped, config.horizon):g} s "
        f"({mode}), horizon {config.horizon:g} s"
    )
    click.echo(f"peak flow ratio {peak:.4f}")
    over = [(e, seconds[e]) for e in grid.monitored if seconds[e] > 0]
    if over:
        click.echo("overloaded monitored branches:")
        for e, s in sorted(over, key=lambda item: -item[1]):
            br = grid.branches[e]
            click.echo(
                f"  branch {e} ({br.from_bus}-{br.to_bus}): {s:.3f} s above limit"
            )
    else:
        click.echo("no monitored branch exceeded its limit")

    if csv_path:
        _write_trajectory_csv(csv_path, traj, grid)
        click.echo(f"trajectory CSV -> {csv_path}")
    if dump_path:
        with open(dump_path, "wb") as fh:
            np.savez_compressed(
                fh,
                times=traj.times,
                angles=traj.angles(),
                frequencies=traj.frequencies(),
            )
        click.echo(f"trajectory dump -> {dump_path}")


def _write_trajectory_csv(path, traj, grid):
    ids = [b.id for b in grid.buses]
    header = ",".join(
        ["t"]
        + [f"theta_{i}" for i in ids]
        + [f"omega_{i}" for i in ids]
    )
    table = np.column_stack([traj.times, traj.angles(), traj.frequencies()])
    np.savetxt(path, table, delimiter=",", header=header, comments="")


@main.command()
@click.argument("grid_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--gamma", "-g", "gammas", multiple=True, type=float, required=True,
              help="Overload-seconds threshold; repeat for a list, ascending.")
@click.option("--method", type=click.Choice(["mc", "ce"]), default="ce",
              show_default=True, help="Plain Monte Carlo or cross-entropy.")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False),
              help="Write per-iteration proposal parameters as JSON.")
@click.option("--out", "-o", type=click.Path(dir_okay=False),
              help="Write the estimates as JSON.")
@_config_flags
def estimate(grid_path, gammas, method, trace_path, out, config_path, **flags):
    """Estimate overload probabilities for a list of thresholds."""
    config = _build_config(config_path, flags)
    gammas = list(gammas)
    if gammas != sorted(gammas):
        raise click.ClickException("gamma list must be ascending")
    if gammas[0] < 0:
        raise click.ClickException("gamma must be nonnegative")
    grid = _load_grid(grid_path, config)
    try:
        evaluator = ScenarioBatchEvaluator.from_config(grid, config)
        nominal = nominal_distribution(
            len(grid.branches),
            rate=config.scenario_rate,
            no_fault=config.scenario_no_fault_mass,
        )
    except _USER_ERRORS as exc:
        _fail_on(exc)
    params = CEParams(
        rho=config.ce_rho,
        smoothing=config.ce_smoothing,
        mixing=config.ce_mixing,
        tol=config.ce_tol,
        max_iters=config.ce_max_iters,
        elite_min=config.ce_elite_min,
    )

    rows = []
    traces = []
    click.echo(f"{'gamma':>8}  {'estimate':>12}  {'stderr':>12}  "
               f"{'ess':>10}  {'evals':>8}")
    for gamma in gammas:
        try:
            result = estimate_overload_probability(
                evaluator, nominal, gamma, config.estimate_n,
                config.master_seed, method=method,
                ce_params=params, ce_n_per_iter=config.ce_n_per_iter,
            )
        except DegenerateEliteError as exc:
            raise click.ClickException(
                f"gamma {gamma:g}: {exc}; rerun with --method mc"
            ) from exc
        except _USER_ERRORS as exc:
            _fail_on(exc)
        click.echo(
            f"{gamma:8g}  {result.estimate:12.6g}  {result.stderr:12.3g}  "
            f"{result.ess:10.1f}  {result.n_evaluations:8d}"
        )
        for note in result.warnings:
            click.echo(f"  note: {note}", err=True)
        rows.append({
            "gamma": float(gamma),
            "estimate": float(result.estimate),
            "stderr": float(result.stderr),
            "ess": float(result.ess),
            "n_samples": int(result.n_samples),
            "n_evaluations": int(result.n_evaluations),
            "method": result.method,
            "warnings": list(result.warnings),
        })
        traces.append({
            "gamma": float(gamma),
            "iterations": [
                {
                    "iteration": it.iteration,
                    "gamma_t": it.gamma_t,
                    "elite_count": it.elite_count,
                    "change": it.change,
                    "no_fault": it.no_fault,
                    "weights": list(it.weights),
                    "duration_params": np.asarray(it.duration_params).tolist(),
                }
                for it in result.trace
            ],
        })

    if out:
        _write_json(out, {
            "schema_version": 1,
            "grid": {"path": grid_path, "n_branches": len(grid.branches)},
            "method": method,
            "seed": config.master_seed,
            "results": rows,
        })
        click.echo(f"estimates -> {out}")
    if trace_path:
        _write_json(trace_path, {"schema_version": 1, "traces": traces})
        click.echo(f"proposal trace -> {trace_path}")


@main.command()
@click.argument("grid_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "-o", "out_dir", type=click.Path(file_okay=False),
              default="reports", show_default=True,
              help="Directory that receives the report files.")
@click.option("--format", "formats", multiple=True,
              type=click.Choice(["json", "csv"]), default=("json", "csv"),
              show_default=True, help="Report formats to emit.")
@_config_flags
def screen(grid_path, out_dir, formats, config_path, **flags):
    """Run the full contingency sweep and write a ranked risk report."""
    config = _build_config(config_path, flags)
    grid = _load_grid(grid_path, config)
    try:
        report = run_screening(grid, config)
        paths = emit_report(
            report, out_dir, formats=tuple(dict.fromkeys(formats))
        )
    except _USER_ERRORS as exc:
        _fail_on(exc)

    est = report.estimate
    click.echo(
        f"Q(T*={report.policy.t_star:g}s) = {est['estimate']:.6g} "
        f"+/- {est['stderr']:.3g}  "
        f"[{est['method']}, {est['n_evaluations']} evaluations]"
    )
    zones = report.zones
    counts = {z: zones.count(z) for z in ("emergency", "warning", "safe")}
    click.echo(
        f"zones: {counts['emergency']} emergency, {counts['warning']} warning, "
        f"{counts['safe']} safe of {len(zones)} monitored"
    )
    if report.metadata["degraded"]:
        click.secho(
            f"degraded run: {report.metadata['n_failed']} scenarios failed",
            err=True, fg="yellow",
        )
    for note in report.metadata["warnings"]:
        click.echo(f"note: {note}", err=True)

    def _branch_label(e):
        br = grid.branches[e]
        return f"{e} ({br.from_bus}-{br.to_bus})"

    top_faults = [r["branch"] for r in report.faulted_ranking[:5]]
    top_vuln = [r["branch"] for r in report.vulnerable_ranking[:5]]
    click.echo("top faulted lines: "
               + ", ".join(_branch_label(e) for e in top_faults))
    click.echo("top vulnerable elements: "
               + ", ".join(_branch_label(e) for e in top_vuln))
    for p in paths:
        click.echo(f"wrote {p}")


@main.command()
@click.argument("grid_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, type=int, show_default=True)
@click.option("--report", "report_path",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="Serve this previously emitted report instead of "
                   "screening at startup.")
@_config_flags
def serve(grid_path, host, port, report_path, config_path, **flags):
    """Start the JSON API over a screening run."""
    import uvicorn

    from .server import create_app

    config = _build_config(config_path, flags)
    grid = _load_grid(grid_path, config)
    try:
        app = create_app(grid, config, report_path=report_path)
    except _USER_ERRORS as exc:
        _fail_on(exc)
    click.echo(f"serving {grid_path} on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()

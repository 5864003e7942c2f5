"""Contingency screening sweeps: risk matrices, rankings, reports.

The orchestration here glues the scenario evaluator to the rare-event
estimators and reduces one large importance-weighted sample into the
operator-facing artifacts: a per-(faulted, monitored) overload probability
matrix, duration-resolved risk curves, zone labels, and two rankings. All
reductions are plain weighted averages over the estimator's final sample,
so the report inherits the estimator's reproducibility: a seed and a
configuration determine every number byte for byte, timing metadata aside.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .overload import SafetyPolicy
from .rare import (
    CEParams,
    DegenerateEliteError,
    estimate_overload_probability,
    exceeds,
    likelihood_ratios,
    monte_carlo,
)
from .scenarios import nominal_distribution, sampling_stream
from .sweep import ScenarioBatchEvaluator

REPORT_SCHEMA_VERSION = 1

# Duration cells whose effective sample size falls below this carry too
# little information to classify; they stay in the curve output but are
# excluded when taking a curve's peak.
CURVE_MIN_ESS = 10.0


class ScreeningError(Exception):
    """Invalid screening request or inconsistent report data."""


@dataclass(frozen=True)
class RiskReport:
    """Everything the operator-facing surfaces consume.

    ``q_matrix`` rows follow branch order (every candidate fault location),
    columns follow ``monitored``; entries are overload probabilities at the
    critical duration conditioned on the fault location. ``curves`` rows
    also follow branch order: row ``a`` holds the probability that some
    monitored element overloads given a fault on ``a``, per duration bin,
    NaN where the bin received no sample mass. ``elements`` and the
    rankings are plain dicts, ready for serialization.
    """

    schema_version: int
    policy: SafetyPolicy
    grid_info: dict
    estimate: dict
    monitored: tuple
    q_matrix: np.ndarray
    q_stderr: np.ndarray
    elements: tuple
    curve_bin_width: float
    curve_ess: np.ndarray
    curves: np.ndarray
    faulted_ranking: tuple
    vulnerable_ranking: tuple
    metadata: dict

    @property
    def zones(self):
        return tuple(e["zone"] for e in self.elements)

    def element(self, branch):
        """Per-element summary dict for a monitored branch index."""
        for entry in self.elements:
            if entry["branch"] == branch:
                return entry
        raise ScreeningError(f"branch {branch} is not monitored")

    def to_doc(self):
        """Plain-JSON document for this report, schema-versioned."""
        doc = {
            "schema_version": self.schema_version,
            "policy": {
                "t_star": self.policy.t_star,
                "warning": self.policy.warning,
                "emergency": self.policy.emergency,
            },
            "grid": dict(self.grid_info),
            "estimate": dict(self.estimate),
            "monitored": list(self.monitored),
            "matrix": {
                "q": self.q_matrix,
                "stderr": self.q_stderr,
            },
            "elements": [dict(e) for e in self.elements],
            "curves": {
                "bin_width": self.curve_bin_width,
                "n_bins": int(self.curves.shape[1]),
                "ess": self.curve_ess,
                "q": self.curves,
            },
            "rankings": {
                "faulted": [dict(e) for e in self.faulted_ranking],
                "vulnerable": [dict(e) for e in self.vulnerable_ranking],
            },
            "metadata": self.metadata,
        }
        return _plain(doc)


def _plain(value):
    """Recursively convert to JSON-safe builtins; NaN becomes null."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        out = float(value)
        return None if math.isnan(out) else out
    return value


def canonical_json(doc):
    """Stable byte form: sorted keys, two-space indent, no bare NaN."""
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def report_fingerprint(report):
    """Content hash of a report with volatile metadata stripped.

    Two runs with the same seed and config must agree on this value even
    though their timing metadata differs.
    """
    doc = report.to_doc()
    meta = doc.get("metadata", {})
    doc["metadata"] = {
        k: v for k, v in meta.items() if k not in ("timings", "created")
    }
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def config_hash(config):
    """Stable hash of a run configuration, recorded for provenance."""
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def grid_document(grid):
    """Topology and dynamic parameters as a plain JSON-ready document.

    Shared by the parse command and the topology endpoint so both emit
    the same shape.
    """
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "n_buses": len(grid.buses),
        "n_branches": len(grid.branches),
        "reference": int(grid.reference),
        "monitored": [int(m) for m in grid.monitored],
        "buses": [
            {
                "id": int(b.id),
                "inertia": float(b.inertia),
                "damping": float(b.damping),
                "injection": float(b.injection),
                "kind": b.kind,
            }
            for b in grid.buses
        ],
        "branches": [
            {
                "index": e,
                "from_bus": int(br.from_bus),
                "to_bus": int(br.to_bus),
                "susceptance": float(br.susceptance),
                "limit": float(br.limit),
                "transformer": bool(br.transformer),
            }
            for e, br in enumerate(grid.branches)
        ],
        "meta": _plain(dict(grid.meta)),
    }


def _array1(values):
    return np.array(
        [math.nan if v is None else float(v) for v in values], dtype=float
    )


def _array2(rows, width):
    out = np.full((len(rows), int(width)), math.nan)
    for i, row in enumerate(rows):
        if len(row) != out.shape[1]:
            raise ValueError("ragged matrix rows")
        for j, v in enumerate(row):
            if v is not None:
                out[i, j] = float(v)
    return out


def report_from_doc(doc):
    """Rebuild a RiskReport from its JSON document."""
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ScreeningError("report document has no schema_version")
    version = doc["schema_version"]
    if not isinstance(version, int) or not 1 <= version <= REPORT_SCHEMA_VERSION:
        raise ScreeningError(f"unsupported report schema version {version!r}")
    try:
        pol = doc["policy"]
        monitored = tuple(int(b) for b in doc["monitored"])
        curves = doc["curves"]
        return RiskReport(
            schema_version=version,
            policy=SafetyPolicy(
                t_star=float(pol["t_star"]),
                warning=float(pol["warning"]),
                emergency=float(pol["emergency"]),
            ),
            grid_info=dict(doc["grid"]),
            estimate=dict(doc["estimate"]),
            monitored=monitored,
            q_matrix=_array2(doc["matrix"]["q"], len(monitored)),
            q_stderr=_array2(doc["matrix"]["stderr"], len(monitored)),
            elements=tuple(dict(e) for e in doc["elements"]),
            curve_bin_width=float(curves["bin_width"]),
            curve_ess=_array2(curves["ess"], curves["n_bins"]),
            curves=_array2(curves["q"], curves["n_bins"]),
            faulted_ranking=tuple(dict(e) for e in doc["rankings"]["faulted"]),
            vulnerable_ranking=tuple(
                dict(e) for e in doc["rankings"]["vulnerable"]
            ),
            metadata=dict(doc["metadata"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScreeningError(f"malformed report document: {exc}")


def load_report(path):
    """Read back a JSON report written by ``emit_report``."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScreeningError(f"{path}: invalid report JSON ({exc})")
    return report_from_doc(doc)


def rank_faulted_lines(branches, weights, caused, seconds, n_branches):
    """Rank fault locations by weighted frequency of causing overloads.

    ``caused`` flags samples whose fault held some monitored element over
    its limit for at least the critical duration; ``seconds`` carries each
    sample's global overload time, used (weighted) as the first tie-break.
    Remaining ties fall to the branch index, so a run with no overloads
    ranks branches in identity order. Returns ``(order, frequency,
    overload_seconds)`` with the arrays indexed by branch.
    """
    branches = np.asarray(branches)
    weights = np.asarray(weights, dtype=float)
    n = branches.size
    freq = np.zeros(n_branches)
    total = np.zeros(n_branches)
    valid = branches >= 0
    np.add.at(freq, branches[valid], (weights * caused)[valid])
    np.add.at(total, branches[valid], (weights * seconds)[valid])
    if n:
        freq /= n
        total /= n
    order = np.lexsort((np.arange(n_branches), -total, -freq))
    return order, freq, total


def rank_vulnerable_elements(line_hits, scores, q_any, top_k):
    """Rank monitored elements by recurrence among top-risk scenarios.

    ``line_hits`` is the (elements, samples) overload indicator at the
    critical duration and ``scores`` the per-sample global overload
    seconds; recurrence counts an element's hits within the ``top_k``
    highest-scoring samples. Ties fall back to the unconditional overload
    probability, then to element position. Returns ``(order, recurrence)``.
    """
    line_hits = np.asarray(line_hits)
    scores = np.asarray(scores)
    k = max(min(int(top_k), scores.size), 0)
    if k:
        top = np.argsort(-scores, kind="stable")[:k]
        recurrence = line_hits[:, top].sum(axis=1).astype(int)
    else:
        recurrence = np.zeros(line_hits.shape[0], dtype=int)
    order = np.lexsort(
        (np.arange(line_hits.shape[0]), -np.asarray(q_any), -recurrence)
    )
    return order, recurrence


def risk_curves(branches, taus, weights, caused, n_branches, bin_width,
                horizon):
    """Fault-conditional overload probability per duration bin.

    ``curves[a, b]`` is the self-normalized estimate of the probability
    that some monitored element stays overloaded past the critical
    duration, given a fault on branch ``a`` lasting a duration in bin
    ``b``; NaN where the cell received no sample mass. ``ess[a, b]`` is
    the cell's effective sample size. The last bin absorbs durations at
    or beyond the horizon. Callers pass fault samples only; no-fault
    draws have no duration to bin.
    """
    if bin_width <= 0 or horizon <= 0:
        raise ScreeningError("curve binning needs positive width and horizon")
    branches = np.asarray(branches, dtype=np.int64)
    taus = np.asarray(taus, dtype=float)
    weights = np.asarray(weights, dtype=float)
    caused = np.asarray(caused, dtype=float)
    n_bins = max(int(round(horizon / bin_width)), 1)
    idx = np.minimum((taus / bin_width).astype(int), n_bins - 1)
    cell = branches * n_bins + idx
    size = n_branches * n_bins
    wsum = np.bincount(cell, weights=weights, minlength=size)
    wsq = np.bincount(cell, weights=weights * weights, minlength=size)
    whit = np.bincount(cell, weights=weights * caused, minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        ess = np.where(wsq > 0, wsum * wsum / wsq, 0.0)
        curves = np.where(wsum > 0, whit / wsum, math.nan)
    return (curves.reshape(n_branches, n_bins),
            ess.reshape(n_branches, n_bins))


def curve_peaks(curves, ess, min_ess=CURVE_MIN_ESS):
    """Worst well-sampled curve value per row; zero when none qualify."""
    curves = np.asarray(curves)
    usable = (np.asarray(ess) >= min_ess) & np.isfinite(curves)
    return np.where(usable, curves, 0.0).max(axis=1, initial=0.0)


def run_screening(grid, config, evaluator=None):
    """Full dynamic contingency sweep: estimate, classify, rank, package.

    Runs the cross-entropy estimator at the critical duration, reuses its
    final importance sample to fill the per-fault overload probability
    matrix and the duration-resolved curves, classifies every monitored
    element by the worst entry of its matrix column, and assembles the
    fault and vulnerability rankings. A caller-supplied evaluator is reused (its
    cached fault operators make repeated runs cheap); otherwise one is
    built from the config. Deterministic given (seed, config) apart from
    the timing metadata. Scenarios that fail to propagate are scored as
    zero and counted; more than one percent of them flags the run as
    degraded.
    """
    t_start = time.perf_counter()
    n = int(config.screen_n)
    if n <= 0:
        raise ScreeningError("screening requires a positive scenario count")
    if config.t_star <= 0:
        raise ScreeningError("critical duration must be positive")
    if not 0 < config.zone_warning <= config.zone_emergency:
        raise ScreeningError("zone thresholds must satisfy 0 < warning <= emergency")
    policy = SafetyPolicy(
        t_star=config.t_star,
        warning=config.zone_warning,
        emergency=config.zone_emergency,
    )
    if evaluator is None:
        evaluator = ScenarioBatchEvaluator.from_config(grid, config)
    n_branches = len(grid.branches)
    nominal = nominal_distribution(
        n_branches,
        rate=config.scenario_rate,
        no_fault=config.scenario_no_fault_mass,
    )
    if not np.all(nominal.weights > 0):
        raise ScreeningError("nominal law must reach every branch")
    params = CEParams(
        rho=config.ce_rho,
        smoothing=config.ce_smoothing,
        mixing=config.ce_mixing,
        tol=config.ce_tol,
        max_iters=config.ce_max_iters,
        elite_min=config.ce_elite_min,
    )
    sweep_warning_mark = len(evaluator.warnings)
    t_setup = time.perf_counter()

    run_warnings = []
    try:
        result = estimate_overload_probability(
            evaluator,
            nominal,
            config.t_star,
            n,
            config.master_seed,
            method="ce",
            ce_params=params,
            ce_n_per_iter=config.ce_n_per_iter,
        )
        proposal = result.proposal
        final_tag = params.max_iters + 1
    except DegenerateEliteError:
        run_warnings.append(
            "cross-entropy found no overloading scenarios; the report "
            "falls back to plain Monte Carlo"
        )
        result = monte_carlo(
            evaluator, nominal, config.t_star, n, config.master_seed
        )
        proposal = nominal
        final_tag = 0
    t_estimate = time.perf_counter()

    sweep = evaluator.last_result
    if sweep is None or sweep.n_scenarios != n:
        raise ScreeningError("evaluator did not retain the final sweep")
    # Redraw the estimator's final sample; the stream contract makes this
    # an exact replay, which the estimate cross-check below enforces.
    rng = sampling_stream(config.master_seed, final_tag)
    branches, taus = proposal.sample_arrays(rng, n)
    weights = likelihood_ratios(nominal, proposal, branches, taus)
    caused = exceeds(sweep.global_seconds, config.t_star)
    check = float(np.where(caused, weights, 0.0).mean())
    if not math.isclose(
        min(max(check, 0.0), 1.0), result.estimate, rel_tol=1e-9, abs_tol=1e-12
    ):
        raise ScreeningError("final sample replay disagrees with the estimate")

    monitored = np.asarray(grid.monitored, dtype=int)
    n_monitored = monitored.size
    line_hits = exceeds(sweep.line_seconds[monitored], config.t_star)
    valid = branches >= 0
    weighted_hits = weights[:, None] * line_hits.T

    # Conditional matrix: scatter weighted hits by fault location, divide
    # by each location's nominal probability mass.
    q_sum = np.zeros((n_branches, n_monitored))
    q_sqsum = np.zeros((n_branches, n_monitored))
    np.add.at(q_sum, branches[valid], weighted_hits[valid])
    np.add.at(q_sqsum, branches[valid], (weights[:, None] * weighted_hits)[valid])
    phi = nominal.weights[:, None]
    mean = q_sum / (n * phi)
    mean_sq = q_sqsum / (n * phi * phi)
    q_matrix = mean.clip(0.0, 1.0)
    variance = ((mean_sq - mean * mean) * (n / max(n - 1, 1))).clip(min=0.0)
    q_stderr = np.sqrt(variance / n)

    # Marginal per-element risk decomposes over fault locations through
    # the nominal branch masses; mixing the published (clipped) matrix
    # keeps that identity exact in the report.
    q_any = (nominal.weights @ q_matrix).clip(0.0, 1.0) if n else np.zeros(0)

    curves, curve_ess = risk_curves(
        branches[valid],
        taus[valid],
        weights[valid],
        caused[valid],
        n_branches,
        config.tau_bin_width,
        config.horizon,
    )

    # A monitored element is only as safe as its worst contingency, so
    # its zone comes from the largest entry of its matrix column.
    q_max = q_matrix.max(axis=0)
    zones = [policy.zone(q) for q in q_max]

    elements = []
    for j, b in enumerate(monitored):
        br = grid.branches[b]
        elements.append(
            {
                "branch": int(b),
                "from_bus": int(br.from_bus),
                "to_bus": int(br.to_bus),
                "transformer": bool(br.transformer),
                "q_any": float(q_any[j]),
                "q_max": float(q_max[j]),
                "zone": zones[j],
            }
        )

    order_f, freq, total_seconds = rank_faulted_lines(
        branches, weights, caused, sweep.global_seconds, n_branches
    )
    faulted_ranking = []
    for a in order_f:
        br = grid.branches[a]
        faulted_ranking.append(
            {
                "branch": int(a),
                "from_bus": int(br.from_bus),
                "to_bus": int(br.to_bus),
                "frequency": float(freq[a]),
                "overload_seconds": float(total_seconds[a]),
            }
        )
    order_v, recurrence = rank_vulnerable_elements(
        line_hits, sweep.global_seconds, q_any, config.top_k
    )
    vulnerable_ranking = []
    for j in order_v:
        entry = elements[j]
        vulnerable_ranking.append(
            {
                "branch": entry["branch"],
                "from_bus": entry["from_bus"],
                "to_bus": entry["to_bus"],
                "transformer": entry["transformer"],
                "recurrence": int(recurrence[j]),
                "q_any": entry["q_any"],
                "zone": entry["zone"],
            }
        )

    n_failed = int(sweep.failed.sum())
    degraded = n_failed > 0.01 * n
    if degraded:
        run_warnings.append(
            f"degraded: {n_failed} of {n} final scenarios failed to propagate"
        )
    all_warnings = list(
        dict.fromkeys(
            [
                *run_warnings,
                *result.warnings,
                *evaluator.warnings[sweep_warning_mark:],
            ]
        )
    )
    trace = [
        {
            "iteration": int(it.iteration),
            "gamma_t": float(it.gamma_t),
            "elite_count": int(it.elite_count),
            "change": float(it.change),
            "no_fault": float(it.no_fault),
        }
        for it in result.trace
    ]
    estimate = {
        "gamma": float(result.gamma),
        "estimate": float(result.estimate),
        "stderr": float(result.stderr),
        "ess": float(result.ess),
        "n_samples": int(result.n_samples),
        "n_evaluations": int(result.n_evaluations),
        "method": result.method,
    }
    grid_info = {
        "n_buses": len(grid.buses),
        "n_branches": n_branches,
        "n_monitored": int(n_monitored),
        "reference": int(grid.reference),
    }
    t_done = time.perf_counter()
    metadata = {
        "seed": int(config.master_seed),
        "config_hash": config_hash(config),
        "config": dataclasses.asdict(config),
        "backend": evaluator.backend,
        "workers": int(config.workers),
        "n_scenarios": n,
        "n_failed": n_failed,
        "degraded": bool(degraded),
        "warnings": all_warnings,
        "trace": trace,
        "timings": {
            "setup_s": t_setup - t_start,
            "estimate_s": t_estimate - t_setup,
            "report_s": t_done - t_estimate,
            "total_s": t_done - t_start,
        },
        "created": datetime.now(timezone.utc).isoformat(),
    }
    return RiskReport(
        schema_version=REPORT_SCHEMA_VERSION,
        policy=policy,
        grid_info=grid_info,
        estimate=estimate,
        monitored=tuple(int(b) for b in monitored),
        q_matrix=q_matrix,
        q_stderr=q_stderr,
        elements=tuple(elements),
        curve_bin_width=float(config.tau_bin_width),
        curve_ess=curve_ess,
        curves=curves,
        faulted_ranking=tuple(faulted_ranking),
        vulnerable_ranking=tuple(vulnerable_ranking),
        metadata=metadata,
    )


def emit_report(report, out_dir, formats=("json", "csv"), stem="report"):
    """Write report files under ``out_dir``; returns the created paths.

    ``json`` produces the canonical document. ``csv`` flattens the matrix
    in long form plus the per-element summary and the two rankings.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "json":
            path = out / f"{stem}.json"
            path.write_text(canonical_json(report.to_doc()))
            written.append(path)
        elif fmt == "csv":
            written.extend(_write_csvs(report, out, stem))
        else:
            raise ScreeningError(f"unknown report format {fmt!r}")
    return written


def _write_csvs(report, out, stem):
    matrix_path = out / f"{stem}_matrix.csv"
    with open(matrix_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["faulted_branch", "monitored_branch", "q", "stderr"])
        for a in range(report.q_matrix.shape[0]):
            for j, b in enumerate(report.monitored):
                writer.writerow(
                    [a, b, report.q_matrix[a, j], report.q_stderr[a, j]]
                )

    elements_path = out / f"{stem}_elements.csv"
    fields = [
        "branch",
        "from_bus",
        "to_bus",
        "transformer",
        "q_any",
        "q_max",
        "zone",
    ]
    with open(elements_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for entry in report.elements:
            writer.writerow(entry)

    rankings_path = out / f"{stem}_rankings.csv"
    fields = [
        "kind",
        "rank",
        "branch",
        "from_bus",
        "to_bus",
        "transformer",
        "frequency",
        "overload_seconds",
        "recurrence",
        "q_any",
        "zone",
    ]
    with open(rankings_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        for rank, entry in enumerate(report.faulted_ranking, start=1):
            writer.writerow({"kind": "faulted", "rank": rank, **entry})
        for rank, entry in enumerate(report.vulnerable_ranking, start=1):
            writer.writerow({"kind": "vulnerable", "rank": rank, **entry})
    return [matrix_path, elements_path, rankings_path]

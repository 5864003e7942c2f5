"""Rare overload probability estimation.

Two estimators for ``Q(gamma) = P[S >= gamma]`` over random fault
scenarios: crude Monte Carlo and importance sampling with a cross-entropy
optimized proposal. Threshold semantics are right-continuous: a positive
gamma uses ``S >= gamma`` while ``gamma <= 0`` uses the strict ``S >
gamma``, so the degenerate overload-free mass at zero is excluded when
asking for the probability of any overload.

The cross-entropy method tilts a parametric proposal (branch selection
weights plus per-branch duration parameters) toward elite scenarios by
iterating the closed-form weighted maximum likelihood update with
additive smoothing and geometric mixing. Exponential duration models are
fit as shifted exponentials: the location shift moves the proposal mass
directly over each branch's overload region, which is what keeps the
importance weights nearly constant within a branch. Every sampling pass
draws from a defensive mixture that keeps ``defense`` of the mass on the
nominal law, so the estimator stays unbiased below the fitted shifts and
no importance weight exceeds ``1 / defense``. Elite levels rise through
``min`` of the empirical (1 - rho)-quantile and the target, with a floor
on the elite count to keep updates stable.

Scoring is delegated to a callable ``scorer(branches, taus, iteration)``
returning the per-scenario global overload seconds, so the estimators are
independent of how trajectories are produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenarios import (
    NO_FAULT,
    DefensiveMixture,
    DiscreteDurations,
    ExponentialDurations,
    ScenarioDistribution,
    defensive_mixture,
    likelihood_ratios,
    sampling_stream,
)


class EstimatorError(Exception):
    """Estimation could not proceed."""


class DegenerateEliteError(EstimatorError):
    """No scenario produced a positive score; nothing to tilt toward."""


@dataclass(frozen=True)
class CEParams:
    """Cross-entropy tuning knobs; defaults follow common practice.

    ``defense`` is the nominal share of the defensive mixture every
    sampling pass draws from; it caps importance weights at
    ``1 / defense`` and keeps the proposal supported wherever the nominal
    law is. It also gates the duration shift fit: a location-shifted
    proposal has no density below its shift, so shifts are only fitted
    when the mixture is there to cover short-duration hits.
    ``duration_support`` is the minimum effective elite sample size a
    branch needs before its duration parameters are refit; sparser
    branches keep their current parameters, fitted exponential rates stay
    within ``tilt_band`` of the nominal rate, and shifts are fitted as
    the elite minimum of the branch less a minimum-statistic margin.
    ``tilt_band`` is deliberately tight: overload indicators are
    nondecreasing in the clearing time, so the conditional duration tail
    keeps the nominal rate by memorylessness and the location shift does
    the real work. A looser band lets finite-sample rate fits starve the
    long-duration tail, which inflates weight variance far more than a
    misplaced head ever could. ``duration_guard`` is the share of each
    fitted branch's duration mass kept as an unshifted exponential so
    hits below a fitted shift stay cheap (see ``ExponentialDurations``).
    ``weight_floor`` keeps every fitted branch weight at or above that
    fraction of its nominal weight, both in the per-iteration tilts and
    in the final variance-optimal allocation. A hit on a branch the
    elite sample missed then costs roughly its conditional hit
    probability over the floor, where leaving the branch to the
    defensive mixture alone would cost the full ``1 / defense`` no
    matter how unlikely the hit was.
    """

    rho: float = 0.1
    smoothing: float | None = None  # additive weight smoothing, default 1e-3/E
    mixing: float = 0.7
    tol: float = 1e-3
    max_iters: int = 20
    elite_min: int = 10
    defense: float = 0.1
    duration_support: float = 5.0
    tilt_band: float = 1.5
    duration_guard: float = 0.15
    weight_floor: float = 0.1


@dataclass(frozen=True)
class CEIterate:
    """One cross-entropy iteration, recorded for the trace."""

    iteration: int
    gamma_t: float
    elite_count: int
    change: float
    weights: np.ndarray
    no_fault: float
    duration_params: np.ndarray


@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    stderr: float
    ess: float
    n_samples: int
    n_evaluations: int
    gamma: float
    method: str
    proposal: ScenarioDistribution | DefensiveMixture | None = None
    warnings: tuple[str, ...] = ()
    trace: tuple[CEIterate, ...] = ()


def exceeds(scores, gamma):
    """Right-continuous threshold indicator on score arrays."""
    scores = np.asarray(scores)
    if gamma > 0:
        return scores >= gamma
    return scores > gamma


def monte_carlo(scorer, nominal, gamma, n, master_seed, iteration=0):
    """Crude Monte Carlo estimate of Q(gamma) under the nominal law."""
    if n <= 0:
        raise EstimatorError("sample count must be positive")
    rng = sampling_stream(master_seed, iteration)
    branches, taus = nominal.sample_arrays(rng, n)
    scores = np.asarray(scorer(branches, taus, iteration))
    hits = exceeds(scores, gamma)
    est = float(hits.mean())
    stderr = math.sqrt(est * (1.0 - est) / n)
    return EstimatorResult(
        estimate=est,
        stderr=stderr,
        ess=float(n),
        n_samples=n,
        n_evaluations=n,
        gamma=gamma,
        method="mc",
    )


def _duration_params(dist):
    if isinstance(dist.durations, ExponentialDurations):
        return np.vstack([dist.durations.rates, dist.durations.shifts])
    return dist.durations.probs.copy()


def _weighted_fit(branches, taus, w, nominal, base, mixing, params):
    """Weighted maximum likelihood fit of the scenario family.

    ``w`` holds elite-masked importance weights taken against the nominal
    law. Branch weights and per-branch duration parameters are refit in
    closed form with additive smoothing, then blended geometrically toward
    ``base`` by ``mixing`` (1.0 replaces ``base`` outright). Branches
    whose weighted elite mass falls below ``duration_support`` keep the
    ``base`` duration parameters.
    """
    n_branches = base.n_branches
    cats = np.where(branches >= 0, branches, n_branches)
    counts = np.bincount(cats, weights=w, minlength=n_branches + 1)
    # per-branch effective sample size gates the duration refits: equal
    # weights reduce it to the elite count, while a branch whose mass sits
    # on a few heavy weights is treated as the sparse fit it really is
    wsq = np.bincount(cats, weights=w * w, minlength=n_branches + 1)
    ess = np.where(
        wsq > 0, counts**2 / np.maximum(wsq, 1e-300), 0.0
    )[:n_branches]

    phi_nom = np.append(nominal.weights, nominal.no_fault)
    support = phi_nom > 0
    eps = params.smoothing if params.smoothing is not None else 1e-3 / n_branches
    raw = np.where(support, counts + eps, 0.0)
    phi_new = raw / raw.sum()
    phi_old = np.append(base.weights, base.no_fault)
    phi = mixing * phi_new + (1.0 - mixing) * phi_old
    if params.weight_floor > 0:
        phi = np.maximum(phi, params.weight_floor * phi_nom)
    phi /= phi.sum()

    if isinstance(base.durations, ExponentialDurations):
        sw = counts[:n_branches]
        upd = ess >= params.duration_support
        shifts_old = base.durations.shifts
        shifts_new = shifts_old.copy()
        if params.defense > 0:
            # location fit: the shift moves to the shortest elite duration
            # of the branch, backed off by twice the expected gap between
            # a sample minimum and the essential infimum (1 / (n lambda)
            # for an exponential tail); overshooting the shift is costly
            # because hits below it fall back on the defensive component
            # at the full 1/defense weight
            real = (branches >= 0) & (w > 0)
            idx = branches[real]
            cnt = np.bincount(idx, minlength=n_branches)
            lo = np.full(n_branches, np.inf)
            np.minimum.at(lo, idx, taus[real])
            fitted = upd & (cnt >= max(params.duration_support, 1.0))
            margin = 2.0 / np.maximum(
                cnt * base.durations.rates, 1e-12
            )
            shifts_new[fitted] = np.maximum(lo - margin, 0.0)[fitted]
        shifts = mixing * shifts_new + (1.0 - mixing) * shifts_old
        # rate fit on the excess over the mixed shift, restricted to the
        # samples at or above it: the guard component owns the region
        # below, and letting its draws into the tail fit would bias the
        # rate upward through their clamped zero excess
        excess = taus - shifts[np.maximum(branches, 0)]
        tail = excess >= 0.0
        sw_tail = np.bincount(
            cats, weights=np.where(tail, w, 0.0), minlength=n_branches + 1
        )[:n_branches]
        swe = np.bincount(
            cats,
            weights=np.where(tail, w * np.maximum(excess, 0.0), 0.0),
            minlength=n_branches + 1,
        )[:n_branches]
        rates_new = base.durations.rates.copy()
        updr = upd & (swe > 1e-300)
        rates_new[updr] = sw_tail[updr] / swe[updr]
        rates = mixing * rates_new + (1.0 - mixing) * base.durations.rates
        anchor = nominal.durations.rates
        rates = np.clip(
            rates, anchor / params.tilt_band, anchor * params.tilt_band
        )
        durations = ExponentialDurations(
            rates=rates, shifts=shifts, guard=params.duration_guard
        )
    else:
        values = base.durations.values
        probs_cur = base.durations.probs
        probs_nom = nominal.durations.probs
        idx = np.clip(np.searchsorted(values, taus), 0, len(values) - 1)
        cell = np.zeros_like(probs_cur)
        w_dur = np.where(branches >= 0, w, 0.0)
        np.add.at(cell, (np.maximum(branches, 0), idx), w_dur)
        cell[:, :] = np.where(probs_nom > 0, cell + eps, 0.0)
        probs_new = probs_cur.copy()
        upd = ess >= params.duration_support
        probs_new[upd] = cell[upd] / cell[upd].sum(axis=1, keepdims=True)
        probs = mixing * probs_new + (1.0 - mixing) * probs_cur
        probs /= probs.sum(axis=1, keepdims=True)
        durations = DiscreteDurations(values=values, probs=probs)

    return ScenarioDistribution(
        weights=phi[:n_branches], durations=durations, no_fault=float(phi[-1])
    )


def _variance_allocation(mass, phi_nom, defense, floor):
    """Branch mass allocation minimizing importance weight variance.

    ``mass`` holds per-category weighted hit mass estimates (the last
    entry is the no-fault cell). Sampling category ``a`` with density
    ``g_a = (1 - defense) phi_a + defense phi_nom_a`` contributes
    ``mass_a * phi_nom_a / g_a`` to the second moment of the estimator,
    so the minimizing allocation under ``sum g = 1`` follows
    ``g_a ~ sqrt(mass_a phi_nom_a)`` water-filled against the lower
    bound the defense share and the weight floor impose. The square
    root also makes the allocation far less sensitive to noise in the
    per-branch mass estimates than proportional fitting: a branch whose
    mass is estimated a factor of four low is only under-allocated by
    a factor of two.
    """
    phi_nom = np.asarray(phi_nom, dtype=float)
    lo = (defense + (1.0 - defense) * floor) * phi_nom
    s = np.sqrt(np.maximum(mass, 0.0) * phi_nom)
    g = lo.copy()
    free = s > 0
    while free.any():
        budget = 1.0 - lo[~free].sum()
        cand = s * (budget / s[free].sum())
        pinned = free & (cand < lo)
        if not pinned.any():
            g[free] = cand[free]
            break
        free &= ~pinned
    phi = np.maximum(g - defense * phi_nom, 0.0) / (1.0 - defense)
    phi = np.maximum(phi, floor * phi_nom)
    return phi / phi.sum()


def ce_update(branches, taus, scores, nominal, current, gamma, params):
    """One cross-entropy tilt from scenarios drawn under ``current``.

    Returns ``(new_distribution, gamma_t, elite_count)``. The importance
    weights are nominal over current densities, restricted to the elite
    set ``exceeds(scores, gamma_t)`` with the level capped at the target
    and floored so at least ``max(elite_min, rho n / 2)`` scenarios (or
    every positive-score scenario, if fewer) participate. ``current`` may
    be a defensive mixture; the update starts from its fitted component
    and returns a plain distribution for the caller to wrap again.
    """
    scores = np.asarray(scores)
    n = len(scores)
    positive = scores > 0
    if not positive.any():
        raise DegenerateEliteError(
            "every sampled scenario scored zero; cannot select an elite set"
        )
    gamma_q = float(np.quantile(scores, 1.0 - params.rho))
    gamma_t = min(gamma_q, gamma)
    elite = exceeds(scores, gamma_t)
    floor = max(params.elite_min, math.ceil(params.rho * n / 2))
    if elite.sum() < floor:
        k = min(floor, int(positive.sum()))
        level = np.sort(scores[positive])[-k]
        gamma_t = float(level)
        elite = scores >= gamma_t
    ratios = likelihood_ratios(nominal, current, branches, taus)
    w = np.where(elite, ratios, 0.0)
    if w.sum() <= 0:
        raise DegenerateEliteError("elite scenarios carry zero nominal mass")

    fit_old = getattr(current, "fit", current)
    new = _weighted_fit(
        branches, taus, w, nominal, fit_old, params.mixing, params
    )
    return new, gamma_t, int(elite.sum())


def _distribution_change(a, b):
    dphi = np.abs(a.weights - b.weights).max()
    dnf = abs(a.no_fault - b.no_fault)
    da = np.abs(_duration_params(a) - _duration_params(b)).max()
    return max(dphi, dnf, da)


def cross_entropy_optimize(scorer, nominal, gamma, params, n_per_iter,
                           master_seed):
    """Iterate CE tilts until the proposal stabilizes at the target level.

    Returns ``(proposal, trace, n_evaluations, warnings)`` where the
    proposal is the fitted distribution; sampling passes draw from its
    defensive mixture with the nominal law, and callers estimating with
    the result must wrap it the same way (see ``defensive_mixture``).
    Iterations are tagged 1..max_iters in the sampling stream contract.

    The returned proposal is a pooled refit: after the level schedule
    settles, every scored scenario from every iteration re-enters one
    unmixed weighted fit at the final level, each sample weighted against
    the sampler that actually drew it. Pooling multiplies the elite
    evidence behind the per-branch duration fits without spending extra
    evaluations, which matters on grids where the conditional hit mass
    spreads thinly over many branches. Branch mass is then reallocated
    by :func:`_variance_allocation`: the per-iteration tilts keep the
    cross-entropy fit that locates the target level, while the proposal
    actually handed to the final estimate minimizes weight variance
    against the defensive mixture it will be sampled through.
    """
    if n_per_iter <= 0:
        raise EstimatorError("samples per iteration must be positive")
    current = nominal
    trace = []
    warnings = []
    n_evals = 0
    converged = False
    stable_at_target = 0
    pool = []
    for t in range(1, params.max_iters + 1):
        sampler = defensive_mixture(current, nominal, params.defense)
        rng = sampling_stream(master_seed, t)
        branches, taus = sampler.sample_arrays(rng, n_per_iter)
        scores = np.asarray(scorer(branches, taus, t))
        n_evals += n_per_iter
        pool.append(
            (branches, taus, scores,
             likelihood_ratios(nominal, sampler, branches, taus))
        )
        new, gamma_t, elite_count = ce_update(
            branches, taus, scores, nominal, sampler, gamma, params
        )
        change = _distribution_change(new, current)
        trace.append(
            CEIterate(
                iteration=t,
                gamma_t=gamma_t,
                elite_count=elite_count,
                change=change,
                weights=new.weights.copy(),
                no_fault=new.no_fault,
                duration_params=_duration_params(new),
            )
        )
        current = new
        at_target = gamma_t >= gamma if gamma > 0 else True
        stable_at_target = stable_at_target + 1 if at_target else 0
        # two complete tilts at the capped target level finish the
        # optimization even while resampling noise keeps the raw
        # parameter change above the tolerance
        if at_target and (change < params.tol or stable_at_target >= 2):
            converged = True
            break
    if not converged:
        warnings.append(
            f"ce-not-converged: last parameter change "
            f"{trace[-1].change:.2e} after {len(trace)} iterations"
        )
    branches = np.concatenate([p[0] for p in pool])
    taus = np.concatenate([p[1] for p in pool])
    scores = np.concatenate([p[2] for p in pool])
    ratios = np.concatenate([p[3] for p in pool])
    w = np.where(exceeds(scores, trace[-1].gamma_t), ratios, 0.0)
    if w.sum() > 0:
        current = _weighted_fit(
            branches, taus, w, nominal, nominal, 1.0, params
        )
        cats = np.where(branches >= 0, branches, current.n_branches)
        mass = np.bincount(cats, weights=w, minlength=current.n_branches + 1)
        phi = _variance_allocation(
            mass,
            np.append(nominal.weights, nominal.no_fault),
            params.defense,
            params.weight_floor,
        )
        current = ScenarioDistribution(
            weights=phi[:-1],
            durations=current.durations,
            no_fault=float(phi[-1]),
        )
    return current, tuple(trace), n_evals, tuple(warnings)


def importance_sample(scorer, nominal, proposal, gamma, n, master_seed,
                      iteration):
    """Unnormalized importance sampling estimate of Q(gamma).

    Weights are nominal over proposal densities; the effective sample size
    ``(sum w)^2 / sum w^2`` is reported and a warning is attached when it
    falls below one percent of n. Estimates are clamped to [0, 1] with a
    warning, since the unnormalized form can overshoot on finite samples.
    """
    if n <= 0:
        raise EstimatorError("sample count must be positive")
    rng = sampling_stream(master_seed, iteration)
    branches, taus = proposal.sample_arrays(rng, n)
    scores = np.asarray(scorer(branches, taus, iteration))
    w = likelihood_ratios(nominal, proposal, branches, taus)
    vals = np.where(exceeds(scores, gamma), w, 0.0)
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    wsq = float((w * w).sum())
    ess = float(w.sum() ** 2 / wsq) if wsq > 0 else 0.0
    warnings = []
    if ess < 0.01 * n:
        warnings.append(f"low-ess: effective sample size {ess:.1f} of {n}")
    if est > 1.0:
        warnings.append(f"estimate-clamped: raw value {est:.6g} above one")
        est = 1.0
    return EstimatorResult(
        estimate=est,
        stderr=stderr,
        ess=ess,
        n_samples=n,
        n_evaluations=n,
        gamma=gamma,
        method="ce",
        proposal=proposal,
        warnings=tuple(warnings),
    )


def estimate_overload_probability(scorer, nominal, gamma, n, master_seed,
                                  method="mc", ce_params=None,
                                  ce_n_per_iter=None):
    """Top-level estimator dispatch.

    ``method="mc"`` draws n nominal scenarios. ``method="ce"`` first runs
    the cross-entropy optimization (``ce_n_per_iter`` samples per
    iteration, defaulting to ``max(n // 5, 500)``), then spends n samples
    on the final importance estimate drawn from the defensive mixture
    around the fitted proposal; ``n_evaluations`` accounts for both
    phases. The final draw is tagged ``max_iters + 1`` in the stream
    contract regardless of when the optimization stopped.
    """
    if method == "mc":
        return monte_carlo(scorer, nominal, gamma, n, master_seed)
    if method != "ce":
        raise EstimatorError(f"unknown estimation method {method!r}")
    params = ce_params or CEParams()
    per_iter = ce_n_per_iter or max(n // 5, 500)
    fit, trace, n_opt, warnings = cross_entropy_optimize(
        scorer, nominal, gamma, params, per_iter, master_seed
    )
    proposal = defensive_mixture(fit, nominal, params.defense)
    result = importance_sample(
        scorer, nominal, proposal, gamma, n, master_seed,
        iteration=params.max_iters + 1,
    )
    return EstimatorResult(
        estimate=result.estimate,
        stderr=result.stderr,
        ess=result.ess,
        n_samples=result.n_samples,
        n_evaluations=n_opt + result.n_evaluations,
        gamma=gamma,
        method="ce",
        proposal=proposal,
        warnings=warnings + result.warnings,
        trace=trace,
    )

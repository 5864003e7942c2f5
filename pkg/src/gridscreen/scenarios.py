"""Fault scenario distributions: sampling, densities, likelihood ratios.

A scenario is a (faulted branch, fault duration) pair; ``branch`` may be
None for the explicit no-fault outcome. Distributions factor into branch
selection weights and a per-branch duration model, either exponential
(the default, matching the memoryless protection-clearing assumption) or
a discrete table useful for enumerable toy studies.

Reproducibility contract: every stream is a Philox generator keyed by
``SeedSequence(master_seed, spawn_key=(phase, ...))``. Scenario draws for
iteration ``t`` use phase SAMPLE with key (SAMPLE, t); the noise path of
scenario ``i`` within iteration ``t`` uses (NOISE, t, i). Streams are
therefore independent of batch splits and worker counts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

PHASE_SAMPLE = 1
PHASE_NOISE = 2
PHASE_REQUEST = 3

#: Branch marker for the no-fault scenario in vectorized arrays.
NO_FAULT = -1


class ScenarioError(Exception):
    """Invalid distribution parameters or density query."""


def sampling_stream(master_seed, iteration):
    """Generator for the scenario draws of one estimator iteration."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(PHASE_SAMPLE, iteration))
    return np.random.Generator(np.random.Philox(seq))


def noise_stream(master_seed, iteration, index):
    """Generator for the Brownian increments of one scenario."""
    seq = np.random.SeedSequence(
        master_seed, spawn_key=(PHASE_NOISE, iteration, index)
    )
    return np.random.Generator(np.random.Philox(seq))


def request_stream(master_seed, request_seed):
    """Generator for ad hoc what-if evaluations."""
    seq = np.random.SeedSequence(
        master_seed, spawn_key=(PHASE_REQUEST, request_seed)
    )
    return np.random.Generator(np.random.Philox(seq))


def request_noise_stream(master_seed, request_seed, index):
    """Generator for the noise of path ``index`` in a what-if request."""
    seq = np.random.SeedSequence(
        master_seed, spawn_key=(PHASE_REQUEST, request_seed, index)
    )
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class FaultScenario:
    branch: int | None
    tau: float


@dataclass(frozen=True)
class ExponentialDurations:
    """Per-branch exponential clearing-time model.

    An optional per-branch ``shifts`` vector turns branch ``a`` into the
    shifted law ``shifts[a] + Exp(rates[a])``, a location tilt used by
    importance sampling proposals; the nominal law keeps zero shifts.
    ``guard`` blends each shifted branch with an unshifted exponential of
    the same rate, ``guard * Exp(rate) + (1 - guard) * (shift +
    Exp(rate))``, keeping positive density below the shift. Overload
    probabilities conditioned on a clearing time rarely jump at a sharp
    threshold, so a guard keeps the rare hit below a fitted shift cheap
    under importance weighting. With ``guard`` zero a shifted branch has
    no density below its shift, and proposals built that way must be
    wrapped in a defensive mixture to dominate the nominal law.
    """

    rates: np.ndarray
    shifts: np.ndarray | None = None
    guard: float = 0.0

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        object.__setattr__(self, "rates", rates)
        if rates.ndim != 1 or not np.all(rates > 0) or not np.all(np.isfinite(rates)):
            raise ScenarioError("duration rates must be positive and finite")
        shifts = (
            np.zeros_like(rates)
            if self.shifts is None
            else np.asarray(self.shifts, dtype=float)
        )
        object.__setattr__(self, "shifts", shifts)
        if (
            shifts.shape != rates.shape
            or np.any(shifts < 0)
            or not np.all(np.isfinite(shifts))
        ):
            raise ScenarioError(
                "duration shifts must be non-negative, finite, one per branch"
            )
        if not 0.0 <= self.guard < 1.0:
            raise ScenarioError("duration guard must lie in [0, 1)")

    @property
    def n_branches(self):
        return len(self.rates)

    def inverse_cdf(self, branches, uniforms):
        rate = self.rates[branches]
        shift = self.shifts[branches]
        if self.guard == 0.0:
            return shift - np.log1p(-uniforms) / rate
        u = np.asarray(uniforms, dtype=float)
        out = np.empty(u.shape)
        # cdf mass below the shift comes from the guard component alone
        head = u < self.guard * -np.expm1(-rate * shift)
        out[head] = -np.log1p(-u[head] / self.guard) / rate[head]
        rest = ~head
        norm = 1.0 - self.guard + self.guard * np.exp(-rate[rest] * shift[rest])
        out[rest] = shift[rest] - np.log((1.0 - u[rest]) / norm) / rate[rest]
        return out

    def density(self, branches, taus):
        rate = self.rates[branches]
        taus = np.asarray(taus, dtype=float)
        excess = taus - self.shifts[branches]
        tail = rate * np.exp(-rate * np.maximum(excess, 0.0))
        tail = np.where(excess >= 0, tail, 0.0)
        if self.guard == 0.0:
            return tail
        head = rate * np.exp(-rate * np.maximum(taus, 0.0))
        head = np.where(taus >= 0, head, 0.0)
        return self.guard * head + (1.0 - self.guard) * tail

    def mean(self, branch):
        return (1.0 - self.guard) * self.shifts[branch] + 1.0 / self.rates[branch]


@dataclass(frozen=True)
class DiscreteDurations:
    """Shared duration support with per-branch probability rows."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if values.ndim != 1 or len(values) == 0:
            raise ScenarioError("duration support must be a non-empty vector")
        if np.any(values < 0) or len(np.unique(values)) != len(values):
            raise ScenarioError("duration support must be unique non-negative values")
        if probs.ndim != 2 or probs.shape[1] != len(values):
            raise ScenarioError("duration probabilities must be (branches, support)")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
            raise ScenarioError("duration probability rows must sum to one")

    @property
    def n_branches(self):
        return self.probs.shape[0]

    def inverse_cdf(self, branches, uniforms):
        cdf = np.cumsum(self.probs[branches], axis=1)
        picks = (uniforms[:, None] >= cdf).sum(axis=1)
        return self.values[np.minimum(picks, len(self.values) - 1)]

    def density(self, branches, taus):
        idx = np.searchsorted(self.values, taus)
        idx = np.clip(idx, 0, len(self.values) - 1)
        match = np.abs(self.values[idx] - taus) <= 1e-12
        return np.where(match, self.probs[branches, idx], 0.0)

    def mean(self, branch):
        return float(self.probs[branch] @ self.values)


@dataclass(frozen=True)
class ScenarioDistribution:
    """Branch selection weights plus a duration model.

    ``weights`` must be non-negative and, together with ``no_fault``, sum
    to one. The duration model must cover every branch.
    """

    weights: np.ndarray
    durations: ExponentialDurations | DiscreteDurations
    no_fault: float = 0.0

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", weights)
        if weights.ndim != 1 or len(weights) == 0:
            raise ScenarioError("branch weights must be a non-empty vector")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ScenarioError("branch weights must be non-negative and finite")
        if not 0 <= self.no_fault <= 1:
            raise ScenarioError("no-fault mass must lie in [0, 1]")
        total = weights.sum() + self.no_fault
        if abs(total - 1.0) > 1e-9:
            raise ScenarioError(f"scenario masses sum to {total}, expected 1")
        if self.durations.n_branches != len(weights):
            raise ScenarioError("duration model does not cover every branch")

    @property
    def n_branches(self):
        return len(self.weights)

    def sample_arrays(self, rng, n):
        """Draw n scenarios; returns (branches, taus) with NO_FAULT markers.

        Category draws come first, duration draws second, each from one
        uniform block, so the stream layout is stable.
        """
        cdf = np.cumsum(np.append(self.weights, self.no_fault))
        cdf[-1] = 1.0
        cats = np.searchsorted(cdf, rng.random(n), side="right")
        durations_u = rng.random(n)
        branches = np.where(cats < self.n_branches, cats, NO_FAULT).astype(np.int64)
        taus = np.zeros(n)
        real = branches >= 0
        if real.any():
            taus[real] = self.durations.inverse_cdf(
                branches[real], durations_u[real]
            )
        return branches, taus

    def sample(self, rng):
        branches, taus = self.sample_arrays(rng, 1)
        branch = None if branches[0] == NO_FAULT else int(branches[0])
        return FaultScenario(branch=branch, tau=float(taus[0]))

    def density(self, branches, taus):
        """Joint density/mass of scenario arrays under this distribution."""
        branches = np.asarray(branches)
        taus = np.asarray(taus, dtype=float)
        out = np.full(branches.shape, self.no_fault, dtype=float)
        real = branches >= 0
        if real.any():
            br = branches[real]
            out[real] = self.weights[br] * self.durations.density(br, taus[real])
        return out

    def scenario_density(self, scenario):
        branch = NO_FAULT if scenario.branch is None else scenario.branch
        return float(
            self.density(np.array([branch]), np.array([scenario.tau]))[0]
        )

    def with_weights(self, weights, no_fault=None):
        return replace(
            self,
            weights=weights,
            no_fault=self.no_fault if no_fault is None else no_fault,
        )


def nominal_distribution(n_branches, rate=0.1, no_fault=0.0):
    """Uniform branch choice with a common exponential clearing rate."""
    weights = np.full(n_branches, (1.0 - no_fault) / n_branches)
    return ScenarioDistribution(
        weights=weights,
        durations=ExponentialDurations(rates=np.full(n_branches, rate)),
        no_fault=no_fault,
    )


@dataclass(frozen=True)
class DefensiveMixture:
    """Convex scenario mixture ``(1 - alpha) fit + alpha base``.

    Importance sampling proposal wrapper: the base component keeps the
    mixture supported wherever the base law is, so likelihood ratios of
    the base against the mixture stay bounded by ``1 / alpha`` even when
    the fitted component abandons part of the scenario space (collapsed
    branch weights, location-shifted durations).
    """

    fit: ScenarioDistribution
    base: ScenarioDistribution
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ScenarioError("mixture share must lie in (0, 1]")
        if self.fit.n_branches != self.base.n_branches:
            raise ScenarioError("mixture components cover different branches")

    @property
    def n_branches(self):
        return self.fit.n_branches

    def sample_arrays(self, rng, n):
        """Draw n scenarios: component picks first, then one block each.

        Both components always consume a full block of draws so the
        stream layout does not depend on the realized picks.
        """
        pick = rng.random(n) < self.alpha
        fit_branches, fit_taus = self.fit.sample_arrays(rng, n)
        base_branches, base_taus = self.base.sample_arrays(rng, n)
        branches = np.where(pick, base_branches, fit_branches)
        taus = np.where(pick, base_taus, fit_taus)
        return branches, taus

    def density(self, branches, taus):
        return (1.0 - self.alpha) * self.fit.density(branches, taus) \
            + self.alpha * self.base.density(branches, taus)


def defensive_mixture(fit, base, alpha):
    """Defensive proposal around ``fit``; plain ``fit`` when alpha is zero."""
    if alpha <= 0.0 or fit is base:
        return fit
    return DefensiveMixture(fit=fit, base=base, alpha=float(alpha))


def likelihood_ratios(nominal, proposal, branches, taus):
    """Importance weights nominal/proposal for sampled scenario arrays.

    The proposal must dominate the nominal law on the sampled scenarios;
    a zero proposal density where the nominal is positive raises. Any
    object exposing ``density`` works as the proposal; the duration
    family check applies only between plain scenario distributions.
    """
    nom_durations = getattr(nominal, "durations", None)
    prop_durations = getattr(proposal, "durations", None)
    if (
        nom_durations is not None
        and prop_durations is not None
        and type(nom_durations) is not type(prop_durations)
    ):
        raise ScenarioError("cannot mix duration families in likelihood ratios")
    p = nominal.density(branches, taus)
    q = proposal.density(branches, taus)
    bad = (q <= 0) & (p > 0)
    if np.any(bad):
        raise ScenarioError(
            f"proposal has zero density on {int(bad.sum())} sampled scenarios"
        )
    return np.where(p > 0, p / np.where(q > 0, q, 1.0), 0.0)

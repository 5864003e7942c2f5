"""Batched evaluation of fault scenarios over a shared horizon.

A :class:`ScenarioBatchEvaluator` turns arrays of (faulted branch, fault
duration) pairs into overload scores by propagating every scenario
through the closed-form per-step operators. Scenarios are grouped by
faulted branch so each group shares one pair of step operators, and the
groups are swept in fixed-size chunks that a thread pool may pick up in
any order without changing the results.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import RunConfig
from .dynamics import RETAINED_FRACTION, assemble, step_operator
from .grid import Grid, branch_arrays, equilibrium_angles
from .scenarios import NO_FAULT, noise_stream, request_noise_stream


class SweepError(Exception):
    pass


@dataclass(frozen=True)
class SweepResult:
    """Per-scenario outputs of one batched sweep.

    ``line_seconds[e, i]`` is the time line ``e`` spends strictly above
    its limit in scenario ``i``; ``global_seconds`` sums the monitored
    rows. Scenarios whose states left the finite range are flagged in
    ``failed`` and contribute zero seconds.
    """

    global_seconds: np.ndarray
    line_seconds: np.ndarray
    max_ratio: np.ndarray
    failed: np.ndarray
    warnings: tuple[str, ...]

    @property
    def n_scenarios(self):
        return self.global_seconds.shape[0]


class ScenarioBatchEvaluator:
    """Scores fault scenarios on one grid; reusable across sweeps.

    Instances satisfy the estimator scorer protocol: calling the object
    with (branches, taus, iteration) returns global overload seconds.
    Step operators are cached per faulted branch, so repeated sweeps
    (cross-entropy iterations, what-if requests) pay the spectral setup
    once.
    """

    def __init__(self, grid: Grid, *, dt=0.01, horizon=20.0,
                 retained=RETAINED_FRACTION, sigma_scale=1.0,
                 workers=1, batch_size=256, master_seed=2024,
                 kernel=None):
        if dt <= 0 or horizon <= 0:
            raise SweepError("dt and horizon must be positive")
        n_steps = int(round(horizon / dt))
        if n_steps < 1:
            raise SweepError(f"horizon {horizon} shorter than one step {dt}")
        if workers < 1 or batch_size < 1:
            raise SweepError("workers and batch_size must be at least 1")
        self.grid = grid
        self.dt = float(dt)
        self.horizon = float(horizon)
        self.n_steps = n_steps
        self.retained = float(retained)
        self.sigma_scale = float(sigma_scale)
        self.workers = int(workers)
        self.batch_size = int(batch_size)
        self.master_seed = int(master_seed)
        self.kernel = _kernels.get_kernel(kernel)
        self.backend = kernel if kernel is not None else _kernels.default_backend()
        self.last_result: SweepResult | None = None
        self.warnings: list[str] = []

        fr, to, beta, limit = branch_arrays(grid)
        self._fr_state = grid.n_buses + fr
        self._to_state = grid.n_buses + to
        self._flow_scale = beta / limit
        self._monitored = np.array(grid.monitored, dtype=np.int64)
        self._theta0 = equilibrium_angles(grid)
        self._base = assemble(grid, None, theta0=self._theta0)
        e_0, j_0 = step_operator(self._base.a0, self._base.forcing, dt)
        # the kernels require contiguous buffers; eigendecomposition
        # products arrive as strided real views
        self._op_clear = (np.asfortranarray(e_0), np.ascontiguousarray(j_0))
        self._x0 = np.ascontiguousarray(self._base.x0)
        self._ops: dict[int, tuple] = {}

    @classmethod
    def from_config(cls, grid: Grid, config: RunConfig, **overrides):
        kwargs = dict(
            dt=config.dt,
            horizon=config.horizon,
            retained=config.fault_retained_fraction,
            sigma_scale=config.sigma_scale,
            workers=config.workers,
            batch_size=config.batch_size,
            master_seed=config.master_seed,
        )
        kwargs.update(overrides)
        return cls(grid, **kwargs)

    @property
    def n_branches(self):
        return len(self.grid.branches)

    def sibling(self, sigma_scale):
        """Evaluator at another noise level sharing this one's spectral work.

        The step operators do not depend on the noise amplitude, so the
        sibling copies every cached one and only rebuilds the gain
        vectors. Branches this evaluator never touched are decomposed
        lazily by the sibling as usual.
        """
        ev = ScenarioBatchEvaluator(
            self.grid, dt=self.dt, horizon=self.horizon,
            retained=self.retained, sigma_scale=sigma_scale,
            workers=self.workers, batch_size=self.batch_size,
            master_seed=self.master_seed, kernel=self.backend,
        )
        for branch, ops in self._ops.items():
            if branch == NO_FAULT:
                ev._ops[branch] = ops
                continue
            ss = assemble(self.grid, branch, sigma_scale=sigma_scale,
                          retained=self.retained, theta0=self._theta0)
            ev._ops[branch] = (ops[0], ops[1],
                               np.ascontiguousarray(ss.gain),
                               ss.probe_plus, ss.probe_minus)
        return ev

    def _ensure_operators(self, branch):
        """Step operator, noise gain and probe indices for one fault group."""
        branch = int(branch)
        if branch in self._ops:
            return self._ops[branch]
        e_0, j_0 = self._op_clear
        if branch == NO_FAULT:
            ops = (e_0, j_0, np.zeros_like(j_0), 0, 0)
        else:
            ss = assemble(self.grid, branch, sigma_scale=self.sigma_scale,
                          retained=self.retained, theta0=self._theta0)
            e_f, j_f = step_operator(ss.a_fault, ss.forcing, self.dt)
            ops = (np.asfortranarray(e_f), np.ascontiguousarray(j_f),
                   np.ascontiguousarray(ss.gain),
                   ss.probe_plus, ss.probe_minus)
        self._ops[branch] = ops
        return ops

    def _validate(self, branches, taus):
        branches = np.ascontiguousarray(branches, dtype=np.int64)
        taus = np.ascontiguousarray(taus, dtype=np.float64)
        if branches.ndim != 1 or branches.shape != taus.shape:
            raise SweepError("branches and taus must be 1-d arrays of equal length")
        if branches.size and (branches.min() < NO_FAULT
                              or branches.max() >= self.n_branches):
            raise SweepError("faulted branch index out of range")
        if not np.all(np.isfinite(taus)) or (taus < 0).any():
            raise SweepError("fault durations must be finite and non-negative")
        return branches, taus

    def evaluate(self, branches, taus, iteration=0, *, request_seed=None):
        """Sweep the given scenarios and return the full per-line result."""
        branches, taus = self._validate(branches, taus)
        n = branches.shape[0]
        n_lines = self.n_branches
        k_steps = self.n_steps
        tau_steps = np.clip(np.rint(taus / self.dt), 0, k_steps).astype(np.int64)
        tau_steps[branches == NO_FAULT] = 0

        counts = np.zeros((n_lines, n), dtype=np.int32, order="F")
        max_ratio = np.zeros(n)
        failed = np.zeros(n, dtype=bool)
        if n == 0:
            return self._finish(counts, max_ratio, failed)

        # one deterministic global ordering: fault group, then longest
        # fault first so window populations are column prefixes
        order = np.lexsort((np.arange(n), -tau_steps, branches))
        chunks = [order[i:i + self.batch_size]
                  for i in range(0, n, self.batch_size)]

        for br in np.unique(branches):
            self._ensure_operators(int(br))

        def work(idx):
            seg_branches = branches[idx]
            cuts = np.flatnonzero(np.diff(seg_branches)) + 1
            for seg in np.split(np.arange(idx.shape[0]), cuts):
                sel = idx[seg]
                self._run_group(int(seg_branches[seg[0]]), sel,
                                tau_steps[sel], iteration, request_seed,
                                counts, max_ratio, failed)

        if self.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                list(pool.map(work, chunks))
        else:
            for chunk in chunks:
                work(chunk)

        return self._finish(counts, max_ratio, failed)

    def _run_group(self, branch, sel, ts, iteration, request_seed,
                   counts, max_ratio, failed):
        e_f, j_f, gain, p_plus, p_minus = self._ops[branch]
        e_0, j_0 = self._op_clear
        b = sel.shape[0]
        k_steps = self.n_steps
        dw = np.zeros((k_steps, b))
        if branch != NO_FAULT and self.sigma_scale != 0.0:
            sqdt = np.sqrt(self.dt)
            for col in np.flatnonzero(ts > 0):
                g = int(sel[col])
                if request_seed is None:
                    rng = noise_stream(self.master_seed, iteration, g)
                else:
                    rng = request_noise_stream(self.master_seed,
                                               request_seed, g)
                dw[:ts[col], col] = rng.standard_normal(ts[col]) * sqdt

        ts_asc = ts[::-1]
        ks = np.arange(k_steps)
        m_dyn = (b - np.searchsorted(ts_asc, ks, side="right")).astype(np.int64)
        m_ind = (b - np.searchsorted(ts_asc, ks, side="left")).astype(np.int64)

        seg_counts = np.zeros((self.n_branches, b), dtype=np.int32, order="F")
        seg_max = np.zeros(b)
        seg_x = np.empty((2 * self.grid.n_buses, b), order="F")
        self.kernel.run_batch(
            e_f, j_f, e_0, j_0, gain, p_plus, p_minus,
            self._x0, dw, m_dyn, m_ind, self._flow_scale,
            self._fr_state, self._to_state,
            branch if branch != NO_FAULT else -1, self.retained,
            seg_counts, seg_max, seg_x)

        counts[:, sel] = seg_counts
        max_ratio[sel] = seg_max
        failed[sel] = ~np.isfinite(seg_x).all(axis=0)

    def _finish(self, counts, max_ratio, failed):
        warnings = []
        if failed.any():
            counts[:, failed] = 0
            max_ratio[failed] = np.nan
            warnings.append(
                f"sweep: {int(failed.sum())} of {failed.shape[0]} scenarios "
                "diverged and were scored as zero")
        line_seconds = counts * self.dt
        global_seconds = line_seconds[self._monitored].sum(axis=0)
        result = SweepResult(
            global_seconds=global_seconds,
            line_seconds=line_seconds,
            max_ratio=max_ratio,
            failed=failed,
            warnings=tuple(warnings),
        )
        self.last_result = result
        self.warnings.extend(warnings)
        return result

    def __call__(self, branches, taus, iteration=0):
        return self.evaluate(branches, taus, iteration).global_seconds

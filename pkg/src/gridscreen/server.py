"""JSON API over a screening run: topology, report, curves, what-ifs."""

import threading
import uuid
from collections import OrderedDict, deque
from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .overload import SafetyPolicy, risk_classify
from .rare import exceeds
from .screening import (
    CURVE_MIN_ESS,
    REPORT_SCHEMA_VERSION,
    ScreeningError,
    curve_peaks,
    grid_document,
    load_report,
    run_screening,
)
from .sweep import ScenarioBatchEvaluator

# What-if evaluators kept per noise level; they share spectral caches so
# this only bounds the cheap per-level state.
MAX_SIGMA_CACHE = 8
MAX_FINISHED_JOBS = 200
MAX_WHATIF_N = 50_000
MAX_WHATIF_SIGMA = 1.0


class WhatIfRequest(BaseModel, extra="forbid"):
    faulted_branch: int = Field(ge=0)
    tau: float = Field(ge=0)
    sigma: float = Field(ge=0)
    gamma: float = Field(ge=0)
    n: int = Field(ge=1)
    seed: int = 0


def _error(status, code, detail):
    return HTTPException(status, {"code": code, "detail": detail})


class _Job:
    __slots__ = ("id", "status", "request", "result", "error")

    def __init__(self, request):
        self.id = uuid.uuid4().hex[:12]
        self.status = "queued"
        self.request = request
        self.result = None
        self.error = None

    def doc(self):
        body = {"id": self.id, "status": self.status}
        if self.result is not None:
            body["result"] = self.result
        if self.error is not None:
            body["error"] = self.error
        return body


class ScreeningService:
    """State behind the API: one grid, one published report, a job queue.

    Heavy compute (the startup sweep and every what-if) is serialized by
    ``_compute``; read endpoints only touch the atomically swapped
    ``_published`` snapshot, so they stay lock-free and consistent.
    """

    def __init__(self, grid, config, report_path=None):
        self.grid = grid
        self.config = config
        self.policy = SafetyPolicy(
            t_star=config.t_star,
            warning=config.zone_warning,
            emergency=config.zone_emergency,
        )
        self.bounds = {
            "tau": [0.0, config.horizon],
            "sigma": [0.0, MAX_WHATIF_SIGMA],
            "gamma": [0.0, config.horizon * len(grid.monitored)],
            "n": [1, MAX_WHATIF_N],
        }
        self.grid_doc = {**grid_document(grid), "whatif_bounds": self.bounds}
        self.report_path = report_path
        self._published = None
        self._failure = None
        self._compute = threading.Lock()
        self._evaluators = OrderedDict()
        self._jobs = OrderedDict()
        self._queue = deque()
        self._wake = threading.Condition()
        self._stop = False
        self._threads = []

    # -- lifecycle ---------------------------------------------------

    def start(self):
        if self.report_path is not None:
            report = load_report(self.report_path)
            self._published = (report.to_doc(), report)
        else:
            t = threading.Thread(target=self._screen, daemon=True)
            t.start()
            self._threads.append(t)
        worker = threading.Thread(target=self._work, daemon=True)
        worker.start()
        self._threads.append(worker)

    def stop(self):
        with self._wake:
            self._stop = True
            self._wake.notify_all()

    def _screen(self):
        try:
            with self._compute:
                evaluator = ScenarioBatchEvaluator.from_config(
                    self.grid, self.config
                )
                report = run_screening(self.grid, self.config, evaluator)
                self._remember_evaluator(self.config.sigma_scale, evaluator)
            self._published = (report.to_doc(), report)
        except Exception as exc:
            self._failure = f"{type(exc).__name__}: {exc}"

    # -- evaluator cache ----------------------------------------------

    def _remember_evaluator(self, sigma, evaluator):
        key = float(sigma)
        self._evaluators[key] = evaluator
        self._evaluators.move_to_end(key)
        while len(self._evaluators) > MAX_SIGMA_CACHE:
            self._evaluators.popitem(last=False)

    def _evaluator_for(self, sigma):
        key = float(sigma)
        found = self._evaluators.get(key)
        if found is not None:
            self._evaluators.move_to_end(key)
            return found
        if self._evaluators:
            donor = next(reversed(self._evaluators))
            evaluator = self._evaluators[donor].sibling(key)
        else:
            evaluator = ScenarioBatchEvaluator.from_config(
                self.grid, self.config, sigma_scale=key
            )
        self._remember_evaluator(key, evaluator)
        return evaluator

    # -- report access -------------------------------------------------

    def report_doc(self):
        published = self._published
        if published is not None:
            return published[0]
        if self._failure is not None:
            raise _error(500, "screening_failed", self._failure)
        raise _error(
            503, "report_pending",
            "the startup screening is still running; retry shortly",
        )

    def report(self):
        self.report_doc()
        return self._published[1]

    def curve_doc(self, branch):
        report = self.report()
        n_branches = self.grid_doc["n_branches"]
        if not 0 <= branch < n_branches:
            raise _error(
                404, "unknown_branch",
                f"branch {branch} out of range for {n_branches} branches",
            )
        q_row = report.curves[branch]
        ess_row = report.curve_ess[branch]
        peak = float(
            curve_peaks(q_row[None, :], ess_row[None, :], CURVE_MIN_ESS)[0]
        )
        monitored = list(report.monitored)
        impact = report.q_matrix[branch]
        order = np.argsort(-impact)[:5]
        br = self.grid.branches[branch]
        return {
            "schema_version": report.schema_version,
            "branch": branch,
            "from_bus": int(br.from_bus),
            "to_bus": int(br.to_bus),
            "bin_width": report.curve_bin_width,
            "n_bins": int(report.curves.shape[1]),
            "q": [None if np.isnan(v) else float(v) for v in q_row],
            "ess": [float(v) for v in ess_row],
            "min_ess": CURVE_MIN_ESS,
            "peak": peak,
            "zone": risk_classify(peak, self.policy),
            "bands": {
                "warning": self.policy.warning,
                "emergency": self.policy.emergency,
            },
            "t_star": self.policy.t_star,
            "affected": [
                {"branch": int(monitored[j]), "q": float(impact[j])}
                for j in order
                if impact[j] > 0
            ],
        }

    # -- what-if compute -----------------------------------------------

    def whatif(self, req: WhatIfRequest):
        n_branches = self.grid_doc["n_branches"]
        if req.faulted_branch >= n_branches:
            raise _error(
                400, "unknown_branch",
                f"branch {req.faulted_branch} out of range for "
                f"{n_branches} branches",
            )
        for field, value in (
            ("tau", req.tau), ("sigma", req.sigma),
            ("gamma", req.gamma), ("n", req.n),
        ):
            lo, hi = self.bounds[field]
            if not lo <= value <= hi:
                raise _error(
                    400, "invalid_request",
                    f"{field}={value} outside advertised bounds [{lo}, {hi}]",
                )
        if req.n <= self.config.server_sync_limit:
            with self._compute:
                return self._run_whatif(req)
        with self._wake:
            pending = sum(
                1 for j in self._jobs.values()
                if j.status in ("queued", "running")
            )
            if pending >= self.config.server_queue_limit:
                raise _error(
                    429, "queue_full",
                    "what-if queue is full; retry after pending jobs drain",
                )
            job = _Job(req)
            self._jobs[job.id] = job
            self._prune_jobs()
            self._queue.append(job)
            self._wake.notify()
        return None, job

    def job_doc(self, job_id):
        job = self._jobs.get(job_id)
        if job is None:
            raise _error(404, "unknown_job", f"no job {job_id!r}")
        return {"schema_version": REPORT_SCHEMA_VERSION, "job": job.doc()}

    def _work(self):
        while True:
            with self._wake:
                while not self._queue and not self._stop:
                    self._wake.wait()
                if self._stop:
                    return
                job = self._queue.popleft()
                job.status = "running"
            try:
                with self._compute:
                    job.result = self._run_whatif(job.request)
                job.status = "done"
            except Exception as exc:
                job.error = {"code": "whatif_failed", "detail": str(exc)}
                job.status = "failed"

    def _prune_jobs(self):
        done = [
            jid for jid, j in self._jobs.items()
            if j.status in ("done", "failed")
        ]
        for jid in done[: max(len(done) - MAX_FINISHED_JOBS, 0)]:
            del self._jobs[jid]

    def _run_whatif(self, req: WhatIfRequest):
        evaluator = self._evaluator_for(req.sigma)
        branches = np.full(req.n, req.faulted_branch, dtype=np.int64)
        taus = np.full(req.n, req.tau)
        result = evaluator.evaluate(branches, taus, request_seed=req.seed)
        hits = exceeds(result.global_seconds, req.gamma)
        q = float(hits.mean())
        stderr = float(np.sqrt(max(q * (1.0 - q), 0.0) / req.n))
        monitored = np.array(self.grid.monitored, dtype=np.int64)
        seconds = result.line_seconds[monitored, 0]
        top = np.argsort(-seconds)[:5]
        first_ratio = result.max_ratio[0]
        summary = {
            "max_ratio": None if np.isnan(first_ratio) else float(first_ratio),
            "global_seconds": float(result.global_seconds[0]),
            "n_failed": int(result.failed.sum()),
            "top_elements": [
                {
                    "branch": int(monitored[j]),
                    "from_bus": int(self.grid.branches[monitored[j]].from_bus),
                    "to_bus": int(self.grid.branches[monitored[j]].to_bus),
                    "seconds": float(seconds[j]),
                }
                for j in top
                if seconds[j] > 0
            ],
        }
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "request": req.model_dump(),
            "estimate": {
                "estimate": q,
                "stderr": stderr,
                "ess": float(req.n),
                "n_samples": int(req.n),
                "n_evaluations": int(req.n),
                "gamma": req.gamma,
                "method": "mc",
            },
            "zone": risk_classify(q, self.policy),
            "trajectory": summary,
        }


def create_app(grid, config, report_path=None):
    """Build the API application for one grid and configuration."""
    service = ScreeningService(grid, config, report_path=report_path)

    @asynccontextmanager
    async def lifespan(app):
        service.start()
        yield
        service.stop()

    app = FastAPI(title="gridscreen", lifespan=lifespan)
    app.state.service = service

    @app.exception_handler(HTTPException)
    async def _http_error(request: Request, exc: HTTPException):
        detail = exc.detail
        if not isinstance(detail, dict):
            detail = {"code": "error", "detail": str(detail)}
        return JSONResponse({"error": detail}, status_code=exc.status_code)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(
            {"error": {"code": "invalid_request", "detail": exc.errors()}},
            status_code=422,
        )

    @app.get("/grid")
    async def get_grid():
        return service.grid_doc

    @app.get("/report")
    async def get_report():
        return service.report_doc()

    @app.get("/curves/{branch}")
    async def get_curves(branch: int):
        return service.curve_doc(branch)

    @app.post("/whatif")
    async def post_whatif(req: WhatIfRequest):
        outcome = service.whatif(req)
        if isinstance(outcome, tuple):
            _, job = outcome
            return JSONResponse(
                {
                    "schema_version": REPORT_SCHEMA_VERSION,
                    "job": {**job.doc(), "poll": f"/jobs/{job.id}"},
                },
                status_code=202,
            )
        return outcome

    @app.get("/jobs/{job_id}")
    async def get_job(job_id: str):
        return service.job_doc(job_id)

    return app

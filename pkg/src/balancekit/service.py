"""Session-oriented HTTP API exposing the six-step workflow.

Step-order violations return 409 naming the missing prerequisite, unknown
sessions 404, and validation failures 422 with field-level messages. Long
fits (the nine-method batch, the sensitivity grid) run as cancellable
background jobs polled via status endpoints; results land in the session
store only on successful completion, so a cancelled or failed job leaves
the session at its prior step.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request, Response, UploadFile
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .dataset import TrimRule, overlap_report, summarize
from .estimators import EstimatorConfig
from .report import balance_csv, build_report, render_markdown, weights_csv
from .sensitivity import SensitivityConfig
from .session import Session, SessionStore, StaleJobError, StepOrderError


class _Cancelled(Exception):
    pass


class _Job:
    """One background computation: mutable progress plus a cancel flag."""

    def __init__(self, kind: str, total: int):
        self.kind = kind
        self.state = "running"
        self.done = 0
        self.total = total
        self.error: str | None = None
        self.cancel = threading.Event()
        self.thread: threading.Thread | None = None

    def progress_payload(self) -> dict:
        payload = {
            "state": self.state,
            "progress": {"done": self.done, "total": self.total},
        }
        if self.error is not None:
            payload["error"] = self.error
        return payload


class RolesBody(BaseModel):
    roles: dict[str, str]
    treated_level: str | float | None = None


class EstimandBody(BaseModel):
    estimand: str


class TrimBody(BaseModel):
    rules: list[dict]
    dry_run: bool = False
    overlay_bins: int | None = None


class WeightsBody(BaseModel):
    config: dict = Field(default_factory=dict)


class MethodBody(BaseModel):
    method_id: str


class EffectBody(BaseModel):
    model: str = "DoublyRobust"
    covariate_subset: list[str] | None = None


class SensitivityBody(BaseModel):
    config: dict = Field(default_factory=dict)


def _validation_error(field: str, message: str, where: str = "body") -> JSONResponse:
    return JSONResponse(
        status_code=422,
        content={"detail": [{"loc": [where, field], "msg": message, "type": "value_error"}]},
    )


def create_app(store_dir: str | Path) -> FastAPI:
    """Build the service around a session store rooted at ``store_dir``."""
    app = FastAPI(title="balancekit", version="0.1.0")
    store = SessionStore(store_dir)
    jobs: dict[str, _Job] = {}
    jobs_lock = threading.Lock()
    app.state.store = store

    # A dedicated exception type keeps handler wiring simple.
    class UnknownSession(Exception):
        pass

    def session_or_404(session_id: str) -> Session:
        try:
            return store.get(session_id)
        except (KeyError, ValueError) as e:
            raise UnknownSession(str(e)) from e

    @app.exception_handler(UnknownSession)
    async def _unknown_session(request: Request, exc: UnknownSession):
        return JSONResponse(status_code=404, content={"detail": "unknown session"})

    @app.exception_handler(StepOrderError)
    async def _step_order(request: Request, exc: StepOrderError):
        return JSONResponse(
            status_code=409,
            content={"detail": str(exc), "missing": exc.missing},
        )

    # ------------------------------------------------------------------ jobs

    def job_of(session_id: str, kind: str) -> _Job | None:
        with jobs_lock:
            job = jobs.get(session_id)
        return job if job is not None and job.kind == kind else None

    def start_job(session: Session, kind: str, total: int, work) -> _Job | JSONResponse:
        with jobs_lock:
            existing = jobs.get(session.id)
            if existing is not None and existing.state == "running":
                return JSONResponse(
                    status_code=409,
                    content={"detail": f"a {existing.kind} job is already running", "missing": ""},
                )
            job = _Job(kind, total)
            jobs[session.id] = job

        def runner():
            try:
                work(job)
                job.done = job.total
                job.state = "done"
            except _Cancelled:
                job.state = "cancelled"
            except StaleJobError as e:
                job.state, job.error = "failed", str(e)
            except Exception as e:  # surfaced via status, never a crashed thread
                job.state, job.error = "failed", f"{type(e).__name__}: {e}"

        job.thread = threading.Thread(target=runner, daemon=True)
        job.thread.start()
        return job

    def cancel_job(session_id: str, kind: str) -> Response:
        job = job_of(session_id, kind)
        if job is None or job.state != "running":
            return JSONResponse(
                status_code=409,
                content={"detail": f"no running {kind} job to cancel", "missing": ""},
            )
        job.cancel.set()
        return JSONResponse({"state": "cancelling"})

    def job_status(session_id: str, kind: str) -> dict:
        job = job_of(session_id, kind)
        return {"state": "idle"} if job is None else job.progress_payload()

    # ------------------------------------------------------------- endpoints

    @app.post("/sessions", status_code=201)
    async def create_session(file: UploadFile):
        payload = await file.read()
        try:
            session = store.create(payload, filename=file.filename or "data.csv")
        except ValueError as e:
            return _validation_error("file", str(e))
        return session.summary_payload()

    @app.get("/sessions/{session_id}/summary")
    def summary(session_id: str):
        session = session_or_404(session_id)
        with session.lock:
            payload = session.summary_payload()
            if session.roles is not None:
                payload["covariate_summaries"] = [s.to_dict() for s in summarize(session.dataset)]
        return payload

    @app.put("/sessions/{session_id}/roles")
    def set_roles(session_id: str, body: RolesBody):
        session = session_or_404(session_id)
        with session.lock:
            try:
                session.set_roles(body.roles, treated_level=body.treated_level)
            except ValueError as e:
                return _validation_error("roles", str(e))
            return session.summary_payload()

    @app.put("/sessions/{session_id}/estimand")
    def set_estimand(session_id: str, body: EstimandBody):
        session = session_or_404(session_id)
        with session.lock:
            try:
                session.set_estimand(body.estimand)
            except ValueError as e:
                return _validation_error("estimand", str(e))
            return session.summary_payload()

    @app.get("/sessions/{session_id}/overlap")
    def overlap(session_id: str, bins: int = 10):
        session = session_or_404(session_id)
        with session.lock:
            if session.roles is None:
                raise StepOrderError("roles", "overlap requires roles to be completed first")
            try:
                entries = overlap_report(session.dataset, bins=bins)
            except ValueError as e:
                return _validation_error("bins", str(e), where="query")
            return {"entries": [e.to_dict() for e in entries]}

    @app.post("/sessions/{session_id}/trim")
    def trim(session_id: str, body: TrimBody):
        session = session_or_404(session_id)
        with session.lock:
            try:
                rules = [TrimRule.from_dict(r) for r in body.rules]
            except (KeyError, ValueError, TypeError) as e:
                return _validation_error("rules", f"invalid trim rule: {e}")
            if body.overlay_bins is not None and body.overlay_bins < 2:
                return _validation_error("overlay_bins", "overlay_bins must be >= 2")
            try:
                if body.dry_run:
                    result = session.preview_trim(rules, overlay_bins=body.overlay_bins)
                else:
                    result = session.commit_trim(rules)
            except ValueError as e:
                return _validation_error("rules", str(e))
            return {"dry_run": body.dry_run, **result}

    @app.post("/sessions/{session_id}/weights", status_code=202)
    def start_weights(session_id: str, body: WeightsBody | None = None):
        session = session_or_404(session_id)
        body = body or WeightsBody()
        try:
            config = EstimatorConfig.from_dict(body.config)
        except (KeyError, ValueError, TypeError) as e:
            return _validation_error("config", f"invalid estimator config: {e}")
        with session.lock:
            snapshot = session.weights_inputs()

        def work(job: _Job):
            from .balance import balance_table, recommend_method
            from .estimators import run_all

            d, estimand, revision = snapshot

            def progress(done, total):
                job.done, job.total = done, total
                if job.cancel.is_set():
                    raise _Cancelled()

            result = run_all(d, estimand, config, progress=progress)
            rows, summaries = balance_table(d, result.weight_sets, estimand)
            ranking = recommend_method(summaries)
            with session.lock:
                session.commit_weights(revision, config, result, rows, summaries, ranking)

        started = start_job(session, "weights", 9, work)
        if isinstance(started, JSONResponse):
            return started
        return {"job": "weights", **started.progress_payload()}

    @app.get("/sessions/{session_id}/weights/status")
    def weights_status(session_id: str):
        session_or_404(session_id)
        return job_status(session_id, "weights")

    @app.delete("/sessions/{session_id}/weights")
    def cancel_weights(session_id: str):
        session_or_404(session_id)
        return cancel_job(session_id, "weights")

    @app.get("/sessions/{session_id}/balance")
    def balance(session_id: str):
        session = session_or_404(session_id)
        with session.lock:
            if session.balance is None:
                raise StepOrderError("weights", "balance requires weights to be completed first")
            return {
                "rows": session.balance["rows"],
                "summaries": session.balance["summaries"],
                "ranking": session.ranking,
                "failures": session.failures,
            }

    @app.put("/sessions/{session_id}/method")
    def choose_method(session_id: str, body: MethodBody):
        session = session_or_404(session_id)
        with session.lock:
            try:
                session.choose_method(body.method_id)
            except ValueError as e:
                return _validation_error("method_id", str(e))
            return {
                "chosen": session.chosen_method,
                "recommendation": session.ranking.get("recommendation"),
                "diverged": session.method_diverged,
            }

    @app.post("/sessions/{session_id}/effect")
    def effect(session_id: str, body: EffectBody | None = None):
        session = session_or_404(session_id)
        body = body or EffectBody()
        with session.lock:
            try:
                return session.run_effect(body.model, covariate_subset=body.covariate_subset)
            except ValueError as e:
                field = "model" if "model" in str(e).lower() else "covariate_subset"
                return _validation_error(field, str(e))

    @app.post("/sessions/{session_id}/sensitivity", status_code=202)
    def start_sensitivity(session_id: str, body: SensitivityBody | None = None):
        session = session_or_404(session_id)
        body = body or SensitivityBody()
        try:
            cfg = SensitivityConfig.from_dict(body.config)
        except (KeyError, ValueError, TypeError) as e:
            return _validation_error("config", f"invalid sensitivity config: {e}")
        with session.lock:
            snapshot = session.sensitivity_inputs()
            chosen = session.effect_estimate()
        total = int(cfg.es_t_values().size * cfg.rho_y_values().size)

        def work(job: _Job):
            from .sensitivity import ov_analysis

            d, w, _, revision = snapshot

            def progress(done, total_cells):
                job.done, job.total = done, total_cells
                if job.cancel.is_set():
                    raise _Cancelled()

            analysis = ov_analysis(d, w, chosen, cfg, progress=progress)
            with session.lock:
                session.commit_sensitivity(revision, cfg, analysis)

        started = start_job(session, "sensitivity", total, work)
        if isinstance(started, JSONResponse):
            return started
        return {"job": "sensitivity", **started.progress_payload()}

    @app.get("/sessions/{session_id}/sensitivity/status")
    def sensitivity_status(session_id: str):
        session_or_404(session_id)
        return job_status(session_id, "sensitivity")

    @app.delete("/sessions/{session_id}/sensitivity")
    def cancel_sensitivity(session_id: str):
        session_or_404(session_id)
        return cancel_job(session_id, "sensitivity")

    @app.get("/sessions/{session_id}/sensitivity/result")
    def sensitivity_result(session_id: str):
        session = session_or_404(session_id)
        with session.lock:
            if session.sensitivity is None:
                raise StepOrderError(
                    "sensitivity", "no sensitivity analysis has completed for this session"
                )
            return session.sensitivity

    @app.get("/sessions/{session_id}/report")
    def report(session_id: str, request: Request):
        session = session_or_404(session_id)
        with session.lock:
            doc = build_report(session)
        accept = request.headers.get("accept", "application/json")
        if "text/markdown" in accept or "text/plain" in accept:
            return PlainTextResponse(render_markdown(doc), media_type="text/markdown")
        return doc

    @app.get("/sessions/{session_id}/export/weights.csv")
    def export_weights(session_id: str):
        session = session_or_404(session_id)
        with session.lock:
            payload = weights_csv(session)
        return Response(content=payload, media_type="text/csv")

    @app.get("/sessions/{session_id}/export/balance.csv")
    def export_balance(session_id: str):
        session = session_or_404(session_id)
        with session.lock:
            payload = balance_csv(session)
        return Response(content=payload, media_type="text/csv")

    return app

"""HTTP service exposing projects, runs, guidance, and documents.

All endpoints live under ``/api/v1``. Run jobs execute in background threads
and are observed by polling; at most one job runs per project unless the app
is created with ``allow_concurrent_runs``. Request bodies use the same
document shapes as the persisted files (canonical schema JSON, truth CSV
text). Validation failures answer 400, unknown ids 404, a busy project 409,
and a remote-backend failure that prevents any progress 502.
"""

from __future__ import annotations

import csv
import io
import logging
import threading
from pathlib import Path

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from .docgen import MODE_FULL, all_documents, origin_key
from .embedding import default_cache
from .errors import RematchError, RemoteError
from .evaluation import make_report
from .pipeline import (
    RunCheckpoint,
    config_from_dict,
    matrix_from_dict,
    matrix_to_dict,
    run_rematch,
)
from .ranking import TranscriptLogger
from .schema import (
    NA,
    GroundTruth,
    MatchPair,
    Schema,
    pairs_from_rows,
    schema_from_dict,
    validate_schema,
)
from .store import (
    STATE_DONE,
    STATE_FAILED,
    STATE_PARTIAL,
    STATE_QUEUED,
    STATE_RUNNING,
    ProjectStore,
)

logger = logging.getLogger(__name__)

API = "/api/v1"


class ProjectCreate(BaseModel):
    source: dict
    target: dict
    truth: str | None = None
    name: str = ""


class RunCreate(BaseModel):
    j: int = 1
    k: int = 1
    mode: str = MODE_FULL
    retrieval: bool = True
    embedder: dict = {}
    ranker: dict = {}
    tag: str = ""
    resume: str | None = None
    wait: bool = False


class GuidancePair(BaseModel):
    src_table: str
    src_attr: str
    tgt_table: str
    tgt_attr: str


def _error(status: int, message: str, field: str | None = None) -> JSONResponse:
    body: dict = {"error": message}
    if field is not None:
        body["field"] = field
    return JSONResponse(status_code=status, content=body)


def _parse_truth_csv(text: str) -> GroundTruth:
    return pairs_from_rows(list(csv.reader(io.StringIO(text))))


def _partial_manifest(store: ProjectStore, project_id: str, run_id: str,
                      source: Schema) -> dict:
    """Assemble a manifest from checkpointed tables only, in source order."""
    checkpoint = RunCheckpoint(store.checkpoint_path(project_id, run_id))
    job = store.load_job(project_id, run_id)
    rows: list[dict] = []
    diagnostics: list[dict] = []
    counts: dict[str, int] = {}
    timings: dict[str, float] = {}
    for table in source.tables:
        result = checkpoint.table_result(table.name)
        if result is None:
            continue
        rows.extend(result["rows"])
        diagnostics.extend(result["diagnostics"])
        counts[table.name] = int(result["n_candidates"])
        timings[table.name] = float(result["seconds"])
    avg = sum(counts.values()) / len(counts) if counts else 0.0
    return {
        "source_schema": source.name,
        "target_schema": store.load_target(project_id).name,
        "config": job["config"],
        "candidate_counts": counts,
        "avg_candidate_tables": avg,
        "timings": timings,
        "diagnostics": diagnostics,
        "rows": rows,
    }


def create_app(root: str | Path, ui_dir: str | Path | None = None,
               allow_concurrent_runs: bool = False) -> FastAPI:
    """Build the service around one persistence root."""
    app = FastAPI(title="rematch", version="0.1.0")
    store = ProjectStore(root)
    app.state.store = store
    active: dict[str, str] = {}  # project id -> run id currently executing
    active_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def handle_validation(request: Request, exc: RequestValidationError):
        detail = exc.errors()[0] if exc.errors() else {}
        field = ".".join(str(part) for part in detail.get("loc", ())[1:]) or None
        return _error(400, detail.get("msg", "invalid request body"), field)

    @app.exception_handler(RemoteError)
    async def handle_remote(request: Request, exc: RemoteError):
        return _error(502, str(exc))

    @app.exception_handler(RematchError)
    async def handle_domain(request: Request, exc: RematchError):
        return _error(400, str(exc))

    def _not_found(kind: str, item_id: str) -> JSONResponse:
        return _error(404, f"unknown {kind} {item_id!r}")

    def _project_summary(project_id: str) -> dict:
        meta = store.project_meta(project_id)
        source = store.load_source(project_id)
        target = store.load_target(project_id)
        runs = []
        for run_id in store.run_ids(project_id):
            job = store.load_job(project_id, run_id)
            runs.append({
                "id": run_id,
                "state": job["state"],
                "j": job["config"].get("j"),
                "k": job["config"].get("k"),
                "created": job["created"],
            })
        return {
            "id": project_id,
            "name": meta.get("name", ""),
            "source": {"name": source.name, "n_tables": len(source.tables),
                       "n_attributes": source.n_attributes},
            "target": {"name": target.name, "n_tables": len(target.tables),
                       "n_attributes": target.n_attributes},
            "has_truth": store.load_truth(project_id) is not None,
            "guidance": [[p.src_table, p.src_attr, p.tgt_table, p.tgt_attr]
                         for p in store.guidance(project_id)],
            "runs": runs,
        }

    def _execute(project_id: str, run_id: str) -> None:
        job = store.load_job(project_id, run_id)
        if job["state"] == STATE_QUEUED:
            store.advance_state(project_id, run_id, STATE_RUNNING)
        config = config_from_dict(job["config"])
        source = store.load_source(project_id)
        target = store.load_target(project_id)
        checkpoint = store.checkpoint_path(project_id, run_id)
        transcript = TranscriptLogger(store.transcript_path(project_id, run_id))
        try:
            matrix = run_rematch(source, target, config, cache=default_cache(),
                                 checkpoint=checkpoint, transcript=transcript)
            store.save_manifest(project_id, run_id, matrix_to_dict(matrix))
            store.advance_state(project_id, run_id, STATE_DONE)
        except RematchError as exc:
            completed = RunCheckpoint(checkpoint).completed_tables()
            state = STATE_PARTIAL if completed else STATE_FAILED
            logger.error("run %s %s: %s", run_id, state, exc)
            store.advance_state(project_id, run_id, state, error=str(exc))
        finally:
            with active_lock:
                if active.get(project_id) == run_id:
                    del active[project_id]

    def _run_envelope(project_id: str, run_id: str) -> dict:
        job = store.load_job(project_id, run_id)
        source = store.load_source(project_id)
        checkpoint = RunCheckpoint(store.checkpoint_path(project_id, run_id))
        completed = [t.name for t in source.tables
                     if t.name in checkpoint.completed_tables()]
        result = None
        if job["state"] == STATE_DONE:
            result = store.load_manifest(project_id, run_id)
        elif job["state"] == STATE_PARTIAL:
            result = _partial_manifest(store, project_id, run_id, source)
        return {
            "id": run_id,
            "project_id": project_id,
            "state": job["state"],
            "config": job["config"],
            "error": job["error"],
            "created": job["created"],
            "updated": job["updated"],
            "n_tables": len(source.tables),
            "completed_tables": completed,
            "partial": job["state"] == STATE_PARTIAL,
            "result": result,
        }

    @app.post(API + "/projects", status_code=201)
    def create_project(body: ProjectCreate) -> dict:
        source = schema_from_dict(body.source, origin="request.source")
        validate_schema(source)
        target = schema_from_dict(body.target, origin="request.target")
        validate_schema(target)
        truth = _parse_truth_csv(body.truth) if body.truth else None
        project_id = store.create_project(source, target, truth, name=body.name)
        return _project_summary(project_id)

    @app.get(API + "/projects/{project_id}")
    def get_project(project_id: str):
        if not store.has_project(project_id):
            return _not_found("project", project_id)
        return _project_summary(project_id)

    @app.post(API + "/projects/{project_id}/runs", status_code=202)
    def create_run(project_id: str, body: RunCreate):
        if not store.has_project(project_id):
            return _not_found("project", project_id)
        with store.lock(project_id):
            with active_lock:
                busy = active.get(project_id)
                if busy is not None and not allow_concurrent_runs:
                    return _error(409, f"run {busy!r} is already executing "
                                       f"on this project")
                if body.resume is not None:
                    run_id = body.resume
                    owner = store.find_run(run_id)
                    if owner != project_id:
                        return _not_found("run", run_id)
                    state = store.load_job(project_id, run_id)["state"]
                    if state in (STATE_DONE, STATE_FAILED):
                        return _error(409, f"run {run_id!r} is {state}; "
                                           f"only unfinished runs resume")
                else:
                    try:
                        config = config_from_dict({
                            "j": body.j, "k": body.k, "mode": body.mode,
                            "retrieval": body.retrieval,
                            "embedder": body.embedder, "ranker": body.ranker,
                            "tag": body.tag,
                            "guidance": [
                                [p.src_table, p.src_attr, p.tgt_table, p.tgt_attr]
                                for p in store.guidance(project_id)],
                        })
                    except TypeError as exc:
                        return _error(400, f"bad backend spec: {exc}")
                    run_id = store.create_run(project_id, config)
                active[project_id] = run_id
        if body.wait:
            _execute(project_id, run_id)
            job = store.load_job(project_id, run_id)
            if job["state"] == STATE_FAILED:
                raise RemoteError(job["error"] or "run failed without progress")
            return _run_envelope(project_id, run_id)
        thread = threading.Thread(target=_execute, args=(project_id, run_id),
                                  daemon=True)
        thread.start()
        return {"id": run_id, "project_id": project_id,
                "state": store.load_job(project_id, run_id)["state"]}

    @app.get(API + "/runs/{run_id}")
    def get_run(run_id: str):
        project_id = store.find_run(run_id)
        if project_id is None:
            return _not_found("run", run_id)
        return _run_envelope(project_id, run_id)

    @app.get(API + "/runs/{run_id}/eval")
    def eval_run(run_id: str, k: str = "1"):
        project_id = store.find_run(run_id)
        if project_id is None:
            return _not_found("run", run_id)
        truth = store.load_truth(project_id)
        if truth is None:
            return _error(400, "project has no ground truth to evaluate against")
        envelope = _run_envelope(project_id, run_id)
        if envelope["result"] is None:
            return _error(400, f"run {run_id!r} has no results yet "
                               f"(state {envelope['state']!r})")
        try:
            k_values = [int(part) for part in k.split(",") if part.strip()]
        except ValueError:
            return _error(400, f"bad k list {k!r}", field="k")
        matrix = matrix_from_dict(envelope["result"])
        report = make_report(matrix, truth, k_values)
        return report.to_dict()

    def _validated_guidance(project_id: str, body: GuidancePair) -> MatchPair | JSONResponse:
        if NA in (body.src_table.strip().upper(), body.src_attr.strip().upper(),
                  body.tgt_table.strip().upper(), body.tgt_attr.strip().upper()):
            return _error(400, "NA is not a guidance mapping", field="tgt_table")
        source = store.load_source(project_id)
        table = source.table(body.src_table)
        if table is None:
            return _error(400, f"unknown source table {body.src_table!r}",
                          field="src_table")
        if table.attribute(body.src_attr) is None:
            return _error(400, f"unknown source attribute "
                               f"{body.src_table}.{body.src_attr}",
                          field="src_attr")
        target = store.load_target(project_id)
        tgt_table = target.table(body.tgt_table)
        if tgt_table is None:
            return _error(400, f"unknown target table {body.tgt_table!r}",
                          field="tgt_table")
        if tgt_table.attribute(body.tgt_attr) is None:
            return _error(400, f"unknown target attribute "
                               f"{body.tgt_table}.{body.tgt_attr}",
                          field="tgt_attr")
        return MatchPair(src_table=table.name,
                         src_attr=table.attribute(body.src_attr).name,
                         tgt_table=tgt_table.name,
                         tgt_attr=tgt_table.attribute(body.tgt_attr).name)

    def _guidance_response(project_id: str) -> dict:
        return {"guidance": [[p.src_table, p.src_attr, p.tgt_table, p.tgt_attr]
                             for p in store.guidance(project_id)]}

    @app.post(API + "/projects/{project_id}/guidance")
    def add_guidance(project_id: str, body: GuidancePair):
        if not store.has_project(project_id):
            return _not_found("project", project_id)
        with store.lock(project_id):
            pair = _validated_guidance(project_id, body)
            if isinstance(pair, JSONResponse):
                return pair
            current = store.guidance(project_id)
            if pair not in current:
                store.set_guidance(project_id, current + [pair])
        return _guidance_response(project_id)

    @app.delete(API + "/projects/{project_id}/guidance")
    def remove_guidance(project_id: str, body: GuidancePair):
        if not store.has_project(project_id):
            return _not_found("project", project_id)
        wanted = (body.src_table.strip().lower(), body.src_attr.strip().lower(),
                  body.tgt_table.strip().lower(), body.tgt_attr.strip().lower())
        with store.lock(project_id):
            current = store.guidance(project_id)
            kept = [p for p in current
                    if (p.src_table.lower(), p.src_attr.lower(),
                        (p.tgt_table or "").lower(),
                        (p.tgt_attr or "").lower()) != wanted]
            if len(kept) == len(current):
                return _error(404, "no such guidance pair")
            store.set_guidance(project_id, kept)
        return _guidance_response(project_id)

    @app.get(API + "/projects/{project_id}/docs/{origin}")
    def get_document(project_id: str, origin: str):
        if not store.has_project(project_id):
            return _not_found("project", project_id)
        for schema in (store.load_source(project_id),
                       store.load_target(project_id)):
            if not origin.startswith(schema.name + "__"):
                continue
            for doc in all_documents(schema):
                if origin_key(doc.origin) == origin:
                    return PlainTextResponse(doc.render())
        return _not_found("document", origin)

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app

"""Directory-per-project persistence for runs, guidance, and schemas.

Everything lives under one root as plain files:

    projects/{id}/project.json     id, name, timestamps, guidance pairs
    projects/{id}/source.json      canonical source schema
    projects/{id}/target.json      canonical target schema
    projects/{id}/truth.csv        optional ground truth
    projects/{id}/runs/{rid}/job.json         run state + config + error
    projects/{id}/runs/{rid}/manifest.json    prediction matrix when done
    projects/{id}/runs/{rid}/checkpoint.json  per-table progress during a run

No database: the scale is tens of tables, and plain files make every run
auditable and trivially copyable.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from pathlib import Path

from .errors import InvalidRequest
from .pipeline import PipelineConfig, config_from_dict, config_to_dict
from .schema import (
    GroundTruth,
    MatchPair,
    Schema,
    load_ground_truth,
    load_schema,
    save_ground_truth,
    save_schema,
)

logger = logging.getLogger(__name__)

STATE_QUEUED = "queued"
STATE_RUNNING = "running"
STATE_PARTIAL = "partial"
STATE_DONE = "done"
STATE_FAILED = "failed"

# Transition ranks; a job may only move up, and done/failed are terminal.
STATE_RANK = {STATE_QUEUED: 0, STATE_RUNNING: 1, STATE_PARTIAL: 2,
              STATE_DONE: 3, STATE_FAILED: 3}


def _new_id() -> str:
    return uuid.uuid4().hex[:12]


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    tmp.replace(path)


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


class ProjectStore:
    """File-backed projects and runs, with one mutation lock per project."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "projects").mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def lock(self, project_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(project_id, threading.Lock())

    def _project_dir(self, project_id: str) -> Path:
        return self.root / "projects" / project_id

    def _run_dir(self, project_id: str, run_id: str) -> Path:
        return self._project_dir(project_id) / "runs" / run_id

    # --- projects -----------------------------------------------------------

    def create_project(self, source: Schema, target: Schema,
                       truth: GroundTruth | None = None, name: str = "") -> str:
        project_id = _new_id()
        pdir = self._project_dir(project_id)
        pdir.mkdir(parents=True)
        save_schema(source, pdir / "source.json")
        save_schema(target, pdir / "target.json")
        if truth is not None:
            save_ground_truth(truth, pdir / "truth.csv")
        _write_json(pdir / "project.json", {
            "id": project_id,
            "name": name,
            "created": time.time(),
            "guidance": [],
        })
        logger.info("created project %s (%s -> %s)", project_id,
                    source.name, target.name)
        return project_id

    def has_project(self, project_id: str) -> bool:
        return (self._project_dir(project_id) / "project.json").exists()

    def project_ids(self) -> list[str]:
        base = self.root / "projects"
        return sorted(p.name for p in base.iterdir()
                      if (p / "project.json").exists())

    def project_meta(self, project_id: str) -> dict:
        return _read_json(self._project_dir(project_id) / "project.json")

    def load_source(self, project_id: str) -> Schema:
        return load_schema(self._project_dir(project_id) / "source.json")

    def load_target(self, project_id: str) -> Schema:
        return load_schema(self._project_dir(project_id) / "target.json")

    def load_truth(self, project_id: str) -> GroundTruth | None:
        path = self._project_dir(project_id) / "truth.csv"
        if not path.exists():
            return None
        return load_ground_truth(path)

    # --- guidance -----------------------------------------------------------

    def guidance(self, project_id: str) -> list[MatchPair]:
        meta = self.project_meta(project_id)
        return [MatchPair(src_table=row[0], src_attr=row[1],
                          tgt_table=row[2], tgt_attr=row[3])
                for row in meta.get("guidance", [])]

    def set_guidance(self, project_id: str, pairs: list[MatchPair]) -> None:
        meta = self.project_meta(project_id)
        meta["guidance"] = [[p.src_table, p.src_attr, p.tgt_table, p.tgt_attr]
                            for p in pairs]
        _write_json(self._project_dir(project_id) / "project.json", meta)

    # --- runs ---------------------------------------------------------------

    def create_run(self, project_id: str, config: PipelineConfig) -> str:
        run_id = _new_id()
        self.save_job(project_id, run_id, {
            "id": run_id,
            "project_id": project_id,
            "state": STATE_QUEUED,
            "config": config_to_dict(config),
            "error": None,
            "created": time.time(),
            "updated": time.time(),
        })
        return run_id

    def run_ids(self, project_id: str) -> list[str]:
        runs = self._project_dir(project_id) / "runs"
        if not runs.exists():
            return []
        found = [p.name for p in runs.iterdir() if (p / "job.json").exists()]
        return sorted(found, key=lambda rid: self.load_job(project_id, rid)["created"])

    def find_run(self, run_id: str) -> str | None:
        """Locate a run's project by scanning; run ids are globally unique."""
        for project_id in self.project_ids():
            if (self._run_dir(project_id, run_id) / "job.json").exists():
                return project_id
        return None

    def load_job(self, project_id: str, run_id: str) -> dict:
        return _read_json(self._run_dir(project_id, run_id) / "job.json")

    def save_job(self, project_id: str, run_id: str, job: dict) -> None:
        job["updated"] = time.time()
        _write_json(self._run_dir(project_id, run_id) / "job.json", job)

    def advance_state(self, project_id: str, run_id: str, state: str,
                      error: str | None = None) -> dict:
        """Move a job along the state chain; backward moves are rejected."""
        job = self.load_job(project_id, run_id)
        current = job["state"]
        terminal = current in (STATE_DONE, STATE_FAILED)
        if (terminal and state != current) or STATE_RANK[state] < STATE_RANK[current]:
            raise InvalidRequest(
                f"job {run_id} cannot move {current} -> {state}")
        job["state"] = state
        job["error"] = error
        self.save_job(project_id, run_id, job)
        return job

    def run_config(self, project_id: str, run_id: str) -> PipelineConfig:
        return config_from_dict(self.load_job(project_id, run_id)["config"])

    def checkpoint_path(self, project_id: str, run_id: str) -> Path:
        return self._run_dir(project_id, run_id) / "checkpoint.json"

    def transcript_path(self, project_id: str, run_id: str) -> Path:
        return self._run_dir(project_id, run_id) / "transcript.jsonl"

    def save_manifest(self, project_id: str, run_id: str, manifest: dict) -> None:
        _write_json(self._run_dir(project_id, run_id) / "manifest.json", manifest)

    def load_manifest(self, project_id: str, run_id: str) -> dict | None:
        path = self._run_dir(project_id, run_id) / "manifest.json"
        if not path.exists():
            return None
        return _read_json(path)

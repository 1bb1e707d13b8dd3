"""End-to-end matching runs: retrieval, guidance, ranking, and grid sweeps.

A run compiles both schemas into document corpora, embeds the target table
documents once, retrieves a candidate table set per source table (or takes
every table when retrieval is off), applies guidance, and asks the ranking
backend for a top-K mapping per table. Results land in a ``PredictionMatrix``
with one row per source attribute plus per-table candidate counts, timings,
and parser diagnostics. Completed tables checkpoint to disk so an interrupted
run resumes without repeating work.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import requests

from .docgen import MODE_FULL, MODES, Corpus, build_corpora
from .embedding import (
    CandidateSet,
    EmbedderSpec,
    EmbeddingCache,
    build_candidate_set,
    full_candidate_set,
    make_embedder,
)
from .errors import InvalidRequest, RematchError, UnknownTargetTable
from .ranking import (
    KIND_REMOTE_LLM,
    Diagnostic,
    RankedRow,
    RankerSpec,
    TranscriptLogger,
    create_topk_mapping,
    make_ranker,
)
from .schema import GroundTruth, MatchPair, Schema

logger = logging.getLogger(__name__)

GUIDANCE_ANCHOR = "SUBJECT_ID"


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that determines a run's output, minus the schemas."""

    j: int = 1
    k: int = 1
    mode: str = MODE_FULL
    retrieval: bool = True
    embedder: EmbedderSpec = field(default_factory=EmbedderSpec)
    ranker: RankerSpec = field(default_factory=RankerSpec)
    guidance: tuple[MatchPair, ...] = ()
    tag: str = ""
    table_parallelism: int = 4

    def __post_init__(self) -> None:
        if self.retrieval and self.j < 1:
            raise InvalidRequest(f"J must be >= 1 when retrieval is on, got {self.j}")
        if self.k < 1:
            raise InvalidRequest(f"K must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise InvalidRequest(f"unknown mode {self.mode!r}")
        if self.table_parallelism < 1:
            raise InvalidRequest("table_parallelism must be >= 1")


@dataclass
class PredictionMatrix:
    """All ranked rows for a run plus enough context to evaluate them."""

    rows: tuple[RankedRow, ...]
    config: PipelineConfig
    candidate_counts: dict[str, int]
    diagnostics: tuple[Diagnostic, ...] = ()
    timings: dict[str, float] = field(default_factory=dict)
    source_schema: str = ""
    target_schema: str = ""

    @property
    def width(self) -> int:
        return self.config.k

    @property
    def avg_candidate_tables(self) -> float:
        if not self.candidate_counts:
            return 0.0
        return sum(self.candidate_counts.values()) / len(self.candidate_counts)

    def row_for(self, src_table: str, src_attr: str) -> RankedRow | None:
        key = (src_table.strip().lower(), src_attr.strip().lower())
        for row in self.rows:
            if (row.src_table.strip().lower(), row.src_attr.strip().lower()) == key:
                return row
        return None


def config_to_dict(config: PipelineConfig) -> dict:
    return {
        "j": config.j,
        "k": config.k,
        "mode": config.mode,
        "retrieval": config.retrieval,
        "embedder": {
            "kind": config.embedder.kind,
            "dim": config.embedder.dim,
            "model": config.embedder.model,
            "base_url": config.embedder.base_url,
        },
        "ranker": {
            "kind": config.ranker.kind,
            "model": config.ranker.model,
            "base_url": config.ranker.base_url,
            "temperature": config.ranker.temperature,
            "top_p": config.ranker.top_p,
            "max_tokens": config.ranker.max_tokens,
            "seed": config.ranker.seed,
            "frequency_penalty": config.ranker.frequency_penalty,
            "presence_penalty": config.ranker.presence_penalty,
        },
        "guidance": [
            [p.src_table, p.src_attr, p.tgt_table, p.tgt_attr]
            for p in config.guidance
        ],
        "tag": config.tag,
    }


def config_from_dict(doc: dict) -> PipelineConfig:
    embedder = EmbedderSpec(**{**{"kind": "local-hash-trigram"},
                               **doc.get("embedder", {})})
    ranker = RankerSpec(**doc.get("ranker", {}))
    guidance = tuple(
        MatchPair(src_table=row[0], src_attr=row[1],
                  tgt_table=row[2], tgt_attr=row[3])
        for row in doc.get("guidance", [])
    )
    return PipelineConfig(
        j=int(doc.get("j", 1)),
        k=int(doc.get("k", 1)),
        mode=doc.get("mode", MODE_FULL),
        retrieval=bool(doc.get("retrieval", True)),
        embedder=embedder,
        ranker=ranker,
        guidance=guidance,
        tag=doc.get("tag", ""),
    )


def row_to_dict(row: RankedRow) -> dict:
    return {
        "src_table": row.src_table,
        "src_attr": row.src_attr,
        "targets": [[t, a] for t, a in row.targets],
        "flags": list(row.flags),
    }


def row_from_dict(doc: dict) -> RankedRow:
    return RankedRow(
        src_table=doc["src_table"],
        src_attr=doc["src_attr"],
        targets=tuple((pair[0], pair[1]) for pair in doc["targets"]),
        flags=tuple(doc.get("flags", [])),
    )


def matrix_to_dict(matrix: PredictionMatrix) -> dict:
    return {
        "source_schema": matrix.source_schema,
        "target_schema": matrix.target_schema,
        "config": config_to_dict(matrix.config),
        "candidate_counts": dict(matrix.candidate_counts),
        "avg_candidate_tables": matrix.avg_candidate_tables,
        "timings": dict(matrix.timings),
        "diagnostics": [
            {"kind": d.kind, "src_table": d.src_table,
             "src_attr": d.src_attr, "detail": d.detail}
            for d in matrix.diagnostics
        ],
        "rows": [row_to_dict(row) for row in matrix.rows],
    }


def matrix_from_dict(doc: dict) -> PredictionMatrix:
    return PredictionMatrix(
        rows=tuple(row_from_dict(row) for row in doc["rows"]),
        config=config_from_dict(doc["config"]),
        candidate_counts={str(k): int(v)
                          for k, v in doc.get("candidate_counts", {}).items()},
        diagnostics=tuple(
            Diagnostic(kind=d["kind"], src_table=d.get("src_table", ""),
                       src_attr=d.get("src_attr", ""), detail=d.get("detail", ""))
            for d in doc.get("diagnostics", [])
        ),
        timings={str(k): float(v) for k, v in doc.get("timings", {}).items()},
        source_schema=doc.get("source_schema", ""),
        target_schema=doc.get("target_schema", ""),
    )


def apply_guidance(candidates: CandidateSet, guidance: Sequence[MatchPair],
                   target_schema: Schema) -> CandidateSet:
    """Union guided target tables into a candidate set.

    Only pairs for this candidate set's source table apply; null pairs are
    skipped. Guidance never removes tables, and applying the same pairs twice
    is a no-op. Result keeps target-schema order.
    """
    wanted = candidates.source_table.strip().lower()
    extra: set[str] = set()
    for pair in guidance:
        if pair.is_null or pair.src_table.strip().lower() != wanted:
            continue
        table = target_schema.table(pair.tgt_table or "")
        if table is None:
            raise UnknownTargetTable(
                f"guidance for {pair.src_table}.{pair.src_attr} names unknown "
                f"target table {pair.tgt_table!r}")
        extra.add(table.name.lower())
    if not extra:
        return candidates
    present = {name.lower() for name in candidates.tables}
    merged = present | extra
    ordered = tuple(t.name for t in target_schema.tables if t.name.lower() in merged)
    # Candidate tables absent from the target schema cannot occur here: both
    # retrieval and guidance resolve names against the same schema.
    return CandidateSet(source_table=candidates.source_table, tables=ordered,
                        per_attribute_hits=candidates.per_attribute_hits)


def auto_guidance(source: Schema, truth: GroundTruth) -> list[MatchPair]:
    """Pick one anchor mapping per source table from the ground truth.

    Prefers the table's SUBJECT_ID attribute when it is mapped; otherwise the
    first primary-key attribute with a non-NA mapping; otherwise nothing for
    that table.
    """
    grouped = truth.by_source()

    def mapped_pair(table_name: str, attr_name: str) -> MatchPair | None:
        pairs = grouped.get((table_name.lower(), attr_name.lower()), [])
        for pair in pairs:
            if not pair.is_null:
                return pair
        return None

    picks: list[MatchPair] = []
    for table in source.tables:
        anchor = table.attribute(GUIDANCE_ANCHOR)
        pair = mapped_pair(table.name, anchor.name) if anchor else None
        if pair is None:
            for attr in table.primary_keys:
                pair = mapped_pair(table.name, attr.name)
                if pair is not None:
                    break
        if pair is not None:
            picks.append(pair)
    return picks


class RunCheckpoint:
    """Per-table results persisted as one JSON file, enabling resume."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._state: dict = {"tables": {}}
        if self.path.exists():
            try:
                self._state = json.loads(self.path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                logger.warning("ignoring unreadable checkpoint %s: %s", self.path, exc)

    def completed_tables(self) -> set[str]:
        return set(self._state.get("tables", {}))

    def table_result(self, table_name: str) -> dict | None:
        return self._state.get("tables", {}).get(table_name)

    def record(self, table_name: str, result: dict) -> None:
        with self._lock:
            self._state.setdefault("tables", {})[table_name] = result
            self.path.parent.mkdir(parents=True, exist_ok=True)
            tmp = self.path.with_suffix(".tmp")
            tmp.write_text(json.dumps(self._state), encoding="utf-8")
            tmp.replace(self.path)


def run_rematch(source: Schema, target: Schema, config: PipelineConfig,
                cache: EmbeddingCache | None = None,
                checkpoint: str | Path | RunCheckpoint | None = None,
                session: requests.Session | None = None,
                transcript: TranscriptLogger | None = None) -> PredictionMatrix:
    """Execute one full matching run.

    With a checkpoint, tables already recorded are loaded instead of re-run,
    and every newly completed table is persisted before the run continues; a
    failure message then names the checkpoint so the caller can resume.
    """
    started = time.time()
    source_corpus, target_corpus = build_corpora(source, target, config.mode)
    embedder = make_embedder(config.embedder, cache, session)
    ranker = make_ranker(config.ranker, source_schema=source, target_schema=target,
                         embedder=embedder, mode=config.mode, session=session)

    table_docs = list(target_corpus)
    table_vectors = list(zip(
        [doc.origin[1] for doc in table_docs],
        embedder.embed_texts([doc.render() for doc in table_docs]),
    ))

    store: RunCheckpoint | None
    if checkpoint is None:
        store = None
    elif isinstance(checkpoint, RunCheckpoint):
        store = checkpoint
    else:
        store = RunCheckpoint(checkpoint)

    def process_table(table) -> dict:
        if store is not None:
            prior = store.table_result(table.name)
            if prior is not None:
                return prior
        table_started = time.time()
        docs = [source_corpus.require(table.name, attr.name)
                for attr in table.attributes]
        if config.retrieval:
            attr_vectors = dict(zip(
                [doc.origin[2] for doc in docs],
                embedder.embed_texts([doc.render() for doc in docs]),
            ))
            candidates = build_candidate_set(table, attr_vectors, table_vectors,
                                             config.j)
        else:
            candidates = full_candidate_set(table, [n for n, _ in table_vectors])
        candidates = apply_guidance(candidates, config.guidance, target)
        rows, diagnostics = create_topk_mapping(
            table, docs, candidates, target, target_corpus, ranker, config.k,
            guidance=config.guidance, transcript=transcript)
        result = {
            "rows": [row_to_dict(row) for row in rows],
            "diagnostics": [
                {"kind": d.kind, "src_table": d.src_table,
                 "src_attr": d.src_attr, "detail": d.detail}
                for d in diagnostics
            ],
            "n_candidates": len(candidates.tables),
            "seconds": time.time() - table_started,
        }
        if store is not None:
            store.record(table.name, result)
        return result

    workers = config.table_parallelism
    if config.ranker.kind != KIND_REMOTE_LLM:
        workers = 1
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(process_table, source.tables))
        else:
            results = [process_table(table) for table in source.tables]
    except RematchError as exc:
        if store is not None:
            raise type(exc)(
                f"{exc} [partial results checkpointed at {store.path}; re-run "
                f"with the same checkpoint to resume]") from exc
        raise

    all_rows: list[RankedRow] = []
    all_diags: list[Diagnostic] = []
    counts: dict[str, int] = {}
    timings: dict[str, float] = {}
    for table, result in zip(source.tables, results):
        all_rows.extend(row_from_dict(doc) for doc in result["rows"])
        all_diags.extend(
            Diagnostic(kind=d["kind"], src_table=d.get("src_table", ""),
                       src_attr=d.get("src_attr", ""), detail=d.get("detail", ""))
            for d in result["diagnostics"])
        counts[table.name] = int(result["n_candidates"])
        timings[table.name] = float(result["seconds"])
    timings["total"] = time.time() - started

    return PredictionMatrix(
        rows=tuple(all_rows),
        config=config,
        candidate_counts=counts,
        diagnostics=tuple(all_diags),
        timings=timings,
        source_schema=source.name,
        target_schema=target.name,
    )


@dataclass
class GridReport:
    """Accuracy per (J, K) cell plus average candidate-set size per J."""

    j_values: tuple[int, ...]
    k_values: tuple[int, ...]
    accuracy: dict[tuple[int, int], float] = field(default_factory=dict)
    avg_tables: dict[int, float] = field(default_factory=dict)
    errors: dict[tuple[int, int], str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "j_values": list(self.j_values),
            "k_values": list(self.k_values),
            "cells": [
                {"j": j, "k": k, "accuracy": self.accuracy.get((j, k)),
                 "error": self.errors.get((j, k))}
                for j in self.j_values for k in self.k_values
            ],
            "avg_tables": {str(j): v for j, v in self.avg_tables.items()},
        }


def grid_search(source: Schema, target: Schema, truth: GroundTruth,
                j_values: Sequence[int], k_values: Sequence[int],
                config: PipelineConfig,
                cache: EmbeddingCache | None = None,
                session: requests.Session | None = None) -> GridReport:
    """Run the full (J, K) grid. Cells are independent: a failing cell records
    its error and the sweep continues. One shared cache keeps embeddings from
    being recomputed across cells."""
    from .evaluation import accuracy_at_k, exclude_ambiguous

    if not j_values or not k_values:
        raise InvalidRequest("grid needs at least one J and one K value")
    shared_cache = cache if cache is not None else EmbeddingCache(None)
    clean_truth, _ = exclude_ambiguous(truth)
    report = GridReport(j_values=tuple(j_values), k_values=tuple(k_values))
    for j in report.j_values:
        for k in report.k_values:
            cell = replace(config, j=j, k=k)
            try:
                matrix = run_rematch(source, target, cell, cache=shared_cache,
                                     session=session)
                report.accuracy[(j, k)] = accuracy_at_k(matrix, clean_truth, k)
                report.avg_tables.setdefault(j, matrix.avg_candidate_tables)
            except RematchError as exc:
                logger.error("grid cell J=%d K=%d failed: %s", j, k, exc)
                report.errors[(j, k)] = str(exc)
    return report

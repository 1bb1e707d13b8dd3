"""Top-K match prompting, ranking backends, and response parsing.

The prompt layout is fixed: a system preamble (parameterized only by K), then
an expected-output sample, the indexed source attribute list, the source table
document, the indexed target attribute list, one document per candidate target
table, an optional known-mappings block, and a closing reminder. Prompt
construction is pure, so identical inputs yield byte-identical prompts.

Two ranking backends share the ``rank(prompt) -> raw text`` interface: a
remote chat-completions model and a deterministic local oracle that orders
candidate target attributes by document cosine similarity. Responses go
through a total parser that never raises on malformed model output beyond
``Unparseable`` (no mapping object at all); everything else becomes rows plus
diagnostics.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import requests

from .docgen import MODE_FULL, Corpus, Document, attribute_to_doc
from .embedding import Embedder, cosine_similarity, post_with_retry
from .errors import (
    ContextOverflow,
    InvalidRequest,
    MissingDocument,
    Unparseable,
)
from .schema import MatchPair, Schema, Table

logger = logging.getLogger(__name__)

KIND_REMOTE_LLM = "remote-llm"
KIND_ORACLE = "local-similarity-oracle"

ENV_GEN_MODEL = "REMATCH_GEN_MODEL"
ENV_API_BASE = "REMATCH_API_BASE"
ENV_API_KEY = "REMATCH_API_KEY"

SYSTEM_TEMPLATE = (
    "You are an expert in databases, and schema matching at top k specifically. "
    "Your task is to create matches between source and target tables and attributes. "
    "For each attribute from the source you always suggest the top {k} most relevant "
    "tables and columns from the target. You are excellent at this task.\n"
    "If none of the columns are relevant,  the last table and column should be "
    "\"NA\", \"NA\". This value may appear only once per mapping!\n"
    "Your job is to match the schemas. You never provide explanations, code or "
    "anything else, only results. Below are the two schemas.\n"
    "Create top k matches between source and target tables and columns.\n"
    "Make sure to match the entire input. Make sure to return the results in the "
    "following json format with top {k} target results foreach input in source."
)

CLOSING_LINE = "Remember to match the entire input. Make sure to return only the results!"

NA_TOKEN = "NA"

DIAG_MISSING_ROW = "missing-row"
DIAG_EXTRA_ROW = "extra-row"
DIAG_HALLUCINATED = "hallucinated-target"
DIAG_DUPLICATE_NA = "duplicate-na"
DIAG_SHORT_ROW = "short-row"
DIAG_UNRESOLVED = "unresolved"

FLAG_UNRESOLVED = "unresolved"


@dataclass(frozen=True)
class RankerSpec:
    """Backend choice plus generation parameters (defaults pinned for
    reproducibility)."""

    kind: str = KIND_ORACLE
    model: str = ""
    base_url: str = ""
    temperature: float = 0.5
    top_p: float = 0.9
    max_tokens: int = 4096
    seed: int = 42
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0
    max_retries: int = 3
    max_prompt_chars: int = 100_000


@dataclass(frozen=True)
class MatchPrompt:
    """A fully rendered prompt for one source table."""

    system_text: str
    user_text: str
    k: int
    source_table: str
    candidate_tables: tuple[str, ...]
    source_attrs: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.system_text) + len(self.user_text)

    def render(self) -> str:
        return f"{self.system_text}\n\n{self.user_text}"


@dataclass(frozen=True)
class RankedRow:
    """Ordered top-K target pairs for one source attribute; ``None`` encodes NA."""

    src_table: str
    src_attr: str
    targets: tuple[tuple[str | None, str | None], ...]
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class Diagnostic:
    """One parser or resolution finding, attached to a source attribute when
    one is identifiable."""

    kind: str
    src_table: str = ""
    src_attr: str = ""
    detail: str = ""


def expected_output_block(k: int) -> str:
    entry_parts = ["'SRC_ENT': 'SOURCE_TABLE_NAME'", "'SRC_ATT': 'SOURCE_COLUMN_NAME'"]
    for i in range(1, k + 1):
        entry_parts.append(f"'TGT_ENT{i}': 'TARGET_TABLE_NAME{i}'")
        entry_parts.append(f"'TGT_ATT{i}': 'TARGET_COLUMN_NAME{i}'")
    entry = "{" + ", ".join(entry_parts) + "}"
    return "Expected output format:\n{" + f"'1': {entry}, '2': {entry}" + "}..."


def _doc_text(doc: Document) -> str:
    # Prompts show the plain table document, never the highlight line.
    return f"{doc.title}\n{doc.body}"


def build_match_prompt(source_table: Table,
                       source_docs: Sequence[Document],
                       candidates,
                       target_schema: Schema,
                       target_corpus: Corpus,
                       k: int,
                       guidance: Sequence[MatchPair] = ()) -> MatchPrompt:
    """Assemble the prompt for one source table against its candidate tables.

    ``source_docs`` controls which attributes are asked about (re-asks pass a
    subset). Candidate tables are emitted in target-schema order regardless of
    retrieval order.
    """
    if k < 1:
        raise InvalidRequest(f"K must be >= 1, got {k}")
    if not source_docs:
        raise InvalidRequest("no source attribute documents supplied")

    candidate_names = {name.strip().lower() for name in candidates.tables}
    ordered_tables = [t.name for t in target_schema.tables
                      if t.name.lower() in candidate_names]
    if len(ordered_tables) != len(candidate_names):
        known = {t.name.lower() for t in target_schema.tables}
        missing = sorted(candidate_names - known)
        raise MissingDocument(f"candidate tables not in target schema: {missing}")
    if not ordered_tables:
        raise InvalidRequest("empty candidate table set")

    source_attrs = tuple(doc.origin[2] or "" for doc in source_docs)
    source_rows = [",SRC_ENT, SRC_ATT"]
    source_rows += [f"{i},{doc.origin[1]}, {doc.origin[2]}"
                    for i, doc in enumerate(source_docs)]
    source_block = "Source Schema:\n" + "\n".join(source_rows)

    target_rows = [",TGT_ENT,TGT_ATT"]
    index = 0
    for name in ordered_tables:
        table = target_schema.table(name)
        assert table is not None
        for attr in table.attributes:
            target_rows.append(f"{index},{table.name},{attr.name}")
            index += 1
    target_block = "Target Schema:\n" + "\n".join(target_rows)

    target_doc_blocks = [_doc_text(target_corpus.require(name))
                         for name in ordered_tables]

    blocks = [expected_output_block(k), source_block, _doc_text(source_docs[0]),
              target_block]
    blocks.extend(target_doc_blocks)

    selected_guidance = [
        pair for pair in guidance
        if not pair.is_null
        and pair.src_table.strip().lower() == source_table.name.strip().lower()
    ]
    if selected_guidance:
        guide_lines = ["Known mappings:"]
        guide_lines += [
            f"{pair.src_table}, {pair.src_attr} -> {pair.tgt_table}, {pair.tgt_attr}"
            for pair in selected_guidance
        ]
        blocks.append("\n".join(guide_lines))

    blocks.append(CLOSING_LINE)

    return MatchPrompt(
        system_text=SYSTEM_TEMPLATE.format(k=k),
        user_text="\n\n".join(blocks),
        k=k,
        source_table=source_table.name,
        candidate_tables=tuple(ordered_tables),
        source_attrs=source_attrs,
    )


# --- response parsing -------------------------------------------------------


def _strip_code_fences(text: str) -> str:
    if "```" not in text:
        return text
    lines = [line for line in text.splitlines() if not line.strip().startswith("```")]
    return "\n".join(lines)


def _balanced_objects(text: str):
    """Yield each balanced ``{...}`` region, honoring quoted strings."""
    n = len(text)
    for start in range(n):
        if text[start] != "{":
            continue
        depth = 0
        quote: str | None = None
        escaped = False
        for j in range(start, n):
            ch = text[j]
            if quote is not None:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == quote:
                    quote = None
            elif ch in ("'", '"'):
                quote = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:j + 1]
                    break


def _try_parse_mapping(fragment: str) -> dict | None:
    for loader in (json.loads, ast.literal_eval):
        try:
            value = loader(fragment)
        except Exception:  # noqa: BLE001 - totality over malformed model output
            continue
        if isinstance(value, dict):
            return value
    return None


def extract_mapping_object(raw: str) -> dict:
    """Find the first parseable mapping object, tolerating prose and fences."""
    text = _strip_code_fences(raw)
    for fragment in _balanced_objects(text):
        mapping = _try_parse_mapping(fragment)
        if mapping is not None:
            return mapping
    raise Unparseable("no mapping object found in response")


def _norm_target(value) -> str | None:
    if value is None:
        return None
    text = str(value).strip()
    if not text or text.upper() == NA_TOKEN:
        return None
    return text


def _entry_order(mapping: dict) -> list:
    keys = list(mapping.keys())
    try:
        return sorted(keys, key=lambda key: int(str(key)))
    except (TypeError, ValueError):
        return keys


def candidate_attribute_index(target_schema: Schema,
                              table_names: Sequence[str]) -> dict[str, set[str]]:
    """Lowercased table -> attribute-name sets for hallucination checks."""
    index: dict[str, set[str]] = {}
    for name in table_names:
        table = target_schema.table(name)
        if table is None:
            continue
        index[table.name.lower()] = {a.name.lower() for a in table.attributes}
    return index


def parse_topk_response(raw: str,
                        expected_attrs: Sequence[tuple[str, str]],
                        k: int,
                        candidate_attrs: Mapping[str, set[str]] | None = None,
                        ) -> tuple[list[RankedRow], list[Diagnostic]]:
    """Parse a ranking response into rows plus diagnostics.

    Never raises on content problems; only a response with no recoverable
    mapping object raises ``Unparseable``. Entry keys are read in numeric
    order when possible, target ranks positionally from ``TGT_ENT{i}`` /
    ``TGT_ATT{i}``, and a half-NA pair collapses to full NA.
    """
    if k < 1:
        raise InvalidRequest(f"K must be >= 1, got {k}")
    mapping = extract_mapping_object(raw)

    rows: list[RankedRow] = []
    diagnostics: list[Diagnostic] = []

    for key in _entry_order(mapping):
        entry = mapping[key]
        if not isinstance(entry, dict):
            continue
        src_table = _norm_target(entry.get("SRC_ENT"))
        src_attr = _norm_target(entry.get("SRC_ATT"))
        if src_table is None or src_attr is None:
            continue
        targets: list[tuple[str | None, str | None]] = []
        for rank in range(1, k + 1):
            ent_key, att_key = f"TGT_ENT{rank}", f"TGT_ATT{rank}"
            if ent_key not in entry and att_key not in entry:
                break
            tgt_table = _norm_target(entry.get(ent_key))
            tgt_attr = _norm_target(entry.get(att_key))
            if (tgt_table is None) != (tgt_attr is None):
                tgt_table = tgt_attr = None
            targets.append((tgt_table, tgt_attr))

        if len(targets) < k:
            diagnostics.append(Diagnostic(
                kind=DIAG_SHORT_ROW, src_table=src_table, src_attr=src_attr,
                detail=f"{len(targets)} of {k} targets"))
        na_count = sum(1 for pair in targets if pair == (None, None))
        if na_count > 1:
            diagnostics.append(Diagnostic(
                kind=DIAG_DUPLICATE_NA, src_table=src_table, src_attr=src_attr,
                detail=f"{na_count} NA pairs"))
        if candidate_attrs is not None:
            for tgt_table, tgt_attr in targets:
                if tgt_table is None:
                    continue
                known = candidate_attrs.get(tgt_table.lower())
                if known is None or (tgt_attr or "").lower() not in known:
                    diagnostics.append(Diagnostic(
                        kind=DIAG_HALLUCINATED, src_table=src_table,
                        src_attr=src_attr, detail=f"{tgt_table}.{tgt_attr}"))

        rows.append(RankedRow(src_table=src_table, src_attr=src_attr,
                              targets=tuple(targets)))

    expected_keys = [(t.strip().lower(), a.strip().lower())
                     for t, a in expected_attrs]
    parsed_keys = {(row.src_table.strip().lower(), row.src_attr.strip().lower())
                   for row in rows}
    for (table, attr), key in zip(expected_attrs, expected_keys):
        if key not in parsed_keys:
            diagnostics.append(Diagnostic(
                kind=DIAG_MISSING_ROW, src_table=table, src_attr=attr))
    expected_set = set(expected_keys)
    for row in rows:
        key = (row.src_table.strip().lower(), row.src_attr.strip().lower())
        if key not in expected_set:
            diagnostics.append(Diagnostic(
                kind=DIAG_EXTRA_ROW, src_table=row.src_table, src_attr=row.src_attr))

    return rows, diagnostics


# --- ranking backends -------------------------------------------------------


class RemoteRanker:
    """Chat-completions backend with pinned generation parameters."""

    def __init__(self, spec: RankerSpec, session: requests.Session | None = None):
        self.spec = spec
        self.session = session if session is not None else requests.Session()

    @property
    def max_prompt_chars(self) -> int:
        return self.spec.max_prompt_chars

    def _model(self) -> str:
        return self.spec.model or os.environ.get(ENV_GEN_MODEL, "gpt-4-1106-preview")

    def _base_url(self) -> str:
        base = self.spec.base_url or os.environ.get(ENV_API_BASE, "")
        if not base:
            raise InvalidRequest(f"no API base URL configured (set {ENV_API_BASE})")
        return base.rstrip("/")

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(ENV_API_KEY)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def rank(self, prompt: MatchPrompt) -> str:
        if prompt.size > self.spec.max_prompt_chars:
            raise ContextOverflow(
                f"prompt is {prompt.size} chars, budget is "
                f"{self.spec.max_prompt_chars}")
        payload = {
            "model": self._model(),
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "temperature": self.spec.temperature,
            "top_p": self.spec.top_p,
            "max_tokens": self.spec.max_tokens,
            "seed": self.spec.seed,
            "frequency_penalty": self.spec.frequency_penalty,
            "presence_penalty": self.spec.presence_penalty,
        }
        body = post_with_retry(
            self.session, f"{self._base_url()}/chat/completions", payload,
            headers=self._headers(), max_retries=self.spec.max_retries)
        try:
            return str(body["choices"][0]["message"]["content"])
        except (KeyError, IndexError, TypeError) as exc:
            raise Unparseable(f"malformed chat response envelope: {exc}") from exc


class LocalSimilarityOracle:
    """Deterministic stand-in backend: ranks each candidate target attribute
    by cosine similarity between its attribute document and the source
    attribute document, then emits the same response format a model would.

    Emits no NA pair unless the candidate pool is smaller than K, in which
    case every candidate is listed followed by a single NA pair.
    """

    def __init__(self, source_schema: Schema, target_schema: Schema,
                 embedder: Embedder, mode: str = MODE_FULL):
        self.source_schema = source_schema
        self.target_schema = target_schema
        self.embedder = embedder
        self.mode = mode

    def rank(self, prompt: MatchPrompt) -> str:
        source_table = self.source_schema.table(prompt.source_table)
        if source_table is None:
            raise InvalidRequest(f"unknown source table {prompt.source_table!r}")

        candidates: list[tuple[str, str]] = []
        candidate_docs: list[Document] = []
        for table_name in prompt.candidate_tables:
            table = self.target_schema.table(table_name)
            if table is None:
                raise InvalidRequest(f"unknown target table {table_name!r}")
            for attr in table.attributes:
                candidates.append((table.name, attr.name))
                candidate_docs.append(
                    attribute_to_doc(self.target_schema, table, attr, self.mode))
        candidate_vectors = self.embedder.embed_texts(
            [doc.render() for doc in candidate_docs])

        response: dict[str, dict[str, str]] = {}
        for row_index, attr_name in enumerate(prompt.source_attrs, start=1):
            attr = source_table.attribute(attr_name)
            if attr is None:
                raise InvalidRequest(
                    f"unknown source attribute {prompt.source_table}.{attr_name}")
            source_doc = attribute_to_doc(
                self.source_schema, source_table, attr, self.mode)
            source_vector = self.embedder.embed_text(source_doc.render())
            scored = [
                (idx, cosine_similarity(source_vector, vector))
                for idx, vector in enumerate(candidate_vectors)
            ]
            scored.sort(key=lambda item: (-item[1], item[0]))
            top = [candidates[idx] for idx, _ in scored[:prompt.k]]
            entry = {"SRC_ENT": source_table.name, "SRC_ATT": attr.name}
            for rank, (tgt_table, tgt_attr) in enumerate(top, start=1):
                entry[f"TGT_ENT{rank}"] = tgt_table
                entry[f"TGT_ATT{rank}"] = tgt_attr
            if len(top) < prompt.k:
                rank = len(top) + 1
                entry[f"TGT_ENT{rank}"] = NA_TOKEN
                entry[f"TGT_ATT{rank}"] = NA_TOKEN
            response[str(row_index)] = entry
        return json.dumps(response)


def make_ranker(spec: RankerSpec, *, source_schema: Schema | None = None,
                target_schema: Schema | None = None,
                embedder: Embedder | None = None, mode: str = MODE_FULL,
                session: requests.Session | None = None):
    if spec.kind == KIND_REMOTE_LLM:
        return RemoteRanker(spec, session)
    if spec.kind == KIND_ORACLE:
        if source_schema is None or target_schema is None or embedder is None:
            raise InvalidRequest(
                "local similarity oracle needs source/target schemas and an embedder")
        return LocalSimilarityOracle(source_schema, target_schema, embedder, mode)
    raise InvalidRequest(f"unknown ranker kind {spec.kind!r}")


class TranscriptLogger:
    """Append-only JSONL log of every ranking exchange."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def log(self, record: dict) -> None:
        line = json.dumps({"ts": time.time(), **record}, ensure_ascii=False)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")


def _log_exchange(transcript: TranscriptLogger | None, phase: str,
                  prompt: MatchPrompt, response: str,
                  diagnostics: Sequence[Diagnostic]) -> None:
    if transcript is None:
        return
    transcript.log({
        "phase": phase,
        "source_table": prompt.source_table,
        "candidate_tables": list(prompt.candidate_tables),
        "prompt_chars": prompt.size,
        "prompt_sha256": hashlib.sha256(prompt.render().encode("utf-8")).hexdigest(),
        "response": response,
        "diagnostics": [d.kind for d in diagnostics],
    })


def _prompt_budget(ranker) -> int | None:
    budget = getattr(ranker, "max_prompt_chars", None)
    return int(budget) if budget is not None else None


def _batched_candidates(source_table: Table, source_docs: Sequence[Document],
                        candidates, target_schema: Schema, target_corpus: Corpus,
                        ranker, k: int, guidance: Sequence[MatchPair],
                        transcript: TranscriptLogger | None, budget: int):
    """Split oversized candidate sets, rank per batch, and keep the union of
    winning tables as the reduced candidate set for the final ask."""
    from .embedding import CandidateSet

    def prompt_for(names: list[str]) -> MatchPrompt:
        subset = CandidateSet(source_table=source_table.name, tables=tuple(names))
        return build_match_prompt(source_table, source_docs, subset,
                                  target_schema, target_corpus, k, guidance)

    chunks: list[list[str]] = []
    current: list[str] = []
    for name in candidates.tables:
        if prompt_for(current + [name]).size <= budget:
            current = current + [name]
            continue
        if not current:
            raise ContextOverflow(
                f"candidate table {name!r} alone exceeds the {budget}-char "
                f"prompt budget")
        chunks.append(current)
        current = [name]
        if prompt_for(current).size > budget:
            raise ContextOverflow(
                f"candidate table {name!r} alone exceeds the {budget}-char "
                f"prompt budget")
    if current:
        chunks.append(current)

    expected = [(source_table.name, doc.origin[2] or "") for doc in source_docs]
    winners: set[str] = set()
    for chunk in chunks:
        prompt = prompt_for(chunk)
        raw = ranker.rank(prompt)
        rows, diags = parse_topk_response(
            raw, expected, k, candidate_attribute_index(target_schema, chunk))
        _log_exchange(transcript, "batch", prompt, raw, diags)
        for row in rows:
            for tgt_table, _ in row.targets:
                if tgt_table is not None:
                    winners.add(tgt_table.lower())

    kept = [name for name in candidates.tables if name.lower() in winners]
    if not kept:
        kept = list(chunks[0])
    merged = CandidateSet(source_table=source_table.name, tables=tuple(kept),
                          per_attribute_hits=candidates.per_attribute_hits)
    if prompt_for(kept).size > budget:
        raise ContextOverflow(
            f"merged candidate set of {len(kept)} tables still exceeds the "
            f"{budget}-char prompt budget")
    return merged


def create_topk_mapping(source_table: Table,
                        source_docs: Sequence[Document],
                        candidates,
                        target_schema: Schema,
                        target_corpus: Corpus,
                        ranker,
                        k: int,
                        guidance: Sequence[MatchPair] = (),
                        transcript: TranscriptLogger | None = None,
                        ) -> tuple[list[RankedRow], list[Diagnostic]]:
    """Rank one source table end to end: prompt, parse, re-ask once for any
    missing attributes, then pad still-missing ones with flagged NA rows.

    Returns one row per source attribute, in source attribute order.
    """
    if not candidates.tables:
        raise InvalidRequest(
            f"empty candidate set for source table {source_table.name!r}")

    budget = _prompt_budget(ranker)
    working = candidates
    probe = build_match_prompt(source_table, source_docs, working, target_schema,
                               target_corpus, k, guidance)
    if budget is not None and probe.size > budget and len(working.tables) > 1:
        working = _batched_candidates(source_table, source_docs, working,
                                      target_schema, target_corpus, ranker, k,
                                      guidance, transcript, budget)
        probe = build_match_prompt(source_table, source_docs, working,
                                   target_schema, target_corpus, k, guidance)

    attr_index = candidate_attribute_index(target_schema, working.tables)
    expected = [(source_table.name, doc.origin[2] or "") for doc in source_docs]
    raw = ranker.rank(probe)
    rows, diagnostics = parse_topk_response(raw, expected, k, attr_index)
    _log_exchange(transcript, "initial", probe, raw, diagnostics)

    def row_key(row: RankedRow) -> tuple[str, str]:
        return (row.src_table.strip().lower(), row.src_attr.strip().lower())

    by_key: dict[tuple[str, str], RankedRow] = {}
    for row in rows:
        by_key.setdefault(row_key(row), row)

    expected_keys = [(t.lower(), a.lower()) for t, a in expected]
    missing = [i for i, key in enumerate(expected_keys) if key not in by_key]

    if missing:
        retry_docs = [source_docs[i] for i in missing]
        retry_prompt = build_match_prompt(source_table, retry_docs, working,
                                          target_schema, target_corpus, k, guidance)
        retry_expected = [expected[i] for i in missing]
        raw_retry = ranker.rank(retry_prompt)
        retry_rows, retry_diags = parse_topk_response(
            raw_retry, retry_expected, k, attr_index)
        _log_exchange(transcript, "re-ask", retry_prompt, raw_retry, retry_diags)
        diagnostics.extend(retry_diags)
        for row in retry_rows:
            by_key.setdefault(row_key(row), row)

    ordered: list[RankedRow] = []
    for (table_name, attr_name), key in zip(expected, expected_keys):
        row = by_key.get(key)
        if row is None:
            ordered.append(RankedRow(
                src_table=table_name, src_attr=attr_name,
                targets=tuple((None, None) for _ in range(k)),
                flags=(FLAG_UNRESOLVED,)))
            diagnostics.append(Diagnostic(
                kind=DIAG_UNRESOLVED, src_table=table_name, src_attr=attr_name,
                detail="no row after one re-ask; padded with NA"))
        else:
            ordered.append(row)
    return ordered, diagnostics

"""Embedding backends, the on-disk vector cache, and top-J table retrieval.

Two backends share one interface: a deterministic local embedder (hashed
character trigrams, L2-normalized) and a remote HTTP embedder speaking the
``POST {base}/embeddings`` protocol with bearer auth. Vectors are cached by
``(model_id, sha256(text))`` in an append-only JSONL file so repeated runs and
grid sweeps never recompute or re-bill the same document.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import requests

from .docgen import Document
from .errors import (
    DimensionMismatch,
    InvalidRequest,
    MissingEmbedding,
    RemoteError,
    ZeroVector,
)
from .schema import Table

logger = logging.getLogger(__name__)

KIND_LOCAL = "local-hash-trigram"
KIND_REMOTE = "remote"

DEFAULT_DIM = 1024
DEFAULT_REMOTE_DIM = 1536

FNV32_OFFSET = 0x811C9DC5
FNV32_PRIME = 0x01000193

ENV_API_KEY = "REMATCH_API_KEY"
ENV_API_BASE = "REMATCH_API_BASE"
ENV_EMBED_MODEL = "REMATCH_EMBED_MODEL"


def fnv1a32(data: bytes) -> int:
    """32-bit FNV-1a over raw bytes."""
    value = FNV32_OFFSET
    for byte in data:
        value ^= byte
        value = (value * FNV32_PRIME) & 0xFFFFFFFF
    return value


@dataclass(frozen=True)
class EmbedderSpec:
    """Which backend produces vectors and under what identity/limits."""

    kind: str = KIND_LOCAL
    dim: int = DEFAULT_DIM
    model: str = ""
    base_url: str = ""
    batch_size: int = 64
    parallelism: int = 8
    max_retries: int = 3

    @property
    def model_id(self) -> str:
        if self.kind == KIND_LOCAL:
            return f"hash-trigram-{self.dim}"
        return self.model or os.environ.get(ENV_EMBED_MODEL, "text-embedding-ada-002")


def remote_embedder_spec(model: str = "", base_url: str = "",
                         dim: int = DEFAULT_REMOTE_DIM) -> EmbedderSpec:
    return EmbedderSpec(kind=KIND_REMOTE, dim=dim, model=model, base_url=base_url)


@dataclass(eq=False)
class EmbeddingVector:
    """A vector plus the identity of the model that produced it."""

    values: np.ndarray
    model_id: str
    empty_text: bool = False

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def tolist(self) -> list[float]:
        return [float(v) for v in self.values]


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Append-only JSONL vector cache, safe for concurrent writers in-process.

    With no path the cache is memory-only; with a path every new vector is
    appended as one JSON record and reloaded on construction.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._mem: dict[tuple[str, str], EmbeddingVector] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        n_bad = 0
        with self.path.open(encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    key = (record["model_id"], record["content_hash"])
                    self._mem[key] = EmbeddingVector(
                        values=np.asarray(record["values"], dtype=np.float64),
                        model_id=record["model_id"],
                        empty_text=bool(record.get("empty_text", False)),
                    )
                except (json.JSONDecodeError, KeyError, TypeError):
                    n_bad += 1
        if n_bad:
            logger.warning("embedding cache %s: skipped %d bad lines", self.path, n_bad)

    def get(self, model_id: str, text: str) -> EmbeddingVector | None:
        return self._mem.get((model_id, content_hash(text)))

    def put(self, model_id: str, text: str, vector: EmbeddingVector) -> None:
        key = (model_id, content_hash(text))
        with self._lock:
            if key in self._mem:
                return
            self._mem[key] = vector
            if self.path is not None:
                record = {
                    "model_id": model_id,
                    "content_hash": key[1],
                    "dim": vector.dim,
                    "values": vector.tolist(),
                    "empty_text": vector.empty_text,
                }
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(record) + "\n")

    def __len__(self) -> int:
        return len(self._mem)


def default_cache(path: str | Path | None = None) -> EmbeddingCache:
    """Cache at an explicit path, else under ``REMATCH_CACHE_DIR`` if set,
    else memory-only."""
    if path is not None:
        return EmbeddingCache(path)
    env_dir = os.environ.get("REMATCH_CACHE_DIR")
    if env_dir:
        return EmbeddingCache(Path(env_dir) / "embeddings.jsonl")
    return EmbeddingCache(None)


class Embedder:
    """Shared embed/cache plumbing; subclasses supply ``_compute``."""

    def __init__(self, spec: EmbedderSpec, cache: EmbeddingCache | None = None):
        self.spec = spec
        self.cache = cache if cache is not None else EmbeddingCache(None)

    @property
    def model_id(self) -> str:
        return self.spec.model_id

    def embed_text(self, text: str) -> EmbeddingVector:
        return self.embed_texts([text])[0]

    def embed_document(self, doc: Document) -> EmbeddingVector:
        return self.embed_text(doc.render())

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector | None] = [None] * len(texts)
        pending: list[int] = []
        for i, text in enumerate(texts):
            if not text:
                # Empty input yields a flagged zero vector; never sent downstream.
                out[i] = EmbeddingVector(
                    values=np.zeros(self.spec.dim, dtype=np.float64),
                    model_id=self.model_id, empty_text=True)
                continue
            hit = self.cache.get(self.model_id, text)
            if hit is not None:
                out[i] = hit
            else:
                pending.append(i)
        if pending:
            computed = self._compute([texts[i] for i in pending])
            for i, values in zip(pending, computed):
                vector = EmbeddingVector(values=values, model_id=self.model_id)
                self.cache.put(self.model_id, texts[i], vector)
                out[i] = vector
        return [v for v in out if v is not None]

    def _compute(self, texts: Sequence[str]) -> list[np.ndarray]:
        raise NotImplementedError


class HashTrigramEmbedder(Embedder):
    """Deterministic local embedder: lowercase, slide character trigrams,
    FNV-1a hash each modulo ``dim``, count, L2-normalize. Texts shorter than
    three characters hash as a single gram so non-empty text never maps to the
    zero vector."""

    def _compute(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self._vectorize(text) for text in texts]

    def _vectorize(self, text: str) -> np.ndarray:
        folded = text.lower()
        if len(folded) >= 3:
            grams = [folded[i:i + 3] for i in range(len(folded) - 2)]
        else:
            grams = [folded]
        counts = np.zeros(self.spec.dim, dtype=np.float64)
        for gram in grams:
            counts[fnv1a32(gram.encode("utf-8")) % self.spec.dim] += 1.0
        norm = np.linalg.norm(counts)
        return counts / norm


class RemoteEmbedder(Embedder):
    """HTTP embedder: ``POST {base}/embeddings`` with ``{model, input}``,
    bearer token from the environment, retries with backoff on 429/5xx."""

    def __init__(self, spec: EmbedderSpec, cache: EmbeddingCache | None = None,
                 session: requests.Session | None = None):
        super().__init__(spec, cache)
        self.session = session if session is not None else requests.Session()

    def _base_url(self) -> str:
        base = self.spec.base_url or os.environ.get(ENV_API_BASE, "")
        if not base:
            raise RemoteError(f"no API base URL configured (set {ENV_API_BASE})")
        return base.rstrip("/")

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(ENV_API_KEY)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _compute(self, texts: Sequence[str]) -> list[np.ndarray]:
        size = max(1, self.spec.batch_size)
        batches = [list(texts[i:i + size]) for i in range(0, len(texts), size)]
        if len(batches) == 1:
            results = [self._embed_batch(batches[0])]
        else:
            workers = max(1, min(self.spec.parallelism, len(batches)))
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self._embed_batch, batches))
        return [vector for batch in results for vector in batch]

    def _embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        payload = {"model": self.model_id, "input": texts}
        body = post_with_retry(
            self.session, f"{self._base_url()}/embeddings", payload,
            headers=self._headers(), max_retries=self.spec.max_retries)
        try:
            data = sorted(body["data"], key=lambda item: item["index"])
            vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
        except (KeyError, TypeError) as exc:
            raise RemoteError(f"malformed embeddings response: {exc}") from exc
        if len(vectors) != len(texts):
            raise RemoteError(
                f"embeddings response returned {len(vectors)} vectors "
                f"for {len(texts)} inputs")
        for vector in vectors:
            if self.spec.dim and vector.shape[0] != self.spec.dim:
                raise RemoteError(
                    f"embedding dim {vector.shape[0]} != configured {self.spec.dim}")
        return vectors


def post_with_retry(session: requests.Session, url: str, payload: dict, *,
                    headers: dict[str, str], max_retries: int = 3,
                    backoff: float = 1.0, timeout: float = 120.0) -> dict:
    """POST JSON and return the decoded body, retrying 429/5xx and network
    failures with exponential backoff. Raises RemoteError when exhausted."""
    attempts = 0
    delay = backoff
    last_status: int | None = None
    last_error = "no attempt made"
    while attempts <= max_retries:
        attempts += 1
        try:
            response = session.post(url, json=payload, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last_error = f"network error: {exc}"
            last_status = None
        else:
            if response.status_code == 200:
                try:
                    return response.json()
                except ValueError as exc:
                    raise RemoteError(
                        f"non-JSON 200 response from {url}: {exc}",
                        status=200, attempts=attempts) from exc
            last_status = response.status_code
            last_error = f"HTTP {response.status_code}: {response.text[:200]}"
            if response.status_code not in (429, 500, 502, 503, 504):
                raise RemoteError(f"{url}: {last_error}",
                                  status=last_status, attempts=attempts)
            retry_after = response.headers.get("Retry-After")
            if retry_after:
                try:
                    delay = max(delay, float(retry_after))
                except ValueError:
                    pass
        if attempts <= max_retries:
            logger.warning("retrying %s after %s (attempt %d/%d)",
                           url, last_error, attempts, max_retries + 1)
            time.sleep(delay)
            delay *= 2
    raise RemoteError(f"{url}: giving up after {attempts} attempts: {last_error}",
                      status=last_status, attempts=attempts, retry_after=delay)


def make_embedder(spec: EmbedderSpec, cache: EmbeddingCache | None = None,
                  session: requests.Session | None = None) -> Embedder:
    if spec.kind == KIND_LOCAL:
        return HashTrigramEmbedder(spec, cache)
    if spec.kind == KIND_REMOTE:
        return RemoteEmbedder(spec, cache, session)
    raise InvalidRequest(f"unknown embedder kind {spec.kind!r}")


def embed(spec: EmbedderSpec, doc: Document,
          cache: EmbeddingCache | None = None) -> EmbeddingVector:
    """Embed one document's rendered text under the given spec."""
    return make_embedder(spec, cache).embed_document(doc)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; rejects mismatched dimensions and zero vectors."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"dim {a.dim} vs {b.dim}")
    norm_a, norm_b = a.norm, b.norm
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("cosine similarity undefined for a zero vector")
    return float(np.dot(a.values, b.values) / (norm_a * norm_b))


def retrieve_top_j(attr_vector: EmbeddingVector,
                   table_vectors: Sequence[tuple[str, EmbeddingVector]],
                   j: int) -> list[tuple[str, float]]:
    """Exhaustively score every table vector and keep the top J.

    Ties break toward the earlier table in the given order, which follows the
    target schema file; results are deterministic for fixed inputs.
    """
    if j < 1:
        raise InvalidRequest(f"top-J cutoff must be >= 1, got {j}")
    if not table_vectors:
        raise InvalidRequest("cannot retrieve from an empty table corpus")
    scored = [
        (index, name, cosine_similarity(attr_vector, vector))
        for index, (name, vector) in enumerate(table_vectors)
    ]
    scored.sort(key=lambda item: (-item[2], item[0]))
    return [(name, score) for _, name, score in scored[:j]]


@dataclass
class CandidateSet:
    """The union of per-attribute top-J tables for one source table.

    ``tables`` keeps target-schema order. Guidance may later extend it beyond
    the union of ``per_attribute_hits``; retrieval alone never does.
    """

    source_table: str
    tables: tuple[str, ...]
    per_attribute_hits: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __contains__(self, table_name: str) -> bool:
        wanted = table_name.strip().lower()
        return any(name.lower() == wanted for name in self.tables)


def build_candidate_set(source_table: Table,
                        attr_vectors: Mapping[str, EmbeddingVector],
                        table_vectors: Sequence[tuple[str, EmbeddingVector]],
                        j: int) -> CandidateSet:
    """Retrieve top-J tables per attribute and union them in corpus order."""
    hits: dict[str, list[tuple[str, float]]] = {}
    for attr in source_table.attributes:
        vector = attr_vectors.get(attr.name)
        if vector is None:
            raise MissingEmbedding(
                f"no vector for source attribute {source_table.name}.{attr.name}")
        hits[attr.name] = retrieve_top_j(vector, table_vectors, j)
    hit_names = {name.lower() for per_attr in hits.values() for name, _ in per_attr}
    tables = tuple(name for name, _ in table_vectors if name.lower() in hit_names)
    return CandidateSet(source_table=source_table.name, tables=tables,
                        per_attribute_hits=hits)


def full_candidate_set(source_table: Table,
                       table_names: Sequence[str]) -> CandidateSet:
    """The retrieval-off candidate set: every target table."""
    return CandidateSet(source_table=source_table.name,
                        tables=tuple(table_names), per_attribute_hits={})

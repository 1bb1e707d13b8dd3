"""Compile schemas into retrievable text documents.

Each table renders as a titled document: an overview paragraph followed by
three fixed sections ("Primary Keys:", "Foreign Keys:", "Other Columns:") with
one ``NAME (TYPE): description`` line per attribute. Attribute documents share
the table body verbatim and add the attribute name as a highlight line above
the title. A names-only mode drops every description and type, keeping just
the title, section headers, and bare attribute names.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import MissingDocument
from .schema import Attribute, Schema, Table

logger = logging.getLogger(__name__)

MODE_FULL = "full"
MODE_NAMES_ONLY = "names-only"
MODES = (MODE_FULL, MODE_NAMES_ONLY)

KIND_TABLE = "table-doc"
KIND_ATTRIBUTE = "attribute-doc"

Origin = tuple[str, str, str | None]


@dataclass(frozen=True)
class Document:
    """One rendered document plus enough provenance to trace it back."""

    kind: str
    title: str
    body: str
    origin: Origin
    highlight: str | None = None

    def render(self) -> str:
        """Full text as embedded and prompted: highlight, title, body."""
        if self.highlight is not None:
            return f"{self.highlight}\n{self.title}\n{self.body}"
        return f"{self.title}\n{self.body}"


def origin_key(origin: Origin) -> str:
    """Flatten an origin to the ``schema__table[__attr]`` form used in
    filenames and URLs."""
    return "__".join(part for part in origin if part is not None)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown document mode {mode!r}; expected one of {MODES}")


def _entry(attr: Attribute, mode: str) -> str:
    if mode == MODE_NAMES_ONLY:
        return attr.name
    line = f"{attr.name} ({attr.data_type}):"
    if attr.description:
        line += f" {attr.description}"
    if attr.foreign_key_ref is not None:
        ref_table, ref_attr = attr.foreign_key_ref
        line += f" References to [{ref_table}, {ref_attr}]"
    return line


def table_body(table: Table, mode: str = MODE_FULL) -> str:
    """Render the body shared by the table document and its attribute
    documents. Section headers always appear, even with zero entries."""
    _check_mode(mode)
    lines: list[str] = []
    if mode == MODE_FULL and table.description:
        lines.append(table.description)
    lines.append("Primary Keys:")
    lines.extend(_entry(a, mode) for a in table.primary_keys)
    lines.append("Foreign Keys:")
    lines.extend(_entry(a, mode) for a in table.foreign_keys)
    lines.append("Other Columns:")
    lines.extend(_entry(a, mode) for a in table.other_columns)
    return "\n".join(lines)


def _require_member(schema: Schema, table: Table) -> None:
    if schema.table(table.name) is None:
        raise ValueError(f"table {table.name!r} is not part of schema {schema.name!r}")


def table_to_doc(schema: Schema, table: Table, mode: str = MODE_FULL) -> Document:
    """Render one table document."""
    _require_member(schema, table)
    return Document(
        kind=KIND_TABLE,
        title=table.name,
        body=table_body(table, mode),
        origin=(schema.name, table.name, None),
    )


def attribute_to_doc(schema: Schema, table: Table, attr: Attribute,
                     mode: str = MODE_FULL) -> Document:
    """Render one attribute document: the table body with the attribute name
    highlighted above the title."""
    _require_member(schema, table)
    if table.attribute(attr.name) is None:
        raise ValueError(f"attribute {attr.name!r} is not part of table {table.name!r}")
    return Document(
        kind=KIND_ATTRIBUTE,
        title=table.name,
        body=table_body(table, mode),
        origin=(schema.name, table.name, attr.name),
        highlight=attr.name,
    )


class Corpus:
    """An ordered, origin-indexed set of documents for one schema."""

    def __init__(self, documents: tuple[Document, ...] | list[Document]):
        self.documents: tuple[Document, ...] = tuple(documents)
        self._index: dict[tuple[str, str | None], Document] = {}
        for doc in self.documents:
            key = self._key(doc.origin[1], doc.origin[2])
            if key in self._index:
                raise ValueError(f"duplicate document origin {doc.origin}")
            self._index[key] = doc

    @staticmethod
    def _key(table: str, attr: str | None) -> tuple[str, str | None]:
        return (table.strip().lower(), attr.strip().lower() if attr else None)

    def find(self, table: str, attr: str | None = None) -> Document | None:
        return self._index.get(self._key(table, attr))

    def require(self, table: str, attr: str | None = None) -> Document:
        doc = self.find(table, attr)
        if doc is None:
            name = f"{table}.{attr}" if attr else table
            raise MissingDocument(f"no document for {name}")
        return doc

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)


def build_corpora(source: Schema, target: Schema,
                  mode: str = MODE_FULL) -> tuple[Corpus, Corpus]:
    """Build the retrieval corpora: one attribute document per source column
    and one table document per target table."""
    _check_mode(mode)
    source_docs = [
        attribute_to_doc(source, table, attr, mode)
        for table in source.tables
        for attr in table.attributes
    ]
    target_docs = [table_to_doc(target, table, mode) for table in target.tables]
    return Corpus(source_docs), Corpus(target_docs)


def all_documents(schema: Schema, mode: str = MODE_FULL) -> list[Document]:
    """Every table document followed by every attribute document, schema order."""
    docs: list[Document] = []
    for table in schema.tables:
        docs.append(table_to_doc(schema, table, mode))
    for table in schema.tables:
        for attr in table.attributes:
            docs.append(attribute_to_doc(schema, table, attr, mode))
    return docs


def write_documents(docs: list[Document], out_dir: str | Path) -> dict[str, str]:
    """Write one text file per document; returns origin-key -> filename."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, str] = {}
    for doc in docs:
        key = origin_key(doc.origin)
        filename = f"{key}.txt"
        (out / filename).write_text(doc.render() + "\n", encoding="utf-8")
        manifest[key] = filename
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest

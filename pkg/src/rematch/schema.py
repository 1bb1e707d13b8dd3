"""Relational schema and ground-truth model: loading, validation, statistics.

Schemas are read from a canonical JSON document::

    {"name": ..., "tables": [{"name": ..., "description": ...,
      "attributes": [{"name": ..., "type": ..., "description": ...,
                      "primary_key": bool, "references": [table, attr] | null}]}]}

Ground truth is a four-column CSV (``SRC_ENT,SRC_ATT,TGT_ENT,TGT_ATT``) where
the literal string ``NA`` in both target cells marks a null mapping.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    InconsistentNA,
    ParseError,
    UnknownAttribute,
    ValidationError,
)

logger = logging.getLogger(__name__)

NA = "NA"

CANONICAL_JSON = "canonical-json"


@dataclass(frozen=True)
class Attribute:
    """A single column of a table."""

    name: str
    data_type: str = ""
    description: str = ""
    is_primary_key: bool = False
    foreign_key_ref: tuple[str, str] | None = None

    @property
    def is_foreign_key(self) -> bool:
        return self.foreign_key_ref is not None


@dataclass(frozen=True)
class Table:
    """A named table with an ordered attribute list."""

    name: str
    description: str = ""
    attributes: tuple[Attribute, ...] = ()

    def attribute(self, name: str) -> Attribute | None:
        """Case-insensitive attribute lookup."""
        wanted = name.strip().lower()
        for attr in self.attributes:
            if attr.name.lower() == wanted:
                return attr
        return None

    @property
    def primary_keys(self) -> tuple[Attribute, ...]:
        return tuple(a for a in self.attributes if a.is_primary_key)

    @property
    def foreign_keys(self) -> tuple[Attribute, ...]:
        return tuple(a for a in self.attributes if a.is_foreign_key)

    @property
    def other_columns(self) -> tuple[Attribute, ...]:
        return tuple(a for a in self.attributes
                     if not a.is_primary_key and not a.is_foreign_key)


@dataclass(frozen=True)
class Schema:
    """An ordered collection of tables. Order is load order and is significant
    for every downstream tie-break."""

    name: str
    tables: tuple[Table, ...] = ()

    def table(self, name: str) -> Table | None:
        wanted = name.strip().lower()
        for table in self.tables:
            if table.name.lower() == wanted:
                return table
        return None

    @property
    def n_attributes(self) -> int:
        return sum(len(t.attributes) for t in self.tables)


@dataclass(frozen=True)
class MatchPair:
    """One ground-truth or guidance row. ``None`` targets encode NA."""

    src_table: str
    src_attr: str
    tgt_table: str | None = None
    tgt_attr: str | None = None

    def __post_init__(self) -> None:
        if (self.tgt_table is None) != (self.tgt_attr is None):
            raise InconsistentNA(
                f"half-NA target for {self.src_table}.{self.src_attr}: "
                f"({self.tgt_table!r}, {self.tgt_attr!r})")

    @property
    def is_null(self) -> bool:
        return self.tgt_table is None


@dataclass(frozen=True)
class GroundTruth:
    """The full set of known mappings for one source/target schema pair."""

    pairs: tuple[MatchPair, ...] = ()

    def by_source(self) -> dict[tuple[str, str], list[MatchPair]]:
        """Group pairs by (table, attr), keyed case-insensitively."""
        grouped: dict[tuple[str, str], list[MatchPair]] = {}
        for pair in self.pairs:
            key = (pair.src_table.strip().lower(), pair.src_attr.strip().lower())
            grouped.setdefault(key, []).append(pair)
        return grouped

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class DatasetStats:
    """Column/table counts plus mapped and null mapping tallies."""

    n_columns: int
    n_tables: int
    n_mapped_columns: int
    n_null_mappings: int


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


def schema_from_dict(doc: dict, *, origin: str = "<memory>") -> Schema:
    """Build a Schema from an already-parsed canonical JSON document."""
    if not isinstance(doc, dict):
        raise ParseError(f"{origin}: top level must be an object")
    try:
        name = str(doc["name"])
        raw_tables = doc["tables"]
    except KeyError as exc:
        raise ParseError(f"{origin}: missing key {exc}") from exc
    if not isinstance(raw_tables, list):
        raise ParseError(f"{origin}: 'tables' must be a list")

    tables = []
    for t_idx, raw in enumerate(raw_tables):
        if not isinstance(raw, dict) or "name" not in raw:
            raise ParseError(f"{origin}: tables[{t_idx}] must be an object with a name")
        t_name = str(raw["name"])
        attrs = []
        raw_attrs = raw.get("attributes", [])
        if not isinstance(raw_attrs, list):
            raise ParseError(f"{origin}: table {t_name}: 'attributes' must be a list")
        for a_idx, raw_attr in enumerate(raw_attrs):
            if not isinstance(raw_attr, dict) or "name" not in raw_attr:
                raise ParseError(
                    f"{origin}: table {t_name}: attributes[{a_idx}] must be an "
                    f"object with a name")
            ref = raw_attr.get("references")
            fk: tuple[str, str] | None = None
            if ref is not None:
                if not isinstance(ref, (list, tuple)) or len(ref) != 2:
                    raise ParseError(
                        f"{origin}: table {t_name}.{raw_attr['name']}: 'references' "
                        f"must be [table, attribute] or null")
                fk = (str(ref[0]), str(ref[1]))
            attrs.append(Attribute(
                name=str(raw_attr["name"]),
                data_type=str(raw_attr.get("type", "")),
                description=str(raw_attr.get("description", "")),
                is_primary_key=bool(raw_attr.get("primary_key", False)),
                foreign_key_ref=fk,
            ))
        tables.append(Table(
            name=t_name,
            description=str(raw.get("description", "")),
            attributes=tuple(attrs),
        ))

    schema = Schema(name=name, tables=tuple(tables))
    validate_schema(schema, origin=origin)
    return schema


def validate_schema(schema: Schema, *, origin: str = "<memory>") -> None:
    """Check structural rules; dangling foreign-key table references only warn."""
    _require(bool(schema.tables), f"{origin}: schema {schema.name!r} has no tables")
    seen_tables: set[str] = set()
    for table in schema.tables:
        key = table.name.strip().lower()
        _require(bool(key), f"{origin}: empty table name in schema {schema.name!r}")
        _require(key not in seen_tables,
                 f"{origin}: duplicate table name {table.name!r}")
        seen_tables.add(key)
        _require(bool(table.attributes),
                 f"{origin}: table {table.name!r} has no attributes")
        seen_attrs: set[str] = set()
        for attr in table.attributes:
            a_key = attr.name.strip().lower()
            _require(bool(a_key),
                     f"{origin}: empty attribute name in table {table.name!r}")
            _require(a_key not in seen_attrs,
                     f"{origin}: duplicate attribute {table.name}.{attr.name}")
            seen_attrs.add(a_key)
    for table in schema.tables:
        for attr in table.attributes:
            if attr.foreign_key_ref is None:
                continue
            ref_table, ref_attr = attr.foreign_key_ref
            target = schema.table(ref_table)
            if target is None:
                logger.warning(
                    "%s: %s.%s references table %r outside this schema",
                    origin, table.name, attr.name, ref_table)
                continue
            _require(target.attribute(ref_attr) is not None,
                     f"{origin}: {table.name}.{attr.name} references missing "
                     f"attribute {ref_table}.{ref_attr}")


def load_schema(path: str | Path, format: str = CANONICAL_JSON) -> Schema:
    """Load and validate a schema file."""
    if format != CANONICAL_JSON:
        raise ParseError(f"unsupported schema format {format!r}")
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read schema file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    return schema_from_dict(doc, origin=str(path))


def schema_to_dict(schema: Schema) -> dict:
    """Serialize back to the canonical JSON structure (round-trip safe)."""
    return {
        "name": schema.name,
        "tables": [
            {
                "name": table.name,
                "description": table.description,
                "attributes": [
                    {
                        "name": attr.name,
                        "type": attr.data_type,
                        "description": attr.description,
                        "primary_key": attr.is_primary_key,
                        "references": list(attr.foreign_key_ref)
                        if attr.foreign_key_ref else None,
                    }
                    for attr in table.attributes
                ],
            }
            for table in schema.tables
        ],
    }


def save_schema(schema: Schema, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(schema_to_dict(schema), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")


TRUTH_HEADER = ("SRC_ENT", "SRC_ATT", "TGT_ENT", "TGT_ATT")


def _cell_to_target(cell: str) -> str | None:
    cell = cell.strip()
    return None if cell == NA else cell


def pairs_from_rows(rows: list[list[str]], *, origin: str = "<memory>") -> GroundTruth:
    """Build a GroundTruth from raw CSV rows, header included."""
    if not rows:
        raise ParseError(f"{origin}: empty mapping file")
    header = tuple(cell.strip().upper() for cell in rows[0])
    if header != TRUTH_HEADER:
        raise ParseError(
            f"{origin}: expected header {','.join(TRUTH_HEADER)}, got "
            f"{','.join(rows[0])!r}")
    pairs = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise ParseError(f"{origin}: line {line_no}: expected 4 cells, got {len(row)}")
        src_table, src_attr = row[0].strip(), row[1].strip()
        if not src_table or not src_attr:
            raise ParseError(f"{origin}: line {line_no}: empty source cell")
        try:
            pairs.append(MatchPair(
                src_table=src_table,
                src_attr=src_attr,
                tgt_table=_cell_to_target(row[2]),
                tgt_attr=_cell_to_target(row[3]),
            ))
        except InconsistentNA as exc:
            raise InconsistentNA(f"{origin}: line {line_no}: {exc}") from exc
    return GroundTruth(pairs=tuple(pairs))


def load_ground_truth(path: str | Path) -> GroundTruth:
    """Load a four-column mapping CSV."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise ParseError(f"cannot read mapping file {path}: {exc}") from exc
    return pairs_from_rows(rows, origin=str(path))


def save_ground_truth(truth: GroundTruth, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRUTH_HEADER)
        for pair in truth.pairs:
            writer.writerow([
                pair.src_table, pair.src_attr,
                pair.tgt_table if pair.tgt_table is not None else NA,
                pair.tgt_attr if pair.tgt_attr is not None else NA,
            ])


def check_truth_against_target(truth: GroundTruth, target: Schema) -> list[str]:
    """Return warnings for pairs naming unknown target tables or attributes.

    Unknown targets are tolerated (the truth may predate schema trimming), so
    this reports rather than raises.
    """
    warnings = []
    for pair in truth.pairs:
        if pair.is_null:
            continue
        table = target.table(pair.tgt_table or "")
        if table is None:
            warnings.append(
                f"{pair.src_table}.{pair.src_attr}: unknown target table "
                f"{pair.tgt_table!r}")
        elif table.attribute(pair.tgt_attr or "") is None:
            warnings.append(
                f"{pair.src_table}.{pair.src_attr}: unknown target attribute "
                f"{pair.tgt_table}.{pair.tgt_attr}")
    for message in warnings:
        logger.warning("ground truth: %s", message)
    return warnings


def dataset_stats(source: Schema, truth: GroundTruth) -> DatasetStats:
    """Count source columns/tables and how many columns are mapped vs null.

    A column counts as mapped when at least one of its pairs is non-NA, and as
    a null mapping when it appears in the truth with only NA pairs.
    """
    known = {(t.name.lower(), a.name.lower())
             for t in source.tables for a in t.attributes}
    grouped = truth.by_source()
    for key in grouped:
        if key not in known:
            raise UnknownAttribute(
                f"ground truth references unknown source column {key[0]}.{key[1]}")
    mapped = sum(1 for pairs in grouped.values()
                 if any(not p.is_null for p in pairs))
    null = sum(1 for pairs in grouped.values()
               if all(p.is_null for p in pairs))
    return DatasetStats(
        n_columns=source.n_attributes,
        n_tables=len(source.tables),
        n_mapped_columns=mapped,
        n_null_mappings=null,
    )

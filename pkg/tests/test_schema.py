"""Schema and ground-truth loading, validation, and statistics."""

from __future__ import annotations

import json
import random

import pytest

from conftest import DATA, mk_attr, mk_schema, mk_table
from rematch import (
    InconsistentNA,
    ParseError,
    UnknownAttribute,
    ValidationError,
    dataset_stats,
    load_ground_truth,
    load_schema,
    schema_to_dict,
)
from rematch.schema import (
    GroundTruth,
    MatchPair,
    check_truth_against_target,
    pairs_from_rows,
    schema_from_dict,
)


def test_load_admissions_fixture() -> None:
    schema = load_schema(DATA / "admissions_source.json")
    assert schema.name == "hospital_source"
    assert [t.name for t in schema.tables] == ["ADMISSIONS", "PATIENTS"]
    admissions = schema.table("admissions")
    assert admissions is not None
    assert [a.name for a in admissions.attributes] == [
        "SUBJECT_ID", "HADM_ID", "ADMITTIME"]
    assert admissions.attribute("hadm_id").is_primary_key
    assert admissions.attribute("SUBJECT_ID").foreign_key_ref == (
        "PATIENTS", "SUBJECT_ID")
    assert schema.n_attributes == 5


def test_roundtrip_serialization() -> None:
    schema = load_schema(DATA / "planted_target.json")
    doc = json.loads(json.dumps(schema_to_dict(schema)))
    assert schema_from_dict(doc) == schema


def test_role_partitions() -> None:
    table = load_schema(DATA / "admissions_source.json").table("ADMISSIONS")
    assert [a.name for a in table.primary_keys] == ["HADM_ID"]
    assert [a.name for a in table.foreign_keys] == ["SUBJECT_ID"]
    assert [a.name for a in table.other_columns] == ["ADMITTIME"]


def test_attribute_may_be_both_pk_and_fk() -> None:
    table = mk_table("t", [mk_attr("id", pk=True, ref=("other", "id"))])
    assert table.primary_keys == table.foreign_keys == table.attributes


def _write_schema(tmp_path, doc):
    path = tmp_path / "schema.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_duplicate_table_names_rejected(tmp_path) -> None:
    doc = {"name": "s", "tables": [
        {"name": "A", "attributes": [{"name": "x"}]},
        {"name": "a", "attributes": [{"name": "y"}]},
    ]}
    with pytest.raises(ValidationError, match="duplicate table"):
        load_schema(_write_schema(tmp_path, doc))


def test_duplicate_attribute_names_rejected(tmp_path) -> None:
    doc = {"name": "s", "tables": [
        {"name": "A", "attributes": [{"name": "X"}, {"name": "x"}]},
    ]}
    with pytest.raises(ValidationError, match="duplicate attribute"):
        load_schema(_write_schema(tmp_path, doc))


def test_empty_schema_and_empty_table_rejected(tmp_path) -> None:
    with pytest.raises(ValidationError, match="no tables"):
        load_schema(_write_schema(tmp_path, {"name": "s", "tables": []}))
    with pytest.raises(ValidationError, match="no attributes"):
        load_schema(_write_schema(
            tmp_path, {"name": "s", "tables": [{"name": "A", "attributes": []}]}))


def test_malformed_json_is_parse_error(tmp_path) -> None:
    path = tmp_path / "bad.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_schema(path)
    with pytest.raises(ParseError, match="missing key"):
        load_schema(_write_schema(tmp_path, {"tables": []}))


def test_fk_to_missing_attribute_rejected(tmp_path) -> None:
    doc = {"name": "s", "tables": [
        {"name": "A", "attributes": [
            {"name": "x", "references": ["B", "nope"]}]},
        {"name": "B", "attributes": [{"name": "y"}]},
    ]}
    with pytest.raises(ValidationError, match="missing attribute"):
        load_schema(_write_schema(tmp_path, doc))


def test_fk_to_table_outside_schema_warns(tmp_path, caplog) -> None:
    doc = {"name": "s", "tables": [
        {"name": "A", "attributes": [
            {"name": "x", "references": ["ELSEWHERE", "y"]}]},
    ]}
    with caplog.at_level("WARNING"):
        schema = load_schema(_write_schema(tmp_path, doc))
    assert schema.table("A") is not None
    assert any("ELSEWHERE" in record.message for record in caplog.records)


def test_ground_truth_loading() -> None:
    truth = load_ground_truth(DATA / "planted_truth.csv")
    assert len(truth) == 12
    assert all(not pair.is_null for pair in truth.pairs)


def test_ground_truth_na_and_errors(tmp_path) -> None:
    path = tmp_path / "truth.csv"
    path.write_text(
        "SRC_ENT,SRC_ATT,TGT_ENT,TGT_ATT\n"
        "ADMISSIONS,ROW_ID,NA,NA\n"
        "ADMISSIONS,HADM_ID,VISIT_OCCURRENCE,visit_occurrence_id\n",
        encoding="utf-8")
    truth = load_ground_truth(path)
    assert truth.pairs[0].is_null
    assert truth.pairs[0].tgt_table is None and truth.pairs[0].tgt_attr is None
    assert truth.pairs[1].tgt_table == "VISIT_OCCURRENCE"

    path.write_text("SRC_ENT,SRC_ATT,TGT_ENT,TGT_ATT\nA,x,NA,col\n", encoding="utf-8")
    with pytest.raises(InconsistentNA):
        load_ground_truth(path)

    path.write_text("WRONG,HEADER,HERE,NOW\nA,x,NA,NA\n", encoding="utf-8")
    with pytest.raises(ParseError, match="header"):
        load_ground_truth(path)


def test_match_pair_half_na_rejected() -> None:
    with pytest.raises(InconsistentNA):
        MatchPair("t", "a", "table", None)
    with pytest.raises(InconsistentNA):
        MatchPair("t", "a", None, "attr")


def test_dataset_stats_hand_counted() -> None:
    # Oracle by hand: 5 columns over 2 tables; b and c mapped, a null twice,
    # d unmapped, e mapped by one of two rows.
    schema = mk_schema("s", [
        mk_table("T1", [mk_attr("a"), mk_attr("b"), mk_attr("c")]),
        mk_table("T2", [mk_attr("d"), mk_attr("e")]),
    ])
    rows = [
        ["SRC_ENT", "SRC_ATT", "TGT_ENT", "TGT_ATT"],
        ["T1", "a", "NA", "NA"],
        ["T1", "a", "NA", "NA"],
        ["T1", "b", "X", "x1"],
        ["T1", "c", "X", "x2"],
        ["T2", "e", "NA", "NA"],
        ["T2", "e", "Y", "y1"],
    ]
    stats = dataset_stats(schema, pairs_from_rows(rows))
    assert (stats.n_columns, stats.n_tables) == (5, 2)
    assert stats.n_mapped_columns == 3
    assert stats.n_null_mappings == 1


def test_dataset_stats_unknown_attribute() -> None:
    schema = mk_schema("s", [mk_table("T1", [mk_attr("a")])])
    truth = GroundTruth(pairs=(MatchPair("T1", "ghost", "X", "x"),))
    with pytest.raises(UnknownAttribute, match="ghost"):
        dataset_stats(schema, truth)


def test_dataset_stats_randomized_against_oracle() -> None:
    rng = random.Random(2024)
    for _ in range(100):
        n_tables = rng.randint(1, 4)
        tables = []
        attrs = []
        for t in range(n_tables):
            names = [f"c{t}_{i}" for i in range(rng.randint(1, 6))]
            tables.append(mk_table(f"T{t}", [mk_attr(n) for n in names]))
            attrs.extend((f"T{t}", n) for n in names)
        schema = mk_schema("s", tables)
        pairs = []
        covered = rng.sample(attrs, rng.randint(0, len(attrs)))
        for table, attr in covered:
            if rng.random() < 0.4:
                pairs.append(MatchPair(table, attr, None, None))
            else:
                pairs.append(MatchPair(table, attr, "X", "x"))
        stats = dataset_stats(schema, GroundTruth(pairs=tuple(pairs)))
        # Independent tally straight from the pair list.
        by_attr: dict[tuple[str, str], list[bool]] = {}
        for pair in pairs:
            by_attr.setdefault((pair.src_table, pair.src_attr), []).append(pair.is_null)
        expect_mapped = sum(1 for flags in by_attr.values() if not all(flags))
        expect_null = sum(1 for flags in by_attr.values() if all(flags))
        assert stats.n_mapped_columns == expect_mapped
        assert stats.n_null_mappings == expect_null
        assert stats.n_mapped_columns + stats.n_null_mappings <= stats.n_columns


def test_truth_target_check_warns_but_tolerates() -> None:
    target = mk_schema("t", [mk_table("X", [mk_attr("x1")])])
    truth = GroundTruth(pairs=(
        MatchPair("S", "a", "X", "x1"),
        MatchPair("S", "b", "X", "ghost"),
        MatchPair("S", "c", "GHOST", "x"),
        MatchPair("S", "d", None, None),
    ))
    warnings = check_truth_against_target(truth, target)
    assert len(warnings) == 2

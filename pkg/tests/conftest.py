"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import random
from pathlib import Path

from rematch import PipelineConfig, PredictionMatrix, RankedRow
from rematch.schema import Attribute, GroundTruth, MatchPair, Schema, Table

DATA = Path(__file__).parent / "data"


def pytest_runtest_logreport(report):
    """Print one verdict line per acceptance criterion."""
    if "test_acceptance.py" not in report.nodeid:
        return
    label = report.nodeid.split("::")[-1]
    if report.when == "call":
        verdict = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        print(f"\n[ACCEPTANCE] {label}: {verdict}", flush=True)
    elif report.when == "setup" and report.skipped:
        print(f"\n[ACCEPTANCE] {label}: SKIP", flush=True)


def mk_attr(name: str, data_type: str = "integer", description: str = "",
            pk: bool = False, ref: tuple[str, str] | None = None) -> Attribute:
    return Attribute(name=name, data_type=data_type, description=description,
                     is_primary_key=pk, foreign_key_ref=ref)


def mk_table(name: str, attrs: list[Attribute], description: str = "") -> Table:
    return Table(name=name, description=description, attributes=tuple(attrs))


def mk_schema(name: str, tables: list[Table]) -> Schema:
    return Schema(name=name, tables=tuple(tables))


def maybe_case(rng: random.Random, text: str) -> str:
    """Randomly perturb casing to exercise case-insensitive comparison."""
    choice = rng.randrange(3)
    if choice == 0:
        return text.upper()
    if choice == 1:
        return text.lower()
    return text


def random_eval_instance(rng: random.Random, max_attrs: int = 30, max_k: int = 7,
                         ) -> tuple[PredictionMatrix, GroundTruth, int]:
    """A synthetic prediction matrix plus 1:1/m:1 ground truth (NA included)."""
    n_attrs = rng.randint(1, max_attrs)
    k = rng.randint(1, max_k)
    target_tables = [f"tgt_{i}" for i in range(rng.randint(1, 4))]
    target_attrs = [f"col_{i}" for i in range(rng.randint(1, 6))]

    def random_pair() -> tuple[str, str]:
        return (rng.choice(target_tables), rng.choice(target_attrs))

    rows = []
    truth_pairs = []
    for i in range(n_attrs):
        src_table = f"src_{i % 3}"
        src_attr = f"attr_{i}"
        if rng.random() < 0.25:
            truth_pairs.append(MatchPair(maybe_case(rng, src_table),
                                         maybe_case(rng, src_attr), None, None))
        else:
            table, attr = random_pair()
            truth_pairs.append(MatchPair(maybe_case(rng, src_table),
                                         maybe_case(rng, src_attr),
                                         maybe_case(rng, table),
                                         maybe_case(rng, attr)))
        targets: list[tuple[str | None, str | None]] = []
        na_used = False
        for _ in range(k):
            if not na_used and rng.random() < 0.2:
                targets.append((None, None))
                na_used = True
            else:
                table, attr = random_pair()
                targets.append((maybe_case(rng, table), maybe_case(rng, attr)))
        rows.append(RankedRow(src_table=src_table, src_attr=src_attr,
                              targets=tuple(targets)))

    matrix = PredictionMatrix(
        rows=tuple(rows),
        config=PipelineConfig(j=1, k=k),
        candidate_counts={f"src_{i}": rng.randint(1, len(target_tables))
                          for i in range(3)},
    )
    return matrix, GroundTruth(pairs=tuple(truth_pairs)), k

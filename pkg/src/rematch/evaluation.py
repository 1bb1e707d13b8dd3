"""Accuracy@K scoring, argmax F1, and report formatting.

Scoring is defined over source attributes whose ground truth holds exactly
one pair (1:1 or m:1, including NA): an attribute scores a hit at K when its
single true target, or NA, appears among the first K predicted targets.
Attributes with several distinct true targets (1:n) are rejected by the
scoring functions and must be excluded by the caller first; ``make_report``
does that and counts them. All name comparison is case-insensitive and
whitespace-trimmed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from .errors import AmbiguousTruth, InvalidRequest, KTooLarge
from .pipeline import GridReport, PredictionMatrix
from .ranking import RankedRow
from .schema import GroundTruth, MatchPair

logger = logging.getLogger(__name__)


def _norm(value: str | None) -> str | None:
    return value.strip().lower() if value is not None else None


def _norm_pair(pair: tuple[str | None, str | None]) -> tuple[str | None, str | None]:
    return (_norm(pair[0]), _norm(pair[1]))


def single_target_map(truth: GroundTruth) -> dict[tuple[str, str],
                                                  tuple[str | None, str | None]]:
    """Map each source attribute to its one true target; raise on 1:n."""
    mapping: dict[tuple[str, str], tuple[str | None, str | None]] = {}
    ambiguous: list[str] = []
    for key, pairs in truth.by_source().items():
        distinct = {_norm_pair((p.tgt_table, p.tgt_attr)) for p in pairs}
        if len(distinct) > 1:
            ambiguous.append(f"{key[0]}.{key[1]}")
            continue
        mapping[key] = next(iter(distinct))
    if ambiguous:
        raise AmbiguousTruth(
            "source attributes with multiple targets (exclude first): "
            + ", ".join(sorted(ambiguous)))
    return mapping


def exclude_ambiguous(truth: GroundTruth) -> tuple[GroundTruth, list[str]]:
    """Drop 1:n source attributes; returns the filtered truth and their names."""
    ambiguous: list[str] = []
    kept: list[MatchPair] = []
    for key, pairs in truth.by_source().items():
        distinct = {_norm_pair((p.tgt_table, p.tgt_attr)) for p in pairs}
        if len(distinct) > 1:
            ambiguous.append(f"{pairs[0].src_table}.{pairs[0].src_attr}")
        else:
            kept.append(pairs[0])
    return GroundTruth(pairs=tuple(kept)), sorted(ambiguous)


def _hit_rank(row: RankedRow, true_target: tuple[str | None, str | None],
              k: int) -> int | None:
    """1-based rank of the true target within the first K predictions."""
    wanted = _norm_pair(true_target)
    for rank, pair in enumerate(row.targets[:k], start=1):
        if _norm_pair(pair) == wanted:
            return rank
    return None


def accuracy_at_k(predictions: PredictionMatrix, truth: GroundTruth, k: int) -> float:
    """Fraction of evaluated source attributes whose true target (or NA)
    appears among the first K predicted targets.

    Evaluates every source attribute present in the truth; an attribute with
    no prediction row counts as a miss. K above the prediction row width is
    an error rather than a silent zero.
    """
    if k < 1:
        raise InvalidRequest(f"K must be >= 1, got {k}")
    if k > predictions.width:
        raise KTooLarge(f"K={k} exceeds prediction row width {predictions.width}")
    targets = single_target_map(truth)
    if not targets:
        raise InvalidRequest("ground truth holds no usable pairs")
    hits = 0
    for (table, attr), true_target in targets.items():
        row = predictions.row_for(table, attr)
        if row is not None and _hit_rank(row, true_target, k) is not None:
            hits += 1
    return hits / len(targets)


def f1_argmax(predictions: PredictionMatrix, truth: GroundTruth,
              ) -> tuple[float, float, float]:
    """Micro precision/recall/F1 when each attribute's rank-1 prediction is
    its single classification, with NA kept as a class of its own.

    Every evaluated attribute contributes exactly one prediction and one gold
    label, so precision and recall coincide and F1 equals accuracy@1.
    """
    if predictions.width < 1:
        raise InvalidRequest("prediction rows are empty")
    targets = single_target_map(truth)
    if not targets:
        raise InvalidRequest("ground truth holds no usable pairs")
    true_positive = 0
    false_positive = 0
    false_negative = 0
    missing = object()
    for (table, attr), true_target in targets.items():
        row = predictions.row_for(table, attr)
        predicted = _norm_pair(row.targets[0]) if row and row.targets else missing
        if predicted == _norm_pair(true_target):
            true_positive += 1
        else:
            false_positive += 1
            false_negative += 1
    precision = true_positive / (true_positive + false_positive)
    recall = true_positive / (true_positive + false_negative)
    if precision + recall == 0.0:
        return 0.0, 0.0, 0.0
    # With equal precision and recall the harmonic mean is that same value;
    # evaluating 2pr/(p+r) would round it and break the exact agreement with
    # accuracy@1 that this formulation guarantees.
    if precision == recall:
        return precision, recall, precision
    f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


@dataclass
class EvalReport:
    """Accuracy at each requested K plus per-attribute outcomes."""

    k_values: tuple[int, ...]
    accuracy: dict[int, float]
    n_evaluated: int
    n_excluded: int
    excluded: tuple[str, ...]
    avg_candidate_tables: float
    per_attribute: list[dict] = field(default_factory=list)
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0

    def to_dict(self) -> dict:
        return {
            "k_values": list(self.k_values),
            "accuracy_at_k": {str(k): v for k, v in self.accuracy.items()},
            "n_evaluated": self.n_evaluated,
            "n_excluded": self.n_excluded,
            "excluded": list(self.excluded),
            "avg_candidate_tables": self.avg_candidate_tables,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_attribute": self.per_attribute,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def make_report(predictions: PredictionMatrix, truth: GroundTruth,
                k_values: tuple[int, ...] | list[int]) -> EvalReport:
    """Score a run at several cutoffs, excluding 1:n attributes up front."""
    if not k_values:
        raise InvalidRequest("at least one K value is required")
    if any(k < 1 for k in k_values):
        raise InvalidRequest(f"K values must be >= 1, got {list(k_values)}")
    clean, ambiguous = exclude_ambiguous(truth)
    targets = single_target_map(clean)
    if not targets:
        raise InvalidRequest("ground truth holds no usable pairs")

    accuracy = {k: accuracy_at_k(predictions, clean, k) for k in k_values}
    precision, recall, f1 = f1_argmax(predictions, clean)

    per_attribute = []
    max_k = max(k_values)
    for (table, attr), true_target in sorted(targets.items()):
        row = predictions.row_for(table, attr)
        rank = _hit_rank(row, true_target, max_k) if row is not None else None
        per_attribute.append({
            "src_table": row.src_table if row else table,
            "src_attr": row.src_attr if row else attr,
            "hit_rank": rank,
            "true_target": list(true_target),
            "flags": list(row.flags) if row else ["no-prediction"],
        })

    return EvalReport(
        k_values=tuple(k_values),
        accuracy=accuracy,
        n_evaluated=len(targets),
        n_excluded=len(ambiguous),
        excluded=tuple(ambiguous),
        avg_candidate_tables=predictions.avg_candidate_tables,
        per_attribute=per_attribute,
        precision=precision,
        recall=recall,
        f1=f1,
    )


def format_report(report: EvalReport) -> str:
    """Aligned plain-text summary of one run's scores."""
    lines = ["cutoff    accuracy", "------    --------"]
    for k in report.k_values:
        lines.append(f"Acc@{k:<2}    {report.accuracy[k]:8.4f}")
    lines.append("")
    lines.append(f"evaluated attributes : {report.n_evaluated}")
    lines.append(f"excluded (1:n)       : {report.n_excluded}")
    lines.append(f"avg candidate tables : {report.avg_candidate_tables:.2f}")
    lines.append(f"argmax P/R/F1        : {report.precision:.4f} / "
                 f"{report.recall:.4f} / {report.f1:.4f}")
    return "\n".join(lines)


def format_grid_table(report: GridReport) -> str:
    """Aligned grid: one row per J, accuracy columns per K, then Avg #T."""
    header = ["J".ljust(6)] + [f"Acc@{k}".rjust(8) for k in report.k_values]
    header.append("Avg #T".rjust(8))
    lines = ["".join(header)]
    lines.append("-" * len(lines[0]))
    for j in report.j_values:
        cells = [f"J={j}".ljust(6)]
        for k in report.k_values:
            acc = report.accuracy.get((j, k))
            cells.append(f"{acc:8.4f}" if acc is not None else "   error")
        avg = report.avg_tables.get(j)
        cells.append(f"{avg:8.2f}" if avg is not None else "       -")
        lines.append("".join(cells))
    return "\n".join(lines)

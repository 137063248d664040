"""Accuracy and Top-1 probability summaries for photos taken in unfavourable conditions."""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cropsight.classes import CONDITIONS
from cropsight.records import PredictionRecord
from cropsight.rng import stream

CONDITIONS_HEADER = ["condition", "n", "true", "false", "oa", "min", "q1", "median", "q3", "max", "ref_scope"]


@dataclass(frozen=True)
class BoxStats:
    """Five-number summary; quartiles use linear interpolation between order statistics."""

    min: float
    q1: float
    median: float
    q3: float
    max: float

    @classmethod
    def of(cls, values) -> "BoxStats":
        v = np.asarray(values, dtype=float)
        q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
        return cls(*(float(x) for x in q))


@dataclass(frozen=True)
class ConditionRow:
    condition: str
    n: int
    true: int
    false: int
    oa: float
    top1: BoxStats
    ref_scope: str

    def as_list(self):
        b = self.top1
        return [self.condition, self.n, self.true, self.false, self.oa,
                b.min, b.q1, b.median, b.q3, b.max, self.ref_scope]


@dataclass
class ConditionReport:
    rows: list[ConditionRow] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    def row(self, condition, ref_scope="condition") -> ConditionRow:
        return next(r for r in self.rows if r.condition == condition and r.ref_scope == ref_scope)


def summarize(records: Sequence[PredictionRecord], condition: str, ref_scope: str) -> ConditionRow:
    n = len(records)
    true = sum(r.correct for r in records)
    return ConditionRow(condition, n, true, n - true, true / n,
                        BoxStats.of([r.top1 for r in records]), ref_scope)


def matched_sample(reference: Sequence[PredictionRecord], like: Sequence[PredictionRecord], seed, label):
    """Random reference records with the same class histogram as ``like``."""
    pool = defaultdict(list)
    for r in reference:
        pool[r.true_class].append(r)
    out = []
    for crop, k in sorted(Counter(r.true_class for r in like).items()):
        candidates = sorted(pool[crop], key=lambda r: r.photo_id)
        if len(candidates) < k:
            raise ValueError(f"reference set has {len(candidates)} {crop} records, {k} needed")
        picks = stream(seed, "matched", label, crop).choice(len(candidates), size=k, replace=False)
        out.extend(candidates[i] for i in np.sort(picks))
    return out


def condition_report(
    condition_records: Sequence[PredictionRecord],
    reference_records: Sequence[PredictionRecord],
    seed: int = 0,
) -> ConditionReport:
    """Per-condition OA and Top-1 spread, each next to a class-matched reference sample.

    The last row summarises the whole reference set.
    """
    by_condition = defaultdict(list)
    for r in condition_records:
        if r.condition not in CONDITIONS:
            raise ValueError(f"record {r.photo_id} has no unfavourable-condition tag")
        by_condition[r.condition].append(r)
    if any(r.condition != "none" for r in reference_records):
        raise ValueError("reference records must not carry a condition tag")
    report = ConditionReport()
    for cond in CONDITIONS:
        subset = by_condition.get(cond)
        if not subset:
            report.missing.append(cond)
            continue
        report.rows.append(summarize(subset, cond, "condition"))
        report.rows.append(summarize(matched_sample(reference_records, subset, seed, cond), cond, "matched_reference"))
    if reference_records:
        report.rows.append(summarize(reference_records, "all", "imbalanced_reference"))
    return report


def write_conditions(path, report: ConditionReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONDITIONS_HEADER)
        for row in report.rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row.as_list()])

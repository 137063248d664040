"""Confusion-matrix metrics: OA, Macro-F1, producer/user accuracy and friends."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from cropsight.classes import CLASS_CODES
from cropsight.records import PredictionRecord, label_order


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""

    labels: tuple[str, ...]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, key):
        t, p = key
        return int(self.counts[self.labels.index(t), self.labels.index(p)])


def confusion_from_indices(true, pred, labels) -> ConfusionMatrix:
    k = len(labels)
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    counts = np.bincount(true * k + pred, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(tuple(labels), counts)


def confusion(records: Sequence[PredictionRecord], labels=None) -> ConfusionMatrix:
    if labels is None:
        values = [r.true_class for r in records] + [r.predicted_class for r in records]
        labels = CLASS_CODES if set(values) <= set(CLASS_CODES) else label_order(values)
    index = {c: i for i, c in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for r in records:
        counts[index[r.true_class], index[r.predicted_class]] += 1
    return ConfusionMatrix(tuple(labels), counts)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    total = cm.total
    if total == 0:
        raise ValueError("overall accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / total)


def per_class_f1(cm: ConfusionMatrix) -> dict[str, float | None]:
    """F1 per class; ``None`` for classes with neither support nor predictions."""
    c = cm.counts
    tp = np.diag(c).astype(float)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    out = {}
    for i, label in enumerate(cm.labels):
        if support[i] == 0 and predicted[i] == 0:
            out[label] = None
            continue
        precision = tp[i] / predicted[i] if predicted[i] else 0.0
        recall = tp[i] / support[i] if support[i] else 0.0
        out[label] = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return out


def macro_f1(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1 over classes that occur in truth or predictions."""
    if cm.total == 0:
        raise ValueError("macro-F1 of an empty confusion matrix")
    c = cm.counts
    tp = np.diag(c).astype(float)
    denom = c.sum(axis=1) + c.sum(axis=0)
    present = denom > 0
    # 2PR/(P+R) simplifies to 2TP/(support + predicted)
    return float(np.mean(2 * tp[present] / denom[present]))


def macro_f1_of(true, pred, k) -> float:
    """Macro-F1 straight from label index arrays."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.size == 0:
        raise ValueError("macro-F1 of an empty set")
    tp = np.bincount(true[true == pred], minlength=k)
    denom = np.bincount(true, minlength=k) + np.bincount(pred, minlength=k)
    present = denom > 0
    return float(np.mean(2 * tp[present] / denom[present]))


@dataclass(frozen=True)
class ClassAccuracy:
    label: str
    pa: float
    ua: float
    pa_defined: bool
    ua_defined: bool
    support: int
    predicted: int


def producer_user_accuracy(cm: ConfusionMatrix) -> list[ClassAccuracy]:
    """Producer (recall) and user (precision) accuracy per class, in percent.

    A zero denominator gives 0 with the matching ``*_defined`` flag cleared.
    """
    c = cm.counts
    out = []
    for i, label in enumerate(cm.labels):
        support = int(c[i].sum())
        predicted = int(c[:, i].sum())
        tp = c[i, i]
        out.append(ClassAccuracy(
            label,
            pa=100.0 * tp / support if support else 0.0,
            ua=100.0 * tp / predicted if predicted else 0.0,
            pa_defined=support > 0,
            ua_defined=predicted > 0,
            support=support,
            predicted=predicted,
        ))
    return out


def remap_classes(records: Sequence[PredictionRecord], mapping: Mapping[str, str]) -> list[PredictionRecord]:
    """Relabel truth and prediction through ``mapping``.

    The predicted group is the group of the original argmax class; group
    probabilities are not summed.
    """
    missing = [c for c in CLASS_CODES if c not in mapping]
    if missing:
        raise ValueError(f"class mapping is missing {', '.join(missing)}")
    return [
        replace(r, true_class=mapping[r.true_class], predicted=mapping[r.predicted_class])
        for r in records
    ]


METRICS: dict[str, Callable[[ConfusionMatrix], float]] = {
    "oa": overall_accuracy,
    "macro_f1": macro_f1,
}

STRATUM_KEYS = ("country", "year", "condition")


@dataclass(frozen=True)
class StratumValue:
    value: float
    n: int
    small: bool


def metric_by_stratum(records, key: str, metric="macro_f1", min_size: int = 30) -> dict:
    """Compute ``metric`` per country, year or condition.

    Strata with fewer than ``min_size`` records are kept but flagged ``small``.
    """
    if key not in STRATUM_KEYS:
        raise ValueError(f"stratum key must be one of {STRATUM_KEYS}")
    fn = METRICS[metric] if isinstance(metric, str) else metric
    groups = defaultdict(list)
    for r in records:
        groups[getattr(r, key)].append(r)
    return {
        s: StratumValue(fn(confusion(rs)), len(rs), len(rs) < min_size)
        for s, rs in sorted(groups.items(), key=lambda kv: str(kv[0]))
    }


# pixel-count ranges of the operational inference set, in megapixels
RESOLUTION_EDGES = (0, 1, 2, 3, 4, 5, 6, 7, 8, None)


@dataclass(frozen=True)
class ResolutionBin:
    lo: int
    hi: int | None
    midpoint: float
    n: int
    proportion_correct: float


@dataclass(frozen=True)
class ResolutionFit:
    bins: list[ResolutionBin]
    r_squared: float | None
    slope: float | None
    intercept: float | None

    @property
    def defined(self) -> bool:
        return self.r_squared is not None


def resolution_bin(pixels: int) -> int:
    mp = pixels / 1e6
    for i in range(len(RESOLUTION_EDGES) - 2):
        if mp < RESOLUTION_EDGES[i + 1]:
            return i
    return len(RESOLUTION_EDGES) - 2


def ols_r_squared(x, y):
    """Slope, intercept and R^2 of y on x; R^2 is None when undefined."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0:
        return None, None, None
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = ((x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    ss_tot = ((y - ym) ** 2).sum()
    if ss_tot == 0:
        return slope, intercept, None
    ss_res = ((y - (intercept + slope * x)) ** 2).sum()
    return slope, intercept, float(1.0 - ss_res / ss_tot)


def resolution_correlation(records: Sequence[PredictionRecord]) -> ResolutionFit:
    """Proportion correct per megapixel bin and its OLS fit on bin midpoints (pixels)."""
    n = np.zeros(len(RESOLUTION_EDGES) - 1, dtype=np.int64)
    ok = np.zeros_like(n)
    for r in records:
        if r.pixels is None:
            raise ValueError(f"record {r.photo_id} has no resolution")
        b = resolution_bin(r.pixels)
        n[b] += 1
        ok[b] += r.correct
    bins = []
    for i, count in enumerate(n):
        if count == 0:
            continue
        lo = RESOLUTION_EDGES[i]
        hi = RESOLUTION_EDGES[i + 1]
        mid = (lo + (hi if hi is not None else lo + 1)) / 2 * 1e6
        bins.append(ResolutionBin(lo * 1_000_000, None if hi is None else hi * 1_000_000,
                                  mid, int(count), float(ok[i] / count)))
    slope, intercept, r2 = ols_r_squared([b.midpoint for b in bins],
                                         [b.proportion_correct for b in bins])
    return ResolutionFit(bins, r2, slope, intercept)

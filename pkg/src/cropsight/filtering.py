"""Threshold search and quadrant filtering on MP and ERP.

Records are retained by a threshold ``t`` when ``metric >= t``. The threshold
search picks, among the observed metric values and 0, the cut that discards
the most incorrect predictions while discarding at most a fixed fraction of
the correct ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cropsight.metrics import macro_f1_of
from cropsight.records import ScoredSet

METRIC_NAMES = ("MP", "ERP")


@dataclass(frozen=True)
class ThresholdSearchParams:
    max_correct_loss: float = 0.01
    metric: str = "MP"

    def __post_init__(self):
        if not 0.0 <= self.max_correct_loss < 1.0:
            raise ValueError("max_correct_loss must lie in [0, 1)")
        if self.metric.upper() not in METRIC_NAMES:
            raise ValueError(f"metric must be one of {METRIC_NAMES}")


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    excluded_incorrect: int
    excluded_correct: int
    n_correct: int
    n_incorrect: int


def search_threshold(scored: ScoredSet, params: ThresholdSearchParams) -> ThresholdResult:
    values = scored.metric(params.metric)
    correct = scored.correct
    n_correct = int(correct.sum())
    if n_correct == 0:
        raise ValueError("threshold search needs at least one correct record")
    budget = params.max_correct_loss * n_correct
    cand = np.unique(np.concatenate([[0.0], values]))
    ok_sorted = np.sort(values[correct])
    bad_sorted = np.sort(values[~correct])
    lost = np.searchsorted(ok_sorted, cand, side="left")
    gained = np.searchsorted(bad_sorted, cand, side="left")
    # both counts grow with t, so the feasible candidates form a prefix
    feasible = lost <= budget
    last = int(np.flatnonzero(feasible)[-1])
    best = gained[: last + 1].max()
    i = int(np.flatnonzero(gained[: last + 1] == best)[0])
    return ThresholdResult(float(cand[i]), int(gained[i]), int(lost[i]),
                           n_correct, int((~correct).sum()))


def find_threshold(scored: ScoredSet, params: ThresholdSearchParams) -> float:
    return search_threshold(scored, params).threshold


def assign_quadrants(scored: ScoredSet, t_mp: float, t_erp: float) -> np.ndarray:
    """Quadrant IDs 1-4: 1 both low, 2 MP high only, 3 ERP high only, 4 both high."""
    high_mp = scored.mp >= t_mp
    high_erp = scored.erp >= t_erp
    return 1 + high_mp.astype(np.int64) + 2 * high_erp.astype(np.int64)


QUADRANT_METHODS = {
    "QM1": (2, 4),
    "QM2": (3, 4),
    "QM3": (4,),
    "QM4": (2, 3, 4),
}


@dataclass(frozen=True)
class MethodRow:
    method: str
    quadrants: tuple[int, ...]
    retained: int
    m_f1: float | None


@dataclass
class QuadrantReport:
    t_mp: float
    t_erp: float
    n: int
    unfiltered_m_f1: float | None
    quadrant_counts: dict[int, tuple[int, int]]
    methods: list[MethodRow] = field(default_factory=list)

    def method(self, name: str) -> MethodRow:
        return next(m for m in self.methods if m.method == name)

    def to_dict(self) -> dict:
        return {
            "thresholds": {"mp": self.t_mp, "erp": self.t_erp},
            "n": self.n,
            "unfiltered_m_f1": self.unfiltered_m_f1,
            "quadrants": {
                f"Q{q}": {"correct": c, "incorrect": i} for q, (c, i) in sorted(self.quadrant_counts.items())
            },
            "methods": [
                {"method": m.method, "quadrants": [f"Q{q}" for q in m.quadrants],
                 "retained": m.retained, "m_f1": m.m_f1, "m_f1_defined": m.m_f1 is not None}
                for m in self.methods
            ],
        }


def _mf1(scored: ScoredSet, mask=None):
    true, pred = (scored.true, scored.pred) if mask is None else (scored.true[mask], scored.pred[mask])
    if true.size == 0:
        return None
    return macro_f1_of(true, pred, len(scored.labels))


def quadrant_methods(scored: ScoredSet, t_mp: float, t_erp: float) -> QuadrantReport:
    q = assign_quadrants(scored, t_mp, t_erp)
    correct = scored.correct
    counts = {i: (int((correct & (q == i)).sum()), int((~correct & (q == i)).sum())) for i in (1, 2, 3, 4)}
    report = QuadrantReport(t_mp, t_erp, len(scored), _mf1(scored), counts)
    for name, quads in QUADRANT_METHODS.items():
        keep = np.isin(q, quads)
        report.methods.append(MethodRow(name, quads, int(keep.sum()), _mf1(scored, keep)))
    return report


def sweep_thresholds(step: float) -> np.ndarray:
    if not 0.0 < step < 1.0:
        raise ValueError("step must lie in (0, 1)")
    count = int(math.floor(1.0 / step + 1e-9))
    return np.round(np.arange(count + 1) * step, 12)


@dataclass(frozen=True)
class SweepPoint:
    t: float
    m_f1: float | None
    n_remaining: int


def threshold_sweep(scored: ScoredSet, metric: str, step: float = 0.01) -> list[SweepPoint]:
    """M-F1 and retained count for each threshold 0, step, 2*step, ... <= 1."""
    ts = sweep_thresholds(step)
    values = scored.metric(metric)
    k = len(scored.labels)
    order = np.argsort(-values, kind="stable")
    true, pred = scored.true[order], scored.pred[order]
    n = len(order)
    hit = np.zeros((n, k), dtype=np.int64)
    idx = np.arange(n)
    ok = true == pred
    hit[idx[ok], true[ok]] = 1
    sup = np.zeros((n, k), dtype=np.int64)
    sup[idx, true] = 1
    prd = np.zeros((n, k), dtype=np.int64)
    prd[idx, pred] = 1
    tp, sup, prd = hit.cumsum(0), sup.cumsum(0), prd.cumsum(0)
    kept = n - np.searchsorted(np.sort(values), ts, side="left")
    out = []
    for t, m in zip(ts, kept):
        if m == 0:
            out.append(SweepPoint(float(t), None, 0))
            continue
        denom = sup[m - 1] + prd[m - 1]
        present = denom > 0
        out.append(SweepPoint(float(t), float(np.mean(2 * tp[m - 1][present] / denom[present])), int(m)))
    return out


def retained_at_target(sweep: list[SweepPoint], target: float) -> int:
    """Largest retained count among sweep points whose M-F1 reaches ``target``."""
    return max((p.n_remaining for p in sweep if p.m_f1 is not None and p.m_f1 >= target), default=0)


@dataclass(frozen=True)
class HistogramBin:
    lo: float
    hi: float
    correct: int
    incorrect: int


@dataclass
class Histogram:
    metric: str
    bins: list[HistogramBin]
    crossover: float | None

    def to_rows(self):
        return [(b.lo, b.hi, b.correct, b.incorrect) for b in self.bins]


def metric_histograms(scored: ScoredSet, metric: str, bin_width: float = 0.01) -> Histogram:
    """Correct/incorrect counts per metric bin; the last bin is closed at 1.

    ``crossover`` is the lower edge of the first bin holding more correct than
    incorrect records.
    """
    if not 0.0 < bin_width < 1.0:
        raise ValueError("bin_width must lie in (0, 1)")
    nbins = int(math.ceil(1.0 / bin_width - 1e-9))
    edges = np.round(np.arange(nbins + 1) * bin_width, 12)
    edges[-1] = max(edges[-1], 1.0)
    values = scored.metric(metric)
    b = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, nbins - 1)
    ok = np.bincount(b[scored.correct], minlength=nbins)
    bad = np.bincount(b[~scored.correct], minlength=nbins)
    bins = [HistogramBin(float(edges[i]), float(edges[i + 1]), int(ok[i]), int(bad[i])) for i in range(nbins)]
    cross = next((x.lo for x in bins if x.correct > x.incorrect), None)
    return Histogram(metric.upper(), bins, cross)

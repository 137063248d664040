"""Prediction records, the predictions CSV format, and array views for scoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from cropsight.classes import CLASS_CODES, CLASS_INDEX, COUNTRIES, CONDITIONS
from cropsight.infotheory import SUM_TOLERANCE, score_matrix

PREDICTIONS_HEADER = (
    ["photo_id", "true_class"]
    + [f"p_{c}" for c in CLASS_CODES]
    + ["country", "year", "width", "height", "condition"]
)
CONDITION_TAGS = CONDITIONS + ("none",)


class PredictionsFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    """One classified photo.

    ``probs`` is kept exactly as read so files round-trip; scoring renormalises.
    ``predicted`` is only set on records whose labels were regrouped, where it
    overrides the argmax class.
    """

    photo_id: str
    true_class: str
    probs: tuple[float, ...]
    country: str = ""
    year: int | None = None
    width: int | None = None
    height: int | None = None
    condition: str = "none"
    predicted: str | None = None

    def __post_init__(self):
        if self.condition not in CONDITION_TAGS:
            raise ValueError(f"unknown condition tag {self.condition!r}")
        for dim in (self.width, self.height):
            if dim is not None and dim <= 0:
                raise ValueError("width and height must be positive")

    @property
    def argmax_index(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def predicted_class(self) -> str:
        if self.predicted is not None:
            return self.predicted
        return CLASS_CODES[self.argmax_index]

    @property
    def correct(self) -> bool:
        return self.predicted_class == self.true_class

    @property
    def top1(self) -> float:
        return max(self.probs) / sum(self.probs)

    @property
    def pixels(self) -> int | None:
        if self.width is None or self.height is None:
            return None
        return self.width * self.height


def label_order(values: Iterable[str]) -> tuple[str, ...]:
    """Class codes in the fixed order, then any group labels alphabetically."""
    present = set(values)
    known = [c for c in CLASS_CODES if c in present]
    return tuple(known + sorted(present - set(known)))


@dataclass
class ScoredSet:
    """Column view of a record set with per-record labels and scores."""

    labels: tuple[str, ...]
    true: np.ndarray
    pred: np.ndarray
    mp: np.ndarray
    erp: np.ndarray
    entropy_bits: np.ndarray
    edii: np.ndarray
    records: Sequence[PredictionRecord] = field(default_factory=tuple, repr=False)

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord], labels=None) -> "ScoredSet":
        records = list(records)
        if labels is None:
            labels = label_order([r.true_class for r in records] + [r.predicted_class for r in records])
        index = {c: i for i, c in enumerate(labels)}
        k = len(CLASS_CODES)
        P = np.array([r.probs for r in records], dtype=float).reshape(len(records), k)
        s = score_matrix(P)
        return cls(
            labels=tuple(labels),
            true=np.array([index[r.true_class] for r in records], dtype=np.int64),
            pred=np.array([index[r.predicted_class] for r in records], dtype=np.int64),
            mp=s.mp, erp=s.erp, entropy_bits=s.entropy_bits, edii=s.edii,
            records=records,
        )

    def __len__(self):
        return len(self.true)

    @property
    def correct(self) -> np.ndarray:
        return self.true == self.pred

    def metric(self, name: str) -> np.ndarray:
        name = name.lower()
        if name not in ("mp", "erp"):
            raise ValueError(f"unknown filter metric {name!r}; use MP or ERP")
        return getattr(self, name)

    def subset(self, mask) -> "ScoredSet":
        mask = np.asarray(mask)
        recs = self.records
        if len(recs):
            idx = np.flatnonzero(mask) if mask.dtype == bool else mask
            recs = [recs[i] for i in idx]
        return ScoredSet(
            self.labels, self.true[mask], self.pred[mask], self.mp[mask], self.erp[mask],
            self.entropy_bits[mask], self.edii[mask], recs,
        )


# -- CSV ---------------------------------------------------------------------

def format_probability(p: float) -> str:
    return np.format_float_positional(float(p), unique=True, trim="k", min_digits=6)


def _opt_int(text, name, line):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise PredictionsFormatError(f"line {line}: {name} must be an integer, got {text!r}") from None


def parse_row(row: dict, line: int) -> PredictionRecord:
    if row["true_class"] not in CLASS_INDEX:
        raise PredictionsFormatError(f"line {line}: unknown class {row['true_class']!r}")
    try:
        probs = tuple(float(row[f"p_{c}"]) for c in CLASS_CODES)
    except ValueError as exc:
        raise PredictionsFormatError(f"line {line}: {exc}") from None
    if any(not 0.0 <= p <= 1.0 for p in probs):
        raise PredictionsFormatError(f"line {line}: probabilities must lie in [0, 1]")
    if abs(sum(probs) - 1.0) > SUM_TOLERANCE:
        raise PredictionsFormatError(f"line {line}: probabilities sum to {sum(probs):.9f}")
    country = row["country"]
    if country and country not in COUNTRIES:
        raise PredictionsFormatError(f"line {line}: unknown country {country!r}")
    try:
        return PredictionRecord(
            photo_id=row["photo_id"],
            true_class=row["true_class"],
            probs=probs,
            country=country,
            year=_opt_int(row["year"], "year", line),
            width=_opt_int(row["width"], "width", line),
            height=_opt_int(row["height"], "height", line),
            condition=row["condition"] or "none",
        )
    except ValueError as exc:
        raise PredictionsFormatError(f"line {line}: {exc}") from None


def read_predictions(path) -> list[PredictionRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTIONS_HEADER:
            raise PredictionsFormatError(f"{path}: unexpected header {header}")
        out = []
        for line, values in enumerate(reader, start=2):
            if not values:
                continue
            if len(values) != len(header):
                raise PredictionsFormatError(f"line {line}: expected {len(header)} fields, got {len(values)}")
            out.append(parse_row(dict(zip(header, values)), line))
    seen = set()
    for r in out:
        if r.photo_id in seen:
            raise PredictionsFormatError(f"duplicate photo_id {r.photo_id!r}")
        seen.add(r.photo_id)
    return out


def _cell(v):
    return "" if v is None else str(v)


def write_predictions(path, records: Iterable[PredictionRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTIONS_HEADER)
        for r in records:
            w.writerow(
                [r.photo_id, r.true_class]
                + [format_probability(p) for p in r.probs]
                + [r.country, _cell(r.year), _cell(r.width), _cell(r.height), r.condition]
            )

"""Seeded construction of the training and inference sets.

All quotas are computed in exact rational arithmetic and every random draw
comes from a Philox stream keyed by (seed, stage, class, country), so a given
seed always yields the same assignment on any platform.
"""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from cropsight.classes import CLASS_CODES
from cropsight.rng import stream

SETS = ("training", "balanced_inference", "imbalanced_inference", "unused")
PHOTOS_HEADER = ["photo_id", "class", "country", "year", "hm", "quality_flag", "condition"]


class SamplingError(ValueError):
    """A class does not have enough photos for the requested quota."""

    def __init__(self, crop, needed, available, stage):
        self.crop = crop
        super().__init__(f"class {crop}: {stage} needs {needed} photos, only {available} available")


@dataclass(frozen=True)
class PhotoMeta:
    photo_id: str
    crop: str
    country: str
    year: int
    hm: int
    quality_flag: str = "train_ok"
    condition: str = "none"

    def __post_init__(self):
        if self.quality_flag not in ("train_ok", "rejected"):
            raise ValueError(f"unknown quality flag {self.quality_flag!r}")
        if self.quality_flag == "train_ok" and self.condition != "none":
            raise ValueError(f"photo {self.photo_id} is train_ok but tagged {self.condition!r}")


def _round_to_total(quotas: Mapping[str, Fraction], limits: Mapping[str, int], total: int) -> dict[str, int]:
    # largest remainder; ties by country code
    out = {c: int(q) for c, q in quotas.items()}  # floor for non-negative Fractions
    short = total - sum(out.values())
    order = sorted(quotas, key=lambda c: (-(quotas[c] - out[c]), c))
    for c in order:
        if short == 0:
            break
        if out[c] < limits[c] and quotas[c] > out[c]:
            out[c] += 1
            short -= 1
    if short:
        raise AssertionError("rounding could not reach the requested total")
    return out


def equal_allocation(available: Mapping[str, int], n: int) -> dict[str, int]:
    """Split ``n`` equally over countries, clamped to what each country has.

    The shortfall left by clamped countries goes to the others in proportion
    to their remaining availability.
    """
    avail = {c: a for c, a in available.items() if a > 0}
    if sum(avail.values()) < n:
        raise ValueError("not enough photos for the requested total")
    if not avail or n == 0:
        return {c: 0 for c in available}
    share = Fraction(n, len(avail))
    alloc = {c: min(share, Fraction(a)) for c, a in avail.items()}
    deficit = n - sum(alloc.values())
    residual = {c: avail[c] - alloc[c] for c in avail}
    spare = sum(residual.values())
    if deficit > 0:
        alloc = {c: alloc[c] + deficit * residual[c] / spare for c in avail}
    out = _round_to_total(alloc, avail, n)
    return {c: out.get(c, 0) for c in available}


def l1_quotas(target_counts: Mapping[str, int], available: Mapping[str, int], n: int) -> dict[str, int]:
    """Integer quotas summing to ``n`` closest in L1 to the scaled target distribution.

    ``target_counts`` gives the reference (training) count per country; the
    target for each country is ``n`` times its share. Quotas never exceed
    ``available``. Unit-by-unit greedy is exact for this separable convex problem.
    """
    if sum(available.values()) < n:
        raise ValueError("not enough photos for the requested total")
    ref_total = sum(target_counts.values())
    countries = sorted(set(available) | set(target_counts))
    target = {
        c: Fraction(n * target_counts.get(c, 0), ref_total) if ref_total else Fraction(0)
        for c in countries
    }
    x = {c: 0 for c in countries}
    for _ in range(n):
        best = None
        for c in countries:
            if x[c] >= available.get(c, 0):
                continue
            gain = abs(x[c] + 1 - target[c]) - abs(x[c] - target[c])
            if best is None or gain < best[0]:
                best = (gain, c)
        x[best[1]] += 1
    return {c: x[c] for c in countries if c in available or x[c]}


def l1_distance(quotas: Mapping[str, int], target_counts: Mapping[str, int], n: int) -> Fraction:
    ref_total = sum(target_counts.values())
    keys = set(quotas) | set(target_counts)
    return sum(abs(quotas.get(c, 0) - Fraction(n * target_counts.get(c, 0), ref_total)) for c in keys)


def _by_class_country(photos: Iterable[PhotoMeta]):
    groups = defaultdict(lambda: defaultdict(list))
    for p in photos:
        groups[p.crop][p.country].append(p.photo_id)
    for crop in groups:
        for country in groups[crop]:
            groups[crop][country].sort()
    return groups


def _draw(ids: list[str], k: int, seed: int, *labels) -> list[str]:
    if k == len(ids):
        return list(ids)
    picks = stream(seed, *labels).choice(len(ids), size=k, replace=False)
    return [ids[i] for i in np.sort(picks)]


def _check_unique(photos):
    counts = Counter(p.photo_id for p in photos)
    dup = [pid for pid, c in counts.items() if c > 1]
    if dup:
        raise ValueError(f"duplicate photo_id {dup[0]!r}")


def select_training(photos: Iterable[PhotoMeta], n_per_class: int = 400, seed: int = 0,
                    classes: Iterable[str] | None = None) -> set[str]:
    """Country-stratified training sample of ``n_per_class`` train_ok photos per class.

    ``classes`` names classes that must be served even if no photo is left
    for them; by default only the classes present are sampled.
    """
    photos = list(photos)
    _check_unique(photos)
    chosen = set()
    groups = _by_class_country(p for p in photos if p.quality_flag == "train_ok")
    for crop in sorted(set(groups) | set(classes or ()), key=_class_key):
        by_country = groups[crop]
        available = {c: len(ids) for c, ids in by_country.items()}
        if sum(available.values()) < n_per_class:
            raise SamplingError(crop, n_per_class, sum(available.values()), "training")
        quotas = equal_allocation(available, n_per_class)
        for country in sorted(by_country):
            chosen.update(_draw(by_country[country], quotas[country], seed, "training", crop, country))
    return chosen


def select_balanced_inference(
    leftover: Iterable[PhotoMeta],
    n_per_class: int = 85,
    training_distribution: Mapping[str, Mapping[str, int]] | None = None,
    seed: int = 0,
) -> set[str]:
    """``n_per_class`` leftover photos per class whose country mix tracks the training set.

    ``training_distribution`` maps class -> country -> training count.
    """
    training_distribution = training_distribution or {}
    groups = _by_class_country(leftover)
    chosen = set()
    for crop in sorted(groups, key=_class_key):
        by_country = groups[crop]
        available = {c: len(ids) for c, ids in by_country.items()}
        if sum(available.values()) < n_per_class:
            raise SamplingError(crop, n_per_class, sum(available.values()), "balanced inference")
        reference = training_distribution.get(crop) or available
        quotas = l1_quotas(reference, available, n_per_class)
        for country in sorted(by_country):
            chosen.update(_draw(by_country[country], quotas.get(country, 0), seed, "balanced", crop, country))
    return chosen


def select_imbalanced_inference(
    leftover: Iterable[PhotoMeta],
    cap: int | None = 1000,
    balanced_set: Iterable[str] = (),
    seed: int = 0,
) -> set[str]:
    """All leftovers per class, or a capped random subset that keeps the balanced members."""
    balanced = set(balanced_set)
    by_class = defaultdict(list)
    for p in leftover:
        by_class[p.crop].append(p.photo_id)
    chosen = set()
    for crop in sorted(by_class, key=_class_key):
        ids = sorted(by_class[crop])
        if cap is None or len(ids) <= cap:
            chosen.update(ids)
            continue
        keep = [i for i in ids if i in balanced]
        if len(keep) > cap:
            raise SamplingError(crop, len(keep), cap, "imbalanced cap (balanced members)")
        rest = [i for i in ids if i not in balanced]
        chosen.update(keep)
        chosen.update(_draw(rest, cap - len(keep), seed, "imbalanced", crop))
    return chosen


def _class_key(crop):
    return CLASS_CODES.index(crop) if crop in CLASS_CODES else len(CLASS_CODES)


@dataclass
class SetAssignment:
    """Photo -> set. Balanced photos are also members of the imbalanced set."""

    seed: int
    sets: dict[str, str] = field(default_factory=dict)

    def members(self, name: str) -> set[str]:
        if name == "imbalanced_inference":
            return {p for p, s in self.sets.items() if s in ("balanced_inference", "imbalanced_inference")}
        return {p for p, s in self.sets.items() if s == name}

    @property
    def training(self):
        return self.members("training")

    @property
    def balanced(self):
        return self.members("balanced_inference")

    @property
    def imbalanced(self):
        return self.members("imbalanced_inference")

    def rows(self):
        return sorted(self.sets.items())


def build_sets(
    photos: Iterable[PhotoMeta],
    seed: int = 0,
    n_train: int = 400,
    n_balanced: int = 85,
    cap: int | None = 1000,
    classes: Iterable[str] | None = None,
) -> SetAssignment:
    photos = list(photos)
    training = select_training(photos, n_train, seed, classes)
    leftover = [p for p in photos if p.quality_flag == "train_ok" and p.photo_id not in training]
    dist = defaultdict(Counter)
    by_id = {p.photo_id: p for p in photos}
    for pid in training:
        dist[by_id[pid].crop][by_id[pid].country] += 1
    balanced = select_balanced_inference(leftover, n_balanced, dist, seed)
    imbalanced = select_imbalanced_inference(leftover, cap, balanced, seed)
    out = SetAssignment(seed)
    for p in photos:
        if p.photo_id in training:
            s = "training"
        elif p.photo_id in balanced:
            s = "balanced_inference"
        elif p.photo_id in imbalanced:
            s = "imbalanced_inference"
        else:
            s = "unused"
        out.sets[p.photo_id] = s
    return out


def read_photos(path) -> list[PhotoMeta]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PHOTOS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(PHOTOS_HEADER)}")
        for line, row in enumerate(reader, start=2):
            try:
                out.append(PhotoMeta(
                    row["photo_id"], row["class"], row["country"], int(row["year"]), int(row["hm"]),
                    row["quality_flag"], row["condition"] or "none",
                ))
            except ValueError as exc:
                raise ValueError(f"line {line}: {exc}") from None
    return out


def write_photos(path, photos: Iterable[PhotoMeta]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PHOTOS_HEADER)
        for p in photos:
            w.writerow([p.photo_id, p.crop, p.country, p.year, p.hm, p.quality_flag, p.condition])


def write_assignment(path, assignment: SetAssignment) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["photo_id", "set"])
        w.writerows(assignment.rows())

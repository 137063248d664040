"""Crop-calendar harmonisation and mature pre-harvest windows.

Calendars are kept at half-month resolution: slot ``hm = 2 * (month - 1)``
for days 1-15 and ``hm + 1`` for the rest of the month, 24 slots per year.
Windows are inclusive and circular, so ``HalfMonthWindow(23, 0)`` spans
16 December to 15 January.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from cropsight.classes import CLASS_INDEX, COUNTRIES

SLOTS = 24

VARIETIES = ("winter", "spring", "early_ware", "late_ware", "single")
SOURCES = ("AGRI4CAST", "USDA", "EUROPABIO", "expert")
PROVENANCES = ("source_table", "expert_fill")

# lower rank wins a duplicate
SOURCE_PRIORITY = {"expert": 0, "AGRI4CAST": 1, "USDA": 2, "EUROPABIO": 3}

# varieties that, cultivated together in one country, make its calendar ambiguous
CONFLICTING_VARIETIES = (("winter", "spring"), ("early_ware", "late_ware"))
_VARIETY_PREFERENCE = ("winter", "early_ware", "single", "spring", "late_ware")

# crop -> (half-months added before the harvest start, half-months trimmed from its end)
MATURITY_RULES = {
    "B11": (4, 1),
    "B12": (4, 1),
    "B13": (4, 1),
    "B14": (4, 1),
    "B15": (4, 1),
    "B31": (4, 1),
    "B32": (4, 1),
    "B33": (4, 1),
    "B16": (6, 1),
    "B21": (6, 1),
    "B22": (6, 1),
    "rice": (6, 1),
}
YEAR_ROUND = ("B55",)


class CalendarError(ValueError):
    """Invalid or conflicting calendar input; ``row`` is 1-based when known."""

    def __init__(self, message, row=None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


def half_month(month: int, day: int) -> int:
    if not 1 <= month <= 12 or not 1 <= day <= 31:
        raise ValueError(f"invalid date {month}/{day}")
    return 2 * (month - 1) + (0 if day <= 15 else 1)


@dataclass(frozen=True)
class HalfMonthWindow:
    start_hm: int
    end_hm: int

    def __post_init__(self):
        for v in (self.start_hm, self.end_hm):
            if not isinstance(v, int) or not 0 <= v < SLOTS:
                raise ValueError(f"half-month index must be an integer in [0, 23], got {v!r}")

    @property
    def length(self) -> int:
        return (self.end_hm - self.start_hm) % SLOTS + 1

    def contains(self, hm: int) -> bool:
        return (hm - self.start_hm) % SLOTS <= (self.end_hm - self.start_hm) % SLOTS

    def slots(self) -> list[int]:
        return [(self.start_hm + i) % SLOTS for i in range(self.length)]


FULL_YEAR = HalfMonthWindow(0, SLOTS - 1)


@dataclass(frozen=True)
class CalendarEntry:
    country: str
    crop: str
    variety: str
    harvest: HalfMonthWindow
    source: str
    provenance: str = "source_table"

    @property
    def key(self):
        return (self.country, self.crop)


@dataclass(frozen=True)
class Override:
    """Expert harvest window for one (country, crop) pair."""

    country: str
    crop: str
    harvest: HalfMonthWindow
    force: bool = False


def _validate(entry: CalendarEntry, row: int) -> None:
    if entry.country not in COUNTRIES:
        raise CalendarError(f"unknown country {entry.country!r}", row)
    if entry.crop not in CLASS_INDEX:
        raise CalendarError(f"unknown crop class {entry.crop!r}", row)
    if entry.variety not in VARIETIES:
        raise CalendarError(f"unknown variety {entry.variety!r}", row)
    if entry.source not in SOURCES:
        raise CalendarError(f"unknown source {entry.source!r}", row)
    if entry.provenance not in PROVENANCES:
        raise CalendarError(f"unknown provenance {entry.provenance!r}", row)
    if not isinstance(entry.harvest, HalfMonthWindow):
        raise CalendarError("harvest must be a HalfMonthWindow", row)


def _sort_key(e: CalendarEntry):
    return (e.country, e.crop, _VARIETY_PREFERENCE.index(e.variety))


def harmonize(entries: Iterable[CalendarEntry]) -> list[CalendarEntry]:
    """Merge raw multi-source rows into one row per (country, crop, variety).

    The highest-priority source wins a duplicate. Two rows from the same source
    for the same key must agree on the window.
    """
    best: dict[tuple, tuple[int, CalendarEntry]] = {}
    by_source: dict[tuple, tuple[int, CalendarEntry]] = {}
    for row, entry in enumerate(entries, start=1):
        _validate(entry, row)
        skey = (entry.country, entry.crop, entry.variety, entry.source)
        if skey in by_source:
            first_row, first = by_source[skey]
            if first.harvest != entry.harvest:
                raise CalendarError(
                    f"conflicting {entry.source} windows for {entry.country}/{entry.crop}"
                    f" ({entry.variety}): {first.harvest} at row {first_row} vs {entry.harvest}",
                    row,
                )
            continue
        by_source[skey] = (row, entry)
        key = (entry.country, entry.crop, entry.variety)
        rank = SOURCE_PRIORITY[entry.source]
        if key not in best or rank < best[key][0]:
            best[key] = (rank, entry)
    return sorted((e for _, e in best.values()), key=_sort_key)


def resolve_varieties(
    entries: Iterable[CalendarEntry],
) -> tuple[list[CalendarEntry], list[tuple[str, str]]]:
    """Reduce to one entry per (country, crop).

    Pairs cultivating both winter and spring (or early and late ware) varieties
    are dropped and returned as gaps for expert filling.
    """
    grouped: dict[tuple, list[CalendarEntry]] = defaultdict(list)
    for e in entries:
        grouped[e.key].append(e)
    kept, gaps = [], []
    for key in sorted(grouped):
        group = grouped[key]
        varieties = {e.variety for e in group}
        if any(a in varieties and b in varieties for a, b in CONFLICTING_VARIETIES):
            gaps.append(key)
            continue
        kept.append(min(group, key=_sort_key))
    return kept, gaps


def identify_gaps(
    entries: Iterable[CalendarEntry],
    registry: Iterable[tuple[str, str]],
    conflicts: Iterable[tuple[str, str]] = (),
) -> list[tuple[str, str]]:
    """Cultivated pairs without a calendar entry, plus variety conflicts, sorted."""
    covered = {e.key for e in entries}
    missing = {tuple(p) for p in registry} - covered
    return sorted(missing | ({tuple(p) for p in conflicts} - covered))


def apply_overrides(
    entries: Sequence[CalendarEntry],
    gaps: Iterable[tuple[str, str]],
    overrides: Iterable[Override],
) -> tuple[list[CalendarEntry], list[tuple[str, str]]]:
    """Fill gaps with expert windows.

    Returns the merged entries and the gaps left without an override. An
    override for a pair that is not a gap needs ``force=True`` and then
    replaces the existing entry.
    """
    gap_set = {tuple(g) for g in gaps}
    merged = {e.key: e for e in entries}
    filled = set()
    for row, ov in enumerate(overrides, start=1):
        key = (ov.country, ov.crop)
        if ov.country not in COUNTRIES or ov.crop not in CLASS_INDEX:
            raise CalendarError(f"invalid override target {key}", row)
        if key not in gap_set and not ov.force:
            raise CalendarError(f"override for {key[0]}/{key[1]} is not a gap; set force to replace it", row)
        previous = merged.get(key)
        merged[key] = CalendarEntry(
            country=ov.country,
            crop=ov.crop,
            variety=previous.variety if previous is not None else "single",
            harvest=ov.harvest,
            source="expert",
            provenance="expert_fill",
        )
        filled.add(key)
    unresolved = sorted(gap_set - filled)
    return sorted(merged.values(), key=_sort_key), unresolved


def derive_mature_window(entry: CalendarEntry) -> HalfMonthWindow:
    """Mature pre-harvest window from a harvest window.

    The last harvest half-month is dropped and the window is extended back by
    two months (cereals, oilseeds, soya) or three months (maize, potatoes,
    sugar beet). Temporary grassland has no rule and keeps its window.
    """
    if entry.crop in YEAR_ROUND:
        return entry.harvest
    try:
        lead, trim = MATURITY_RULES[entry.crop]
    except KeyError:
        raise CalendarError(f"no maturity rule for crop {entry.crop!r}") from None
    h = entry.harvest
    if h.length + lead - trim > SLOTS:
        raise CalendarError(
            f"mature window for {entry.country}/{entry.crop} would span more than a year"
        )
    return HalfMonthWindow((h.start_hm - lead) % SLOTS, (h.end_hm - trim) % SLOTS)


def photo_in_mature_window(photo_hm: int, window: HalfMonthWindow) -> bool:
    if not 0 <= photo_hm < SLOTS:
        raise ValueError(f"half-month index out of range: {photo_hm}")
    return window.contains(photo_hm)


@dataclass
class MaturityTable:
    windows: dict[tuple[str, str], HalfMonthWindow]
    provenance: dict[tuple[str, str], str]
    unresolved: list[tuple[str, str]] = field(default_factory=list)

    def accepts(self, country: str, crop: str, hm: int) -> bool:
        """Whether a photo of ``crop`` taken at ``hm`` in ``country`` shows a mature crop."""
        if crop in YEAR_ROUND:
            return True
        window = self.windows.get((country, crop))
        return window is not None and window.contains(hm)


def build_maturity(raw_entries, registry, overrides=()) -> MaturityTable:
    """Run harmonisation, variety resolution, gap filling and the maturity rules."""
    kept, conflicts = resolve_varieties(harmonize(raw_entries))
    gaps = identify_gaps(kept, registry, conflicts)
    entries, unresolved = apply_overrides(kept, gaps, overrides)
    windows = {e.key: derive_mature_window(e) for e in entries}
    provenance = {e.key: e.provenance for e in entries}
    return MaturityTable(windows, provenance, unresolved)


# -- CSV files ---------------------------------------------------------------

CALENDAR_HEADER = ["country", "crop", "variety", "harvest_start_hm", "harvest_end_hm", "source"]
REGISTRY_HEADER = ["country", "crop"]
OVERRIDES_HEADER = ["country", "crop", "harvest_start_hm", "harvest_end_hm", "force"]
MATURITY_HEADER = ["country", "crop", "mature_start_hm", "mature_end_hm", "provenance"]


def _rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise CalendarError(f"{Path(path).name}: expected header {','.join(header)}, got {got}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CalendarError(f"{Path(path).name}: expected {len(header)} fields", line)
            yield line, dict(zip(header, row))


def _window(rec, start, end, line):
    try:
        return HalfMonthWindow(int(rec[start]), int(rec[end]))
    except ValueError as exc:
        raise CalendarError(str(exc), line) from None


def read_calendars(path) -> list[CalendarEntry]:
    out = []
    for line, rec in _rows(path, CALENDAR_HEADER):
        entry = CalendarEntry(
            rec["country"], rec["crop"], rec["variety"],
            _window(rec, "harvest_start_hm", "harvest_end_hm", line), rec["source"],
        )
        _validate(entry, line)
        out.append(entry)
    return out


def read_registry(path) -> list[tuple[str, str]]:
    out = []
    for line, rec in _rows(path, REGISTRY_HEADER):
        if rec["country"] not in COUNTRIES or rec["crop"] not in CLASS_INDEX:
            raise CalendarError(f"invalid registry pair {rec['country']}/{rec['crop']}", line)
        out.append((rec["country"], rec["crop"]))
    return out


def read_overrides(path) -> list[Override]:
    out = []
    for line, rec in _rows(path, OVERRIDES_HEADER):
        if rec["force"] not in ("0", "1"):
            raise CalendarError(f"force must be 0 or 1, got {rec['force']!r}", line)
        out.append(Override(
            rec["country"], rec["crop"],
            _window(rec, "harvest_start_hm", "harvest_end_hm", line), rec["force"] == "1",
        ))
    return out


def write_maturity(path, table: MaturityTable) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATURITY_HEADER)
        for key in sorted(table.windows):
            win = table.windows[key]
            w.writerow([key[0], key[1], win.start_hm, win.end_hm, table.provenance[key]])


def read_maturity(path) -> MaturityTable:
    windows, provenance = {}, {}
    for line, rec in _rows(path, MATURITY_HEADER):
        key = (rec["country"], rec["crop"])
        windows[key] = _window(rec, "mature_start_hm", "mature_end_hm", line)
        provenance[key] = rec["provenance"]
    return MaturityTable(windows, provenance)

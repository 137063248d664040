"""Synthetic prediction sets with controllable accuracy and confidence.

Each record first draws whether it is correct. Its probability vector then
puts a peak mass ``s ~ Beta(c, k - 1)`` on the predicted class, where ``c`` is
``concentration_correct`` or ``concentration_incorrect``. The remainder
``1 - s`` is spread over the other classes by a Dirichlet draw. For an
incorrect record, the remainder mean leans toward the true class by
``runner_up_share``. The largest component is finally swapped into the peak
position, so the argmax is always the intended prediction.

Wrong predictions use affinity weights. With ``confusion_affinity="cereal"``,
errors fall mostly inside the cereal block.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from cropsight.classes import CEREALS, CLASS_CODES, COUNTRIES
from cropsight.records import PredictionRecord, write_predictions
from cropsight.rng import stream

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

# class sizes of the operational (imbalanced) inference set: leftover
# train_ok photos per class after 400 go to training, capped at 1000
IMBALANCED_SHAPE = {
    "B11": 1000, "B12": 85, "B13": 1000, "B14": 751, "B15": 632, "B16": 993,
    "B21": 822, "B22": 667, "B31": 196, "B32": 1000, "B33": 497, "B55": 999,
}

# pixel bins of the operational set: (width, height) sizes and share in percent
RESOLUTION_TABLE = (
    (((640, 480), (1024, 768), (800, 600)), 1.39),
    (((1600, 1200), (1280, 960), (1632, 1224), (1200, 1600), (1200, 900), (1605, 1204),
      (1728, 1152), (1288, 966), (1600, 1198), (1612, 1212), (1700, 1130), (1600, 963),
      (1261, 817), (1600, 900), (1397, 1048), (1593, 1200), (1319, 989), (1280, 1024),
      (1552, 1164)), 64.73),
    (((1664, 1248), (2048, 1360), (1920, 1080), (1824, 1216), (1733, 1300), (1792, 1312),
      (1936, 1288), (1656, 1242), (1984, 1488), (2048, 1104), (2000, 1333), (1824, 1368),
      (1936, 1296), (1936, 1452), (1920, 1440), (1662, 1246), (2080, 1368), (1360, 2048),
      (2048, 1376), (1800, 1350), (1632, 1232)), 6.68),
    (((2048, 1536), (2304, 1728), (2272, 1704), (2288, 1712), (1536, 2048), (2352, 1568),
      (2592, 1458), (2200, 1650), (2042, 1532), (2133, 1600), (2240, 1680), (2080, 1544)), 22.32),
    (((2560, 1712), (2560, 1920), (2400, 1800), (2344, 1758), (2464, 1632), (1932, 2580),
      (2576, 1932)), 2.33),
    (((2592, 1944), (2816, 2112)), 3.46),
    (((2848, 2136), (3072, 2048), (3456, 1946), (2896, 2172)), 0.95),
    (((3072, 2304), (3264, 2448), (3584, 2016)), 3.08),
    (((3968, 2976), (3488, 2616), (4320, 2432), (3664, 2748), (4672, 3504), (3840, 2880)), 0.81),
)

SURVEY_YEARS = (2006, 2009, 2012, 2015, 2018)
CEREAL_WEIGHT = 5.0


@dataclass(frozen=True)
class GeneratorSpec:
    n_per_class: Mapping[str, int] = field(default_factory=lambda: dict(IMBALANCED_SHAPE))
    p_correct: float | Mapping[str, float] = 0.78
    concentration_correct: float = 20.0
    concentration_incorrect: float = 3.0
    confusion_affinity: str | Mapping[tuple[str, str], float] | None = "cereal"
    seed: int = 0
    residual_concentration: float = 20.0
    runner_up_share: float = 0.7
    k: int | None = None

    def __post_init__(self):
        unknown = [c for c in self.n_per_class if c not in CLASS_CODES]
        if unknown:
            raise ValueError(f"unknown classes {unknown}")
        if any(n < 0 for n in self.n_per_class.values()):
            raise ValueError("class counts must be non-negative")
        if self.k is not None and self.k != len(self.classes):
            raise ValueError(f"k={self.k} but {len(self.classes)} classes are configured")
        if len(self.classes) < 2:
            raise ValueError("need at least two classes")
        for name in ("concentration_correct", "concentration_incorrect", "residual_concentration"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if any(not 0.0 <= p <= 1.0 for p in self._p_by_class().values()):
            raise ValueError("p_correct must lie in [0, 1]")
        if not 0.0 <= self.runner_up_share <= 1.0:
            raise ValueError("runner_up_share must lie in [0, 1]")
        self.affinity_matrix()

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(c for c in CLASS_CODES if c in self.n_per_class)

    def _p_by_class(self) -> dict[str, float]:
        if isinstance(self.p_correct, Mapping):
            return {c: float(self.p_correct.get(c, 0.78)) for c in self.classes}
        return {c: float(self.p_correct) for c in self.classes}

    def affinity_matrix(self) -> np.ndarray:
        """Relative weight of predicting column class for a row-class record; zero diagonal."""
        cls = self.classes
        w = np.ones((len(cls), len(cls)))
        aff = self.confusion_affinity
        if aff == "cereal":
            block = np.array([c in CEREALS for c in cls])
            w[np.ix_(block, block)] = CEREAL_WEIGHT
        elif isinstance(aff, Mapping):
            for (a, b), v in aff.items():
                if v < 0:
                    raise ValueError("affinity weights must be non-negative")
                w[cls.index(a), cls.index(b)] = w[cls.index(b), cls.index(a)] = v
        elif aff is not None:
            raise ValueError(f"unknown confusion_affinity {aff!r}")
        np.fill_diagonal(w, 0.0)
        if (w.sum(axis=1) == 0).any():
            raise ValueError("every class needs some wrong-class weight")
        return w


@dataclass(frozen=True)
class SyntheticArrays:
    true: np.ndarray
    pred: np.ndarray
    probs: np.ndarray  # over GeneratorSpec.classes
    classes: tuple[str, ...]


def generate_arrays(spec: GeneratorSpec) -> SyntheticArrays:
    cls = spec.classes
    k = len(cls)
    counts = [int(spec.n_per_class[c]) for c in cls]
    true = np.repeat(np.arange(k), counts)
    n = true.size
    rng = stream(spec.seed, "synth", "scores")
    p_by = spec._p_by_class()
    correct = rng.random(n) < np.array([p_by[c] for c in cls])[true]

    pred = true.copy()
    bad = np.flatnonzero(~correct)
    if bad.size:
        cum = spec.affinity_matrix().cumsum(axis=1)[true[bad]]
        u = rng.random(bad.size) * cum[:, -1]
        pred[bad] = np.minimum((cum <= u[:, None]).sum(axis=1), k - 1)

    conc = np.where(correct, spec.concentration_correct, spec.concentration_incorrect)
    peak = rng.beta(conc, k - 1)

    rows = np.arange(n)
    mean = np.ones((n, k))
    mean[rows, pred] = 0.0
    if k > 2:
        lean = np.zeros((n, k))
        lean[bad, true[bad]] = 1.0
        spread = mean.copy()
        spread[bad, true[bad]] = 0.0
        spread /= np.maximum(spread.sum(axis=1, keepdims=True), 1)
        share = np.where(correct, 0.0, spec.runner_up_share)[:, None]
        mean = np.where(correct[:, None], mean / (k - 1), share * lean + (1 - share) * spread)
    # components with zero mean get no mass
    shape = spec.residual_concentration * mean
    g = np.where(shape > 0, rng.gamma(np.where(shape > 0, shape, 1.0)), 0.0)
    total = g.sum(axis=1, keepdims=True)
    rest = np.where(total > 0, g / np.where(total > 0, total, 1.0), mean)

    P = (1.0 - peak)[:, None] * rest
    P[rows, pred] = peak
    top = P.argmax(axis=1)
    hi = P[rows, top].copy()
    P[rows, top] = P[rows, pred]
    P[rows, pred] = hi
    P /= P.sum(axis=1, keepdims=True)
    return SyntheticArrays(true, pred, P, cls)


def _metadata(spec: GeneratorSpec, n: int):
    rng = stream(spec.seed, "synth", "meta")
    country = rng.integers(len(COUNTRIES), size=n)
    year = rng.integers(len(SURVEY_YEARS), size=n)
    share = np.array([pct for _, pct in RESOLUTION_TABLE])
    b = rng.choice(len(RESOLUTION_TABLE), size=n, p=share / share.sum())
    pick = rng.random(n)
    sizes = []
    for bi, u in zip(b, pick):
        options = RESOLUTION_TABLE[bi][0]
        sizes.append(options[int(u * len(options))])
    return country, year, sizes


def generate(spec: GeneratorSpec) -> list[PredictionRecord]:
    """Deterministic record set for ``spec``; absent classes get probability 0."""
    arr = generate_arrays(spec)
    n = arr.true.size
    if n == 0:
        return []
    full = np.zeros((n, len(CLASS_CODES)))
    full[:, [CLASS_CODES.index(c) for c in arr.classes]] = arr.probs
    country, year, sizes = _metadata(spec, n)
    out = []
    for i in range(n):
        w, h = sizes[i]
        out.append(PredictionRecord(
            photo_id=f"S{spec.seed}-{i:06d}",
            true_class=arr.classes[arr.true[i]],
            probs=tuple(full[i].tolist()),
            country=COUNTRIES[country[i]],
            year=SURVEY_YEARS[year[i]],
            width=w,
            height=h,
        ))
    return out


def spec_from_dict(d: Mapping) -> GeneratorSpec:
    d = dict(d)
    aff = d.get("confusion_affinity")
    if isinstance(aff, Mapping):
        d["confusion_affinity"] = {tuple(key.split(":")): float(v) for key, v in aff.items()}
    return GeneratorSpec(**d)


def load_spec(path) -> GeneratorSpec:
    """Read ``synth.toml``; keys live at top level or under ``[generator]``."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return spec_from_dict(data.get("generator", data))


def write_synthetic(path, spec: GeneratorSpec) -> int:
    records = generate(spec)
    write_predictions(path, records)
    return len(records)

"""Uncertainty scores for a single softmax output.

``information`` and ``entropy`` are in bits. The expected information
divergence between the reference class and the others is evaluated in nats,
which makes the exponential in the Equivalent Reference Probability (ERP) its
exact inverse: for a vector whose non-reference mass is spread evenly, ERP
equals the reference probability itself, and for the uniform vector it is 1/k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from cropsight.classes import CLASS_CODES

SUM_TOLERANCE = 1e-6
CERTAINTY_EPS = 1e-12


def information(p: float) -> float:
    """Surprise of an event of probability ``p``, in bits."""
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"probability out of range: {p}")
    if p == 0.0:
        return math.inf
    return -math.log2(p)


def as_probability_vector(p) -> np.ndarray:
    """Validate ``p`` and return it as a float array renormalised to sum to one."""
    v = np.asarray(p, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("a probability vector needs at least two entries")
    if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    total = v.sum()
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise ValueError(f"probabilities sum to {total:.9f}, not 1")
    return v / total


def _xlogx(v, log):
    out = np.zeros_like(v)
    nz = v > 0
    out[nz] = v[nz] * log(v[nz])
    return out


def entropy(p) -> float:
    """Shannon entropy in bits, with 0 log 0 taken as 0."""
    v = as_probability_vector(p)
    return float(-_xlogx(v, np.log2).sum())


def reference_index(p) -> int:
    """Index of the most probable class; ties go to the lowest index."""
    return int(np.argmax(np.asarray(p, dtype=float)))


def expected_info_divergence(p, ref: int | None = None) -> float:
    """Expected difference of information between class ``ref`` and the rest, in nats.

    Returns ``inf`` when the reference probability is within 1e-12 of one.
    """
    v = as_probability_vector(p)
    if ref is None:
        ref = reference_index(v)
    p_ref = v[ref]
    if p_ref >= 1.0 - CERTAINTY_EPS:
        return math.inf
    if p_ref == 0.0:
        return -math.inf
    rest = np.delete(v, ref)
    # summing the rest avoids cancellation in 1 - p_ref near certainty
    return float(math.log(p_ref) - _xlogx(rest, np.log).sum() / rest.sum())


def _erp_from_divergence(d, k):
    # exp(d) / (exp(d) + k - 1), written to avoid overflow
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + (k - 1) * np.exp(-d))


def erp(p) -> float:
    """Equivalent Reference Probability with the most probable class as reference."""
    v = as_probability_vector(p)
    d = expected_info_divergence(v)
    if math.isinf(d) and d > 0:
        return 1.0
    return float(_erp_from_divergence(d, v.size))


@dataclass(frozen=True)
class UncertaintyScores:
    mp: float
    argmax_class: str
    entropy_bits: float
    edii: float
    erp: float


def score_vector(p, classes=CLASS_CODES) -> UncertaintyScores:
    v = as_probability_vector(p)
    if len(classes) != v.size:
        raise ValueError(f"expected {len(classes)} probabilities, got {v.size}")
    ref = reference_index(v)
    return UncertaintyScores(
        mp=float(v[ref]),
        argmax_class=classes[ref],
        entropy_bits=entropy(v),
        edii=expected_info_divergence(v, ref),
        erp=erp(v),
    )


def score_record(record) -> UncertaintyScores:
    return score_vector(record.probs)


class ScoreArrays(NamedTuple):
    mp: np.ndarray
    argmax: np.ndarray
    entropy_bits: np.ndarray
    edii: np.ndarray
    erp: np.ndarray


def score_matrix(P) -> ScoreArrays:
    """Row-wise scores for an ``(n, k)`` matrix of probability vectors."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] < 2:
        raise ValueError("expected an (n, k) matrix with k >= 2")
    if P.size and (not np.all(np.isfinite(P)) or P.min() < 0.0 or P.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    totals = P.sum(axis=1)
    bad = np.abs(totals - 1.0) > SUM_TOLERANCE
    if bad.any():
        raise ValueError(f"row {int(np.argmax(bad))} sums to {totals[bad][0]:.9f}, not 1")
    P = P / totals[:, None]
    n, k = P.shape
    rows = np.arange(n)
    ref = np.argmax(P, axis=1)
    p_ref = P[rows, ref]
    ent = -_xlogx(P, np.log2).sum(axis=1)
    others = P.copy()
    others[rows, ref] = 0.0
    rest = _xlogx(others, np.log).sum(axis=1)
    certain = p_ref >= 1.0 - CERTAINTY_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        edii = np.where(certain, np.inf, np.log(p_ref) - rest / others.sum(axis=1))
    e = np.where(certain, 1.0, _erp_from_divergence(np.where(certain, 0.0, edii), k))
    return ScoreArrays(p_ref, ref, ent, edii, e)

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cropsight.infotheory import (
    as_probability_vector,
    entropy,
    erp,
    expected_info_divergence,
    information,
    reference_index,
    score_matrix,
    score_vector,
)

mpmath.mp.dps = 50


def mp_erp(p):
    """High-precision reference evaluation, independent of the numpy code path."""
    p = [mpmath.mpf(x) for x in p]
    s = sum(p)
    p = [x / s for x in p]
    r = max(range(len(p)), key=lambda i: (p[i], -i))
    if p[r] == 1:
        return mpmath.inf, mpmath.mpf(1)
    d = mpmath.log(p[r]) - sum(x * mpmath.log(x) for i, x in enumerate(p) if i != r and x > 0) / (1 - p[r])
    return d, mpmath.e ** d / (mpmath.e ** d + len(p) - 1)


def vectors(min_k=2, max_k=14):
    return st.lists(st.floats(1e-9, 1.0), min_size=min_k, max_size=max_k).map(
        lambda xs: np.asarray(xs) / sum(xs))


def test_information_bits():
    assert information(0.5) == 1.0
    assert information(1.0) == 0.0
    assert information(0.125) == 3.0
    assert information(0.0) == math.inf
    with pytest.raises(ValueError):
        information(1.5)


def test_entropy_extremes():
    assert entropy([0.25] * 4) == pytest.approx(2.0, abs=1e-15)
    assert entropy([1.0, 0.0, 0.0]) == 0.0
    assert entropy([0.5, 0.5]) == pytest.approx(1.0)


def test_vector_validation():
    v = as_probability_vector([0.5, 0.5 + 5e-7])
    assert v.sum() == pytest.approx(1.0, abs=1e-15)
    for bad in ([0.5, 0.6], [1.2, -0.2], [1.0], [[0.5, 0.5]], [float("nan"), 1.0]):
        with pytest.raises(ValueError):
            as_probability_vector(bad)


def test_reference_tie_goes_to_lowest_index():
    assert reference_index([0.4, 0.4, 0.2]) == 0
    assert reference_index([0.2, 0.4, 0.4]) == 1


@pytest.mark.parametrize("k", [2, 3, 12, 64])
def test_uniform_erp_is_one_over_k(k):
    assert abs(erp([1 / k] * k) - 1 / k) < 1e-12


def test_worked_three_class_vector():
    # frozen from the 50-digit reference evaluation
    assert expected_info_divergence([0.7, 0.2, 0.1]) == pytest.approx(1.4838120286820163, abs=1e-14)
    assert erp([0.7, 0.2, 0.1]) == pytest.approx(0.6879740685366116, abs=1e-14)


def test_zero_padding_changes_k_and_thus_erp():
    # zeros add no divergence but do enter k
    p = [0.7, 0.2, 0.1] + [0.0] * 9
    assert expected_info_divergence(p) == pytest.approx(1.4838120286820163, abs=1e-14)
    assert erp(p) == pytest.approx(0.2861650064427485, abs=1e-14)


def test_certain_vector():
    p = [1.0] + [0.0] * 11
    assert expected_info_divergence(p) == math.inf
    assert erp(p) == 1.0
    assert erp([1 - 1e-13, 1e-13]) == 1.0


@settings(max_examples=200, deadline=None)
@given(vectors())
def test_matches_high_precision_oracle(p):
    d_ref, e_ref = mp_erp(p)
    if d_ref == mpmath.inf or p.max() >= 1 - 1e-12:
        assert erp(p) == 1.0
        return
    assert expected_info_divergence(p) == pytest.approx(float(d_ref), rel=1e-9, abs=1e-9)
    assert erp(p) == pytest.approx(float(e_ref), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 40), st.floats(0.0, 1.0))
def test_even_remainder_gives_erp_equal_to_reference(k, t):
    p_ref = 1 / k + t * (1 - 1 / k) * 0.999
    p = np.full(k, (1 - p_ref) / (k - 1))
    p[0] = p_ref
    assert erp(p) == pytest.approx(p_ref, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(vectors(3, 10), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_erp_monotone_in_reference_mass(q, a, b):
    # fix the shape of the non-reference mass and grow the reference share
    lo, hi = sorted((a, b))
    q = np.sort(q)[:-1]
    q = q / q.sum()

    def build(s):
        v = np.concatenate([[s], (1 - s) * q])
        return v

    pl, ph = build(lo), build(hi)
    if reference_index(pl) != 0 or reference_index(ph) != 0:
        return
    assert erp(ph) >= erp(pl) - 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(vectors(12, 12), min_size=1, max_size=20))
def test_matrix_scores_agree_with_scalar_path(rows):
    P = np.vstack(rows)
    s = score_matrix(P)
    for i, p in enumerate(P):
        one = score_vector(p)
        assert s.mp[i] == pytest.approx(one.mp, abs=1e-15)
        assert s.entropy_bits[i] == pytest.approx(one.entropy_bits, abs=1e-12)
        assert s.erp[i] == pytest.approx(one.erp, abs=1e-12)
        assert 0.0 < s.erp[i] <= 1.0


def test_matrix_rejects_bad_rows():
    with pytest.raises(ValueError):
        score_matrix([[0.5, 0.6]])
    with pytest.raises(ValueError):
        score_matrix([0.5, 0.5])

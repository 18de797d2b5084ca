from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alliancegame.core import ArrivalModel, DomainError, ObservationModel
from alliancegame.operators import SequenceGrid, TruncatedSeries, d_inverse, r_transform, theorem_check


def _frac_grid(draw_ints, shape):
    vals = np.empty(shape, dtype=object)
    flat = iter(draw_ints)
    for idx in np.ndindex(*shape):
        vals[idx] = Fraction(next(flat), 7)
    return vals


def test_r_transform_of_constant_is_one():
    G = r_transform(SequenceGrid(np.ones(5)))
    assert list(G.coeffs) == [1, 0, 0, 0, 0]


def test_r_transform_of_delta():
    G = r_transform(SequenceGrid(np.array([1.0, 0, 0, 0])))
    assert list(G.coeffs) == [1, -1, 0, 0]


def test_r_transform_of_identity_sequence():
    G = r_transform(SequenceGrid(np.arange(6.0)))
    # (1 - q)(q + 2q^2 + ... + 5q^5) clipped at degree 5
    assert list(G.coeffs) == [0, 1, 1, 1, 1, 1]


def test_d_inverse_partial_sums():
    G = TruncatedSeries(np.arange(5.0))
    assert d_inverse(G, (2,)) == 3.0
    G = TruncatedSeries(np.array([1.0, -1.0, 0.0]))
    assert d_inverse(G, (0,)) == 1.0
    assert d_inverse(G, (1,)) == 0.0
    assert d_inverse(G, (-1,)) == 0


def test_d_inverse_beyond_caps():
    G = TruncatedSeries(np.ones((3, 2)))
    with pytest.raises(IndexError):
        d_inverse(G, (3, 0))
    with pytest.raises(DomainError):
        d_inverse(G, (1,))


def test_grid_rank_limits():
    with pytest.raises(DomainError):
        SequenceGrid(np.ones((2, 2, 2, 2)))
    with pytest.raises(DomainError):
        SequenceGrid(np.array([1.0, np.inf]))


@given(st.lists(st.integers(-30, 30), min_size=60, max_size=60), st.sampled_from([(4, 2, 1), (3, 3, 2), (2, 1, 4)]))
@settings(max_examples=40, deadline=None)
def test_roundtrip_and_linearity(ints, caps):
    shape = tuple(c + 1 for c in caps)
    n = int(np.prod(shape))
    g1 = _frac_grid(ints[:n], shape)
    g2 = _frac_grid(ints[::-1][:n], shape)
    G1, G2 = r_transform(SequenceGrid(g1)), r_transform(SequenceGrid(g2))
    G12 = r_transform(SequenceGrid(g1 * 3 + g2))
    for idx in np.ndindex(*shape):
        assert d_inverse(G1, idx) == g1[idx]
        assert G12.coefficient(idx) == 3 * G1.coefficient(idx) + G2.coefficient(idx)


def test_factorization():
    caps = (5, 4, 3)
    f1 = [Fraction(k + 1, 3) for k in range(6)]
    f2 = [Fraction(2) ** -k for k in range(5)]
    f3 = [Fraction(k * k, 5) for k in range(4)]
    g = SequenceGrid.from_function(lambda a, b, c: f1[a] * f2[b] * f3[c], caps, exact=True)
    G = r_transform(g)
    parts = [
        r_transform(SequenceGrid(np.array(f, dtype=object))).coeffs for f in (f1, f2, f3)
    ]
    for a, b, c in np.ndindex(6, 5, 4):
        assert G.coefficient((a, b, c)) == parts[0][a] * parts[1][b] * parts[2][c]


@given(st.lists(st.integers(0, 20), min_size=24, max_size=24))
@settings(max_examples=30, deadline=None)
def test_d_inverse_monotone_for_nonnegative_coefficients(ints):
    G = TruncatedSeries(np.array(ints, dtype=float).reshape(4, 3, 2))
    for b in range(3):
        for c in range(2):
            vals = [d_inverse(G, (a, b, c)) for a in range(4)]
            assert all(x <= y for x, y in zip(vals, vals[1:]))


def test_series_algebra_reciprocal():
    caps = (6,)
    f = TruncatedSeries(np.array([Fraction(1), Fraction(-1, 2)] + [Fraction(0)] * 5, dtype=object))
    inv = f.reciprocal()
    assert list(inv.coeffs) == [Fraction(1, 2 ** k) for k in range(7)]
    one = f * inv
    assert list(one.coeffs) == [1] + [0] * 6
    with pytest.raises(DomainError):
        TruncatedSeries(np.array([0.0, 1.0])).reciprocal()
    assert caps == f.caps


def test_theorem_check_geometric_first_success():
    rep = theorem_check(ArrivalModel(1.0), ObservationModel(0.0, 1.0), 1)
    j = np.arange(1, 12)
    assert np.max(np.abs(rep.pmf_nu_operator[1:12] - 0.5 ** j)) < 1e-12
    assert rep.marginal_residual < 1e-9
    assert rep.status.startswith("MARGINAL-MATCH")
    assert set(rep.as_dict()) >= {"status", "full_residual", "marginal_residual", "notes"}


@pytest.mark.parametrize("M", [2, 3])
def test_theorem_check_reports_larger_thresholds(M):
    rep = theorem_check(ArrivalModel(1.0), ObservationModel(0.0, 1.0), M)
    assert rep.marginal_residual < 1e-9
    assert rep.status
    assert np.isfinite(rep.full_residual)


def test_theorem_check_without_attacker():
    rep = theorem_check(ArrivalModel(0.0), ObservationModel(1.0, 1.0), 2)
    assert np.sum(rep.pmf_nu_operator[1:]) == pytest.approx(0.0, abs=1e-12)
    assert "not compared" in rep.status


def test_theorem_check_rejects_large_threshold():
    with pytest.raises(DomainError):
        theorem_check(ArrivalModel(1.0), ObservationModel(0.0, 1.0), 9)

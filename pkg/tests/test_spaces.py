import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decoupling_lab.spaces import (
    Space,
    SpaceError,
    euclid,
    format_space,
    lu_constants,
    nested,
    parse_space,
    seq_lp,
    sup_norm,
)

ALL_SPACES = [
    euclid(2),
    euclid(5),
    seq_lp(0.5, 2),
    seq_lp(1.0, 3),
    seq_lp(3.0, 4),
    sup_norm(4),
    nested([(1.0, 2), (2.0, 2)]),
    nested([(0.5, 2), (3.0, 2)]),
]


def test_norm_examples():
    assert euclid(2).norm([3.0, 4.0]) == 5.0
    # quasi-norm: (1 + 1)^(1/0.5) = 4
    assert seq_lp(0.5, 2).norm([1.0, 1.0]) == pytest.approx(4.0, abs=1e-12)
    assert sup_norm(3).norm([-2.0, 1.0, 0.0]) == 2.0
    assert seq_lp(1.0, 3).norm([1.0, -2.0, 3.0]) == 6.0


def test_nested_norm_example():
    space = nested([(1.0, 2), (2.0, 2)])
    # rows (3,4) and (0,0); inner rms 3.5355.., outer average halves it
    got = space.norm([3.0, 4.0, 0.0, 0.0])
    assert got == pytest.approx(math.sqrt(12.5) / 2.0, rel=1e-12)
    # uniform weights: the all-ones vector has norm one in every nested space
    for shape in ([(1.0, 2), (3.0, 2)], [(0.5, 3), (2.0, 2)]):
        sp = nested(shape)
        assert sp.norm(np.ones(sp.dim)) == pytest.approx(1.0, rel=1e-12)


def test_r_exponent():
    assert seq_lp(0.5, 2).r == 0.5
    assert seq_lp(3.0, 4).r == 1.0
    assert euclid(7).r == 1.0
    assert sup_norm(2).r == 1.0
    assert nested([(1.0, 2), (3.0, 2)]).r == 1.0
    assert nested([(0.5, 2), (3.0, 2)]).r == 0.5


def test_dim():
    assert euclid(3).dim == 3
    assert nested([(1.0, 2), (3.0, 5)]).dim == 10


def test_lu_examples():
    assert lu_constants(1.0) == (1.0, 1.0)
    assert lu_constants(3.0) == (1.0, 4.0)
    lo, up = lu_constants(0.5)
    assert lo == pytest.approx(math.sqrt(2.0), rel=1e-15)
    assert up == 1.0
    with pytest.raises(SpaceError):
        lu_constants(0.0)


def test_lu_identity():
    # 2^(1-p) u_p = l_p on both branches
    for p in (0.1, 0.5, 1.0, 1.7, 2.0, 4.0, 11.0):
        lo, up = lu_constants(p)
        assert 2.0 ** (1.0 - p) * up == pytest.approx(lo, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(0.0, 1e6),
    b=st.floats(0.0, 1e6),
    p=st.floats(0.05, 8.0),
)
def test_power_comparison_property(a, b, p):
    lo, up = lu_constants(p)
    mid = (a + b) ** p
    two = a ** p + b ** p
    assert two / lo <= mid * (1 + 1e-9) + 1e-300
    assert mid <= up * two * (1 + 1e-9) + 1e-300


def test_power_comparison_equality_at_half():
    # lower branch is tight at a = b when p < 1
    lo, _ = lu_constants(0.5)
    assert (1.0 + 1.0) ** 0.5 == pytest.approx(2.0 / lo, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_r_triangle_property(data):
    space = data.draw(st.sampled_from(ALL_SPACES))
    x = np.array(data.draw(st.lists(st.floats(-100.0, 100.0), min_size=space.dim, max_size=space.dim)))
    y = np.array(data.draw(st.lists(st.floats(-100.0, 100.0), min_size=space.dim, max_size=space.dim)))
    r = space.r
    lhs = space.norm(x + y) ** r
    rhs = space.norm(x) ** r + space.norm(y) ** r
    assert lhs <= rhs * (1 + 1e-9) + 1e-300


@settings(max_examples=100, deadline=None)
@given(data=st.data(), c=st.floats(-50.0, 50.0))
def test_homogeneity_property(data, c):
    space = data.draw(st.sampled_from(ALL_SPACES))
    x = np.array(data.draw(st.lists(st.floats(-100.0, 100.0), min_size=space.dim, max_size=space.dim)))
    assert space.norm(c * x) == pytest.approx(abs(c) * space.norm(x), rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_lp2_matches_euclid(data):
    d = data.draw(st.integers(1, 6))
    x = np.array(data.draw(st.lists(st.floats(-100.0, 100.0), min_size=d, max_size=d)))
    assert seq_lp(2.0, d).norm(x) == pytest.approx(euclid(d).norm(x), rel=1e-12, abs=1e-12)


def test_norms_vectorized_shapes():
    space = euclid(3)
    arr = np.arange(24, dtype=float).reshape(2, 4, 3)
    out = space.norms(arr)
    assert out.shape == (2, 4)
    assert out[0, 0] == pytest.approx(math.sqrt(0.0 + 1.0 + 4.0))


def test_dimension_mismatch():
    with pytest.raises(SpaceError):
        euclid(3).norm([1.0, 2.0])
    with pytest.raises(SpaceError):
        euclid(3).norms(np.zeros((5, 4)))


def test_invalid_spaces():
    with pytest.raises(SpaceError):
        Space("weird", ((2.0, 2),))
    with pytest.raises(SpaceError):
        euclid(0)
    with pytest.raises(SpaceError):
        seq_lp(0.0, 2)
    with pytest.raises(SpaceError):
        Space("lp", ())


def test_high_dim_compensated_sum():
    space = euclid(1500)
    assert space.norm(np.ones(1500)) == pytest.approx(math.sqrt(1500.0), rel=1e-14)
    x = np.linspace(-1.0, 1.0, 1500)
    assert space.norm(x) == pytest.approx(float(space.norms(x[None, :])[0]), rel=1e-12)


def test_parse_format_round_trip():
    for text in ("l2:8", "lp:0.5:4", "linf:16", "nested:1x2,3x2"):
        space = parse_space(text)
        assert format_space(space) == text
        assert parse_space(format_space(space)) == space
    for space in ALL_SPACES:
        assert parse_space(format_space(space)) == space


def test_parse_errors():
    for text in ("l3:4", "lp:2", "nested:1x", "l2:0", "l2:two", ""):
        with pytest.raises(SpaceError):
            parse_space(text)


def test_describe():
    assert euclid(4).describe() == "l2:4"

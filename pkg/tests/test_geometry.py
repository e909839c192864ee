import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopgas.geometry import (
    BoxRegion,
    ClassicalConfig,
    box_difference,
    hardcore_admissible,
    max_occupancy,
    min_pair_distance,
    shift_config,
)

coord = st.floats(-5, 5, allow_nan=False)


def test_box_basics():
    b = BoxRegion.centered(2, 1.5)
    assert b.dim == 2
    assert b.volume == pytest.approx(9.0)
    assert b.contains([1.5, -1.5])  # closed box
    assert not b.contains([1.5000001, 0.0])
    np.testing.assert_array_equal(b.contains([[0, 0], [2, 0]]), [True, False])


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf])
def test_box_rejects_bad_half_side(bad):
    with pytest.raises(ValueError):
        BoxRegion((0.0,), bad)


@given(st.integers(1, 3), st.floats(0.1, 3), st.floats(0.05, 0.99), st.lists(coord, min_size=3, max_size=3))
def test_box_difference_volume(d, L, frac, shift):
    outer = BoxRegion.centered(d, L)
    c = np.asarray(shift[:d]) * 0.0 + np.clip(shift[:d], -L * (1 - frac), L * (1 - frac))
    inner = BoxRegion(tuple(c), L * frac)
    pieces = box_difference(outer, inner)
    assert math.isclose(sum(p.volume for p in pieces) + inner.volume, outer.volume, rel_tol=1e-9)


def test_box_difference_disjoint_inner_returns_outer():
    outer = BoxRegion.centered(1, 1.0)
    far = BoxRegion((5.0,), 1.0)
    assert len(box_difference(outer, far)) == 1


def test_classical_config_set_semantics():
    a = ClassicalConfig([[0.0, 1.0], [2.0, 3.0], [0.0, 1.0]])
    b = ClassicalConfig([[2.0, 3.0], [0.0, 1.0]])
    assert len(a) == 2
    assert a == b and hash(a) == hash(b)
    with pytest.raises(ValueError):
        a.points[0, 0] = 5.0
    assert len(a.union(ClassicalConfig([[9.0, 9.0]]))) == 3


@given(st.lists(st.tuples(coord, coord), min_size=2, max_size=80, unique=True))
def test_min_pair_distance_matches_brute_force(pts):
    arr = np.array(pts)
    if len(np.unique(arr, axis=0)) < 2:
        return
    cc = ClassicalConfig(arr)
    p = cc.points
    brute = min(np.linalg.norm(p[i] - p[j]) for i in range(len(p)) for j in range(i))
    assert min_pair_distance(cc) == pytest.approx(brute)


def test_hardcore_boundary_is_admissible():
    assert hardcore_admissible(ClassicalConfig([[0.0], [1.0]]), 1.0)
    assert not hardcore_admissible(ClassicalConfig([[0.0], [0.999]]), 1.0)


@pytest.mark.parametrize("L,r,d,expected", [(0.5, 1.0, 2, 1), (1.5, 1.55, 1, 2), (1.0, 1.0, 1, 2), (1.0, 0.3, 2, 45)])
def test_max_occupancy(L, r, d, expected):
    assert max_occupancy(BoxRegion.centered(d, L), r) == expected


@given(st.floats(0.2, 3), st.floats(0.1, 2))
def test_occupancy_monotone_in_box(L, r):
    assert max_occupancy(BoxRegion.centered(1, L), r) <= max_occupancy(BoxRegion.centered(1, 1.5 * L), r)


def test_shift_config():
    cc = ClassicalConfig([[0.0, 0.0], [1.0, 2.0]])
    assert shift_config(cc, [1.0, 1.0]) == ClassicalConfig([[1.0, 1.0], [2.0, 3.0]])

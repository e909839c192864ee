import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopgas.geometry import BoxRegion
from loopgas.loops import (
    K_of,
    L_of,
    Loop,
    LoopConfiguration,
    OpenPath,
    OpenPathCollection,
    SliceAlignmentError,
    admissible_r,
    alpha_indicator,
    chi_indicator,
    config_from_record,
    config_to_record,
    section_of_config,
    slice_index,
    t_section,
)
from loopgas.sampling import RandomStream, sample_bridge


def make_loop(base, k=1, M=4, beta=1.0, seed=0):
    return sample_bridge(np.atleast_1d(base), np.atleast_1d(base), k, beta, M, RandomStream(seed, 1))


def test_sections_layout():
    pos = np.arange(2 * 3 + 1, dtype=float)[:, None]
    p = OpenPath(pos, k=2, M=3, beta=1.0)
    assert p.sections.shape == (4, 2, 1)
    np.testing.assert_array_equal(p.sections[:, 0, 0], [0, 1, 2, 3])
    np.testing.assert_array_equal(p.sections[:, 1, 0], [3, 4, 5, 6])
    np.testing.assert_array_equal(p.control_points[:, 0], [3])


def test_loop_must_close():
    with pytest.raises(ValueError):
        Loop(np.array([[0.0], [1.0], [2.0]]), 1, 2, 1.0)


def test_slice_index():
    assert slice_index(0.5, 1.0, 4) == 2
    with pytest.raises(SliceAlignmentError):
        slice_index(0.3, 1.0, 4)
    with pytest.raises(SliceAlignmentError):
        slice_index(1.5, 1.0, 4)


def test_t_section_and_counts():
    lp = make_loop([0.0, 0.0], k=3)
    assert len(t_section(lp, 0.0)) == 3
    c = LoopConfiguration([lp, make_loop([5.0, 5.0], k=2, seed=1)])
    assert K_of(c) == 5 and L_of(c) == 6
    assert len(section_of_config(c, 0.25)) == 5


def test_alpha_and_chi():
    box = BoxRegion.centered(1, 1.0)
    pos = np.array([0.0, 0.5, 1.2, 0.5, 0.0])[:, None]
    lp = Loop(pos, 2, 2, 1.0)
    assert alpha_indicator(box, lp) == 0
    assert alpha_indicator(BoxRegion.centered(1, 2.0), lp) == 1
    # the control point at time beta is 1.2
    assert chi_indicator(BoxRegion.centered(1, 1.0), lp) == 1
    assert chi_indicator(BoxRegion.centered(1, 1.5), lp) == 0


def test_admissible_r_counts_all_slices():
    a = Loop(np.array([0.0, 0.0, 0.0])[:, None], 1, 2, 1.0)
    b = Loop(np.array([2.0, 0.5, 2.0])[:, None], 1, 2, 1.0)
    assert not admissible_r([a, b], 1.0)  # overlap only at the middle slice
    assert admissible_r([a, b], 0.5)


def test_coincident_copies_violate():
    lp = Loop(np.zeros((5, 1)), 2, 2, 1.0)
    assert not admissible_r([lp], 0.1)


def test_distinct_bases_required():
    lp = make_loop([0.0])
    with pytest.raises(ValueError):
        LoopConfiguration([lp, make_loop([0.0], seed=3)])


def test_open_path_collection_permutation():
    p = OpenPath(np.array([[0.0], [0.5], [1.0]]), 1, 2, 1.0)
    q = OpenPath(np.array([[3.0], [2.5], [2.0]]), 1, 2, 1.0)
    pc = OpenPathCollection([p, q], permutation=[1, 0])
    np.testing.assert_array_equal(pc.ends[:, 0], [2.0, 1.0])


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=0, max_size=4, unique=True),
       st.integers(1, 3))
def test_record_round_trip_is_exact(bases, k):
    loops = [make_loop(list(b), k=k, seed=i) for i, b in enumerate(bases)]
    if len({tuple(b) for b in bases}) != len(bases):
        return
    c = LoopConfiguration(loops, dim=2)
    rec = json.loads(json.dumps(config_to_record(c, 1.0, 4)))
    back = config_from_record(rec)
    assert back == c
    for a, b in zip(back.loops, c.loops):
        assert a.positions.tobytes() == b.positions.tobytes()

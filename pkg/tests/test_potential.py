import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopgas.potential import (
    InvalidPotentialError,
    PotentialModel,
    bump,
    constants,
    cross_energy,
    evaluate,
    pair_energy,
)


def test_hard_core_values():
    V = PotentialModel.hard_core(1.0)
    np.testing.assert_array_equal(evaluate(V, [0.5, 1.0, 3.0]), [math.inf, 0.0, 0.0])
    assert V.is_pure_hard_core


def test_invalid_radii():
    with pytest.raises(InvalidPotentialError):
        PotentialModel.hard_core(1.0, 0.5)


def test_bump_profile():
    assert bump(0.0) == 0.0 and bump(1.0) == 0.0
    assert bump(0.5) == pytest.approx(1.0)


def test_square_well_constants():
    V = PotentialModel.square_well(1.0, 2.0, 0.5)
    c = constants(V, z=0.2, beta=1.0, d=1)
    assert c.v_bar == pytest.approx(0.5, rel=1e-5)
    assert c.packing_ratio == pytest.approx(2.0)
    assert c.rho_bar == pytest.approx(0.2 * math.exp(1.0 * 0.5 * 2.0), rel=1e-5)
    assert c.stable == (c.rho_bar < 1)


def test_shoulder_is_nonnegative_and_rho_bar_is_z():
    V = PotentialModel.shoulder(0.5, 1.0, 2.0)
    s = np.linspace(0.5, 2.0, 200)
    assert np.all(evaluate(V, s) >= 0)
    c = constants(V, 0.5, 1.0, 2)
    assert c.v_bar == 0.0 and c.rho_bar == 0.5


def test_tabulated_round_trip(tmp_path):
    s = np.linspace(1.0, 2.0, 9)
    v = -(2.0 - s) ** 2
    f = tmp_path / "v.txt"
    np.savetxt(f, np.column_stack([s, v]))
    V = PotentialModel.from_table_file(f)
    np.testing.assert_allclose(evaluate(V, s[1:-1]), v[1:-1], atol=1e-12)
    with pytest.raises(InvalidPotentialError):
        PotentialModel.tabulated([1, 2, 3], [0, 0, 0])


def test_constants_rejects_nonfinite_profile():
    V = PotentialModel(1.0, 2.0, profile=lambda s: np.full_like(s, np.nan), family="custom")
    with pytest.raises(InvalidPotentialError):
        constants(V, 0.1, 1.0, 1)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6, unique=True),
       st.lists(st.floats(-3, 3), min_size=1, max_size=6, unique=True))
def test_pair_energy_additivity(a, b):
    V = PotentialModel.shoulder(0.1, 1.0, 1.0)
    A, B = np.array(a)[:, None], np.array(b)[:, None]
    total = pair_energy(np.vstack([A, B]), V)
    parts = pair_energy(A, V) + pair_energy(B, V) + cross_energy(A, B, V)
    if math.isinf(parts):
        assert math.isinf(total)
    else:
        assert total == pytest.approx(parts, abs=1e-9)

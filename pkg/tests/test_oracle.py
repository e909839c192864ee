import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopgas.estimators import estimate_confined_loop_mass
from loopgas.geometry import BoxRegion
from loopgas.mcmc import SimulationParams
from loopgas.oracle import (
    OracleSizeError,
    QuadratureSpec,
    dirichlet_single_particle,
    quad_partition,
    quad_rdmk,
    quad_trace,
)
from loopgas.potential import PotentialModel
from loopgas.sampling import RandomStream

from oracle_values import KERNEL_PAIRS, KERNEL_VALUES, P_N, P_N_SMALL, XI, XI_SMALL


def oracle_params(half_side=1.5, r=1.55, M=2, k_max=1, z=0.3, beta=0.5):
    return SimulationParams(BoxRegion.centered(1, half_side), z, beta, PotentialModel.hard_core(r), M, k_max)


@pytest.fixture(scope="module")
def xi():
    return quad_partition(oracle_params())


def test_frozen_partition(xi):
    assert xi.value == pytest.approx(XI, rel=1e-12)
    for n, p in enumerate(P_N):
        assert xi.terms[n] / xi.value == pytest.approx(p, rel=1e-10)
    assert xi.error < 1e-6


def test_frozen_partition_second_box():
    v = quad_partition(oracle_params(half_side=1.0, r=1.05))
    assert v.value == pytest.approx(XI_SMALL, rel=1e-10)
    for n, p in enumerate(P_N_SMALL):
        assert v.terms[n] / v.value == pytest.approx(p, rel=1e-9)


@pytest.mark.parametrize("pair,value", list(zip(KERNEL_PAIRS, KERNEL_VALUES)))
def test_frozen_kernels(xi, pair, value):
    x, y = pair
    f = quad_rdmk(oracle_params(), QuadratureSpec(), BoxRegion.centered(1, 0.5),
                  np.array(x).reshape(-1, 1), np.array(y).reshape(-1, 1), xi)
    assert f.value == pytest.approx(value, rel=1e-10)


def test_trace_is_one(xi):
    t = quad_trace(oracle_params(), QuadratureSpec(), BoxRegion.centered(1, 0.5))
    assert t.value == pytest.approx(1.0, abs=1e-9)


def test_refinement_converges_at_least_fourfold():
    p = oracle_params()
    v4, v8, v16 = (quad_partition(p, QuadratureSpec(nodes=n)).value for n in (4, 8, 16))
    assert abs(v8 - v16) * 4 <= abs(v4 - v8)


def test_one_loop_sector_matches_bridge_sampling():
    # the n = 1 term is z times the slice-confined single loop mass
    p = oracle_params(M=2)
    xi = quad_partition(p)
    est, err = estimate_confined_loop_mass(p.box, p.beta, 1, p.M, 400_000, RandomStream(2024, 77))
    assert abs(p.z * est - xi.terms[1]) <= 3 * p.z * err + xi.error


@pytest.mark.parametrize("kw", [dict(M=5), dict(k_max=3)])
def test_size_caps(kw):
    with pytest.raises(OracleSizeError):
        if "M" in kw:
            quad_partition(oracle_params(**kw))
        else:
            QuadratureSpec(**kw)


def test_trace_oracle_needs_one_dimension():
    p = SimulationParams(BoxRegion.centered(2, 1.0), 0.3, 0.5, PotentialModel.hard_core(1.5), 2, 1)
    with pytest.raises(OracleSizeError):
        quad_trace(p, QuadratureSpec(n_max=1, nodes=4), BoxRegion.centered(2, 0.5))


@pytest.mark.parametrize("k,beta", [(1, 0.7), (2, 0.5), (3, 1.0)])
def test_dirichlet_large_box_limit(k, beta):
    # the ratio to the free value approaches one with the boundary correction
    # 1 - sqrt(2 pi k beta) / (4 L), up to exponentially small terms
    L = 10 * math.sqrt(k * beta)
    box = BoxRegion.centered(1, L)
    ratio = dirichlet_single_particle(box, beta, k) / (2 * L * (2 * math.pi * k * beta) ** -0.5)
    assert ratio == pytest.approx(1 - math.sqrt(2 * math.pi * k * beta) / (4 * L), abs=1e-12)
    far = BoxRegion.centered(1, 1000 * math.sqrt(k * beta))
    assert dirichlet_single_particle(far, beta, k) / (2000 * math.sqrt(k * beta) * (2 * math.pi * k * beta) ** -0.5) \
        == pytest.approx(1.0, abs=1e-3)


@given(st.floats(0.2, 3.0), st.floats(0.05, 2.0), st.integers(1, 3))
def test_dirichlet_monotone_and_separable(L, beta, d):
    box1 = BoxRegion.centered(1, L)
    assert dirichlet_single_particle(box1, 1.1 * beta) < dirichlet_single_particle(box1, beta)
    boxd = BoxRegion.centered(d, L)
    assert dirichlet_single_particle(boxd, beta) == pytest.approx(dirichlet_single_particle(box1, beta) ** d)


def test_discrete_confinement_exceeds_dirichlet():
    # checking slices only is weaker than continuous confinement
    box = BoxRegion.centered(1, 1.0)
    ref = dirichlet_single_particle(box, 0.5)
    for M in (4, 16, 64):
        est, err = estimate_confined_loop_mass(box, 0.5, 1, M, 100_000, RandomStream(5, M))
        assert est - 3 * err > ref


def test_continuous_crossing_weight_recovers_dirichlet():
    box = BoxRegion.centered(1, 1.0)
    ref = dirichlet_single_particle(box, 0.5)
    est, err = estimate_confined_loop_mass(box, 0.5, 1, 32, 200_000, RandomStream(6, 0), continuous=True)
    assert abs(est - ref) <= 4 * err + 0.003 * ref

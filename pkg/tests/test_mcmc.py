import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopgas.estimators import OccupationObserver
from loopgas.geometry import BoxRegion, ClassicalConfig
from loopgas.loops import LoopConfiguration, admissible_r, alpha_indicator
from loopgas.mcmc import (
    LoopGasSampler,
    MoveWeights,
    SimulationParams,
    log_weight,
    mh_step,
    params_fingerprint,
    run_chain,
)
from loopgas.potential import PotentialModel
from loopgas.sampling import RandomStream

from balance import balance_pairs, build_state, log_target


def shoulder_params(**kw):
    base = dict(box=BoxRegion.centered(2, 1.5), z=0.8, beta=1.0, potential=PotentialModel.shoulder(0.3, 0.8, 1.0),
                M=3, k_max=3, sweeps=200, burn_in=10, seed=4)
    base.update(kw)
    return SimulationParams(**base)


def test_params_validation():
    with pytest.raises(ValueError):
        shoulder_params(z=0.0)
    with pytest.raises(ValueError):
        shoulder_params(inner_box=BoxRegion.centered(2, 2.0))
    with pytest.raises(ValueError):
        MoveWeights(0, 0, 0, 0)
    with pytest.raises(ValueError):
        shoulder_params(boundary=ClassicalConfig([[2.0, 0.0], [2.1, 0.0]]))


def test_fingerprint_ignores_sweep_count_only():
    a = shoulder_params()
    assert params_fingerprint(a) == params_fingerprint(dataclasses.replace(a, sweeps=999))
    assert params_fingerprint(a) != params_fingerprint(dataclasses.replace(a, seed=5))


def test_log_weight_matches_reference_up_to_gaussians():
    p = shoulder_params()
    s = LoopGasSampler(p)
    state = build_state(s, 3, RandomStream(1, 1))
    tau = p.beta / p.M
    from balance import log_gauss_path
    gauss = sum(log_gauss_path(lp.positions, tau) for lp in state.loops)
    assert log_weight(state, p) == pytest.approx(log_target(list(state.loops), p) - gauss, rel=1e-12)


@pytest.mark.parametrize("kind", ["insert", "delete", "wiggle", "rek"])
@given(seed=st.integers(0, 10_000))
@settings(max_examples=10)
def test_detailed_balance_property(kind, seed):
    s = LoopGasSampler(shoulder_params(wiggle_max=2))
    for got, ref in balance_pairs(s, kind, 3, seed):
        assert got == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_cache_stays_in_sync():
    p = shoulder_params(check_every=1, sweeps=100)
    res = run_chain(p)
    res.sampler.check_cache(res.state)
    assert res.state.step == 100 * p.steps_per_sweep


def test_states_stay_admissible_and_confined():
    p = shoulder_params(sweeps=100)
    seen = []

    def hook(state, accepted):
        if accepted:
            seen.append(len(state.loops))
            c = LoopConfiguration(state.loops)
            assert admissible_r(c, p.potential.core_r)
            assert alpha_indicator(p.box, c)

    run_chain(p, step_hooks=[hook])
    assert max(seen) > 0


def test_single_slice_translation_wiggle_moves_base():
    p = shoulder_params(M=1, k_max=1, move_weights=MoveWeights(0.3, 0.3, 0.4, 0.0))
    s = LoopGasSampler(p)
    state = build_state(s, 1, RandomStream(3, 3))
    prop = s.propose_wiggle(state, RandomStream(3, 4))
    assert not np.array_equal(prop.loop.base, state.loops[0].base)
    assert prop.log_q == 0.0


def test_mh_step_wrapper_advances():
    p = shoulder_params()
    s = LoopGasSampler(p)
    state = s.make_state((), RandomStream(0, 0))
    mh_step(state, p, s)
    assert state.step == 1


def test_resume_is_bit_exact():
    p = shoulder_params(sweeps=120, burn_in=5)
    full = run_chain(p, [OccupationObserver()], chain_id=2)
    saved = []
    run_chain(p, [OccupationObserver()], chain_id=2, checkpoint=saved.append, sweeps=60)
    rec = json.loads(json.dumps(saved[-1]))
    resumed = run_chain(p, [OccupationObserver()], chain_id=2, resume=rec)
    assert resumed.state.step == full.state.step
    assert resumed.state.h == full.state.h
    assert [lp.positions.tobytes() for lp in resumed.state.loops] == [lp.positions.tobytes() for lp in full.state.loops]
    assert resumed.observers[0].acc["K"].values == full.observers[0].acc["K"].values
    assert resumed.sampler.stats == full.sampler.stats


def test_resume_rejects_other_parameters():
    p = shoulder_params(sweeps=20)
    saved = []
    run_chain(p, checkpoint=saved.append)
    with pytest.raises(ValueError):
        run_chain(dataclasses.replace(p, z=0.5), resume=saved[-1])


def test_boundary_points_block_nearby_loops():
    wall = ClassicalConfig([[1.6, y] for y in np.linspace(-1.5, 1.5, 7)])
    p = shoulder_params(boundary=wall, sweeps=150)
    res = run_chain(p)
    for lp in res.state.loops:
        assert np.all(np.linalg.norm(lp.positions[:, None, :] - wall.points[None], axis=-1) >= 0.3)


def test_energy_floor_monitor_records_checks():
    res = run_chain(shoulder_params(sweeps=50))
    assert res.sampler.floor.checks > 0
    assert res.sampler.floor.violations == 0

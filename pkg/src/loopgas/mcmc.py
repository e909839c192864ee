"""Metropolis-Hastings sampling of the grand-canonical loop gas in a box.

The target is the density ``alpha * z^K / L * exp(-h)`` with respect to a
Lebesgue-Poisson field of base points carrying Brownian loops summed over
multiplicities.  Four moves act on the configuration: birth and death of a
whole loop, resampling of a slice window of one loop, and redrawing a loop
with a new multiplicity at its base point.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .energy import cross_term, energy_lower_bound, self_term, stack_sections, static_term
from .geometry import BoxRegion, ClassicalConfig, hardcore_admissible, max_occupancy
from .loops import Loop, LoopConfiguration, config_from_record, config_to_record
from .potential import PotentialModel, constants
from .sampling import RandomStream, fill_bridge_window, multiplicity_log_weights, sample_bridges

__all__ = [
    "MoveWeights",
    "SimulationParams",
    "ChainState",
    "Proposal",
    "FloorMonitor",
    "CacheDesyncError",
    "LoopGasSampler",
    "ChainResult",
    "log_weight",
    "propose_insert",
    "propose_delete",
    "propose_wiggle",
    "propose_rek",
    "mh_step",
    "run_chain",
    "params_fingerprint",
    "MOVES",
]

log = logging.getLogger(__name__)

INF = math.inf
MOVES = ("insert", "delete", "wiggle", "rek")


class CacheDesyncError(RuntimeError):
    pass


@dataclass(frozen=True)
class MoveWeights:
    insert: float = 0.3
    delete: float = 0.3
    wiggle: float = 0.3
    rek: float = 0.1

    def __post_init__(self):
        w = self.as_array()
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("move weights must be nonnegative with positive sum")
        if (self.insert > 0) != (self.delete > 0):
            raise ValueError("insert and delete weights must both be positive or both zero")

    def as_array(self) -> np.ndarray:
        return np.array([self.insert, self.delete, self.wiggle, self.rek], dtype=float)

    @property
    def probabilities(self) -> np.ndarray:
        w = self.as_array()
        return w / w.sum()


@dataclass(frozen=True)
class SimulationParams:
    """Physical and run parameters of one chain family.

    A sweep is ``steps_per_sweep`` Metropolis-Hastings steps.  After
    ``burn_in`` sweeps every ``thin``-th sweep delivers a sample.
    ``boundary`` is either fixed outside points or a loop configuration
    based outside the box; both stay fixed during the run.
    """

    box: BoxRegion
    z: float
    beta: float
    potential: PotentialModel
    M: int
    k_max: int = 1
    inner_box: BoxRegion | None = None
    boundary: ClassicalConfig | LoopConfiguration | None = None
    move_weights: MoveWeights = field(default_factory=MoveWeights)
    sweeps: int = 1000
    steps_per_sweep: int = 10
    burn_in: int = 100
    thin: int = 1
    seed: int = 0
    wiggle_max: int | None = None
    check_every: int = 0

    def __post_init__(self):
        if not (self.z > 0 and self.beta > 0):
            raise ValueError("z and beta must be positive")
        if self.M < 1 or self.k_max < 1:
            raise ValueError("M and k_max must be at least 1")
        if min(self.sweeps, self.burn_in) < 0 or self.steps_per_sweep < 1 or self.thin < 1:
            raise ValueError("invalid sweep schedule")
        if self.inner_box is not None and not self.box.contains_box(self.inner_box):
            raise ValueError("inner box must lie inside the box")
        b = self.boundary
        if isinstance(b, ClassicalConfig) and len(b) and not hardcore_admissible(b, self.potential.core_r):
            raise ValueError("boundary configuration violates the hard core")

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def tau(self) -> float:
        return self.beta / self.M


def params_fingerprint(params: SimulationParams) -> str:
    """Stable hash of everything that influences the chain."""
    V = params.potential
    b = params.boundary
    if isinstance(b, LoopConfiguration):
        bnd = config_to_record(b, params.beta, params.M)
    elif isinstance(b, ClassicalConfig):
        bnd = b.points.tolist()
    else:
        bnd = None
    rec = {
        "box": [list(params.box.center), params.box.half_side],
        "inner": None if params.inner_box is None else [list(params.inner_box.center), params.inner_box.half_side],
        "z": params.z, "beta": params.beta, "M": params.M, "k_max": params.k_max,
        "V": [V.family, V.core_r, V.range_R, [list(p) if isinstance(p, tuple) else p for p in V.params]],
        "boundary": bnd,
        "moves": params.move_weights.as_array().tolist(),
        "schedule": [params.steps_per_sweep, params.burn_in, params.thin],
        "seed": params.seed, "wiggle_max": params.wiggle_max,
    }
    return hashlib.sha256(json.dumps(rec, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class ChainState:
    """Current loops with cached weight components and the chain's random stream."""

    loops: tuple[Loop, ...]
    sections: tuple[np.ndarray, ...]
    K: int
    log_L: float
    h: float
    step: int
    rng: RandomStream

    @property
    def config(self) -> LoopConfiguration:
        return LoopConfiguration(self.loops, dim=self.loops[0].dim if self.loops else None)

    def __len__(self) -> int:
        return len(self.loops)


@dataclass(frozen=True)
class Proposal:
    """A proposed change of one loop.

    ``log_q`` is ``log T(new -> old) - log T(old -> new)`` with proposal
    densities taken relative to the reference measure.  ``dh`` is the energy
    change, ``inf`` when the new state is illegal.
    """

    kind: str
    index: int
    loop: Loop | None
    section: np.ndarray | None
    dK: int
    dlogL: float
    dh: float
    log_q: float


@dataclass
class FloorMonitor:
    """Checks finite energies against the linear floor in the multiplicity."""

    checks: int = 0
    violations: int = 0
    worst_margin: float = INF
    strict: bool = False

    def check(self, h: float, K: int, floor_per_k: float, recompute=None) -> None:
        """``recompute`` returns the energy from scratch; it replaces a cached
        value that lands below the floor, since cached sums drift by rounding."""
        if h == INF:
            return
        self.checks += 1
        margin = h - floor_per_k * K
        if margin < 0 and recompute is not None:
            h = recompute()
            margin = h - floor_per_k * K
        self.worst_margin = min(self.worst_margin, margin)
        if margin < 0:
            self.violations += 1
            if self.strict:
                raise AssertionError(f"energy {h} below floor {floor_per_k * K} at K={K}")

    def to_dict(self) -> dict:
        return {"checks": self.checks, "violations": self.violations, "worst_margin": self.worst_margin}

    def load(self, d: dict) -> None:
        self.checks, self.violations, self.worst_margin = d["checks"], d["violations"], d["worst_margin"]


class LoopGasSampler:
    """Move kernels and incremental energies for one parameter set."""

    def __init__(self, params: SimulationParams):
        self.params = p = params
        self.box = p.box
        self.V: PotentialModel = p.potential
        self.d = p.dim
        self.tau = p.tau
        self.consts = constants(self.V, p.z, p.beta, self.d)
        if not self.consts.stable:
            log.warning("effective density rho_bar=%.4g >= 1: series bounds do not apply", self.consts.rho_bar)
        self.log_z = math.log(p.z)
        self.log_volume = math.log(self.box.volume)
        self.q_logw = multiplicity_log_weights(p.z, p.beta, self.d, p.k_max)
        self.log_Zq = float(logsumexp(self.q_logw))
        self.q_cdf = np.cumsum(np.exp(self.q_logw - self.log_Zq))
        self.v0 = max_occupancy(self.box, self.V.core_r)
        probs = p.move_weights.probabilities
        self.move_cdf = np.cumsum(probs)
        with np.errstate(divide="ignore"):
            self.log_move_p = dict(zip(MOVES, np.log(probs)))
        self.floor_per_k = energy_lower_bound(1, self.consts, p.beta)
        self.floor = FloorMonitor()
        self.stats = {m: [0, 0] for m in MOVES}
        self._idx_cache: dict[int, np.ndarray] = {}
        self.ext_points, self.boundary_sections = self._prepare_boundary(p.boundary)

    # environment -------------------------------------------------------------

    def _prepare_boundary(self, b):
        reach = self.V.range_R
        lo, hi = self.box.lower - reach, self.box.upper + reach
        if isinstance(b, ClassicalConfig) and len(b):
            pts = b.points
            pts = pts[np.all((pts >= lo) & (pts <= hi), axis=1)]
            return (np.ascontiguousarray(pts) if len(pts) else None), None
        if isinstance(b, LoopConfiguration) and len(b):
            for lp in b:
                if (lp.M, lp.beta) != (self.params.M, self.params.beta):
                    raise ValueError("boundary loops must share the time grid")
            near = [lp for lp in b if np.any(np.all((lp.positions >= lo) & (lp.positions <= hi), axis=1))]
            if near:
                return None, stack_sections(near)
        return None, None

    def section_index(self, k: int) -> np.ndarray:
        idx = self._idx_cache.get(k)
        if idx is None:
            M = self.params.M
            idx = np.arange(M + 1)[:, None] + M * np.arange(k)[None, :]
            self._idx_cache[k] = idx
        return idx

    def interaction(self, sec: np.ndarray, others: Sequence[np.ndarray]) -> float:
        """Energy of one loop with itself, the other loops and the boundary."""
        V, tau = self.V, self.tau
        e = self_term(sec, V, tau)
        if e == INF:
            return INF
        if others:
            c = cross_term(sec, others[0] if len(others) == 1 else np.concatenate(others, axis=1), V, tau)
            if c == INF:
                return INF
            e += c
        if self.ext_points is not None:
            c = static_term(sec, self.ext_points, V, tau)
            if c == INF:
                return INF
            e += c
        if self.boundary_sections is not None:
            c = cross_term(sec, self.boundary_sections, V, tau)
            if c == INF:
                return INF
            e += c
        return e

    def energy(self, loops: Sequence[Loop]) -> float:
        """Energy of a configuration given the boundary, from scratch."""
        if not loops:
            return 0.0
        sec = stack_sections(loops)
        V, tau = self.V, self.tau
        e = self_term(sec, V, tau)
        if e != INF and self.ext_points is not None:
            e += static_term(sec, self.ext_points, V, tau)
        if e != INF and self.boundary_sections is not None:
            e += cross_term(sec, self.boundary_sections, V, tau)
        return e

    def log_weight(self, loops: Sequence[Loop]) -> float:
        """``log(alpha * z^K / L * exp(-h))``; ``-inf`` for illegal configurations."""
        lo, hi = self.box.lower, self.box.upper
        for lp in loops:
            if not np.all((lp.positions >= lo) & (lp.positions <= hi)):
                return -INF
        h = self.energy(loops)
        if h == INF:
            return -INF
        K = sum(lp.k for lp in loops)
        return K * self.log_z - sum(math.log(lp.k) for lp in loops) - h

    # states --------------------------------------------------------------------

    def make_state(self, loops: Sequence[Loop] = (), rng: RandomStream | None = None, step: int = 0,
                   h: float | None = None) -> ChainState:
        loops = tuple(loops)
        secs = tuple(lp.sections for lp in loops)
        if h is None:
            h = self.energy(loops)
        return ChainState(
            loops, secs, sum(lp.k for lp in loops), math.fsum(math.log(lp.k) for lp in loops), h, step,
            rng if rng is not None else RandomStream(self.params.seed),
        )

    def check_cache(self, state: ChainState, rtol: float = 1e-9) -> None:
        h = self.energy(state.loops)
        K = sum(lp.k for lp in state.loops)
        if K != state.K or not math.isclose(h, state.h, rel_tol=rtol, abs_tol=rtol):
            raise CacheDesyncError(f"cached (K={state.K}, h={state.h}) vs recomputed (K={K}, h={h})")

    def _inside(self, pos: np.ndarray) -> bool:
        return bool(np.all((pos >= self.box.lower) & (pos <= self.box.upper)))

    def _draw_k(self, rng: RandomStream) -> int:
        if self.params.k_max == 1:
            return 1
        return int(min(np.searchsorted(self.q_cdf, rng.random(), side="right"), self.params.k_max - 1)) + 1

    def _new_loop(self, base: np.ndarray, k: int, rng: RandomStream) -> np.ndarray:
        p = self.params
        return sample_bridges(base, base, k, p.beta, p.M, rng, 1)[0]

    def _finish(self, state, kind, index, pos, k, others, old_e, dK, dlogL, log_q) -> Proposal:
        if not self._inside(pos):
            return Proposal(kind, index, None, None, dK, dlogL, INF, log_q)
        pos[-1] = pos[0]
        loop = Loop(pos, k, self.params.M, self.params.beta)
        sec = loop.sections
        e = self.interaction(sec, others)
        if e == INF:
            return Proposal(kind, index, loop, sec, dK, dlogL, INF, log_q)
        self.floor.check(e, k, self.floor_per_k)
        return Proposal(kind, index, loop, sec, dK, dlogL, e - old_e, log_q)

    # proposals -----------------------------------------------------------------

    def propose_insert(self, state: ChainState, rng: RandomStream) -> Proposal:
        n = len(state.loops)
        base = rng.uniform(self.box.lower, self.box.upper)
        k = self._draw_k(rng)
        pos = self._new_loop(base, k, rng)
        log_q = (self.log_move_p["delete"] - self.log_move_p["insert"] - math.log(n + 1)
                 + self.log_volume + self.log_Zq - k * self.log_z)
        return self._finish(state, "insert", n, pos, k, state.sections, 0.0, k, math.log(k), log_q)

    def propose_delete(self, state: ChainState, rng: RandomStream) -> Proposal | None:
        n = len(state.loops)
        if n == 0:
            return None
        i = int(rng.integers(n))
        k = state.loops[i].k
        others = state.sections[:i] + state.sections[i + 1:]
        e = self.interaction(state.sections[i], others)
        log_q = (self.log_move_p["insert"] - self.log_move_p["delete"] + math.log(n)
                 - self.log_volume - self.log_Zq + k * self.log_z)
        return Proposal("delete", i, None, None, -k, -math.log(k), -e, log_q)

    def window_choices(self, k: int) -> int:
        N = k * self.params.M
        wmax = self.params.wiggle_max or self.params.M
        return max(1, min(wmax, N - 1))

    def propose_wiggle(self, state: ChainState, rng: RandomStream) -> Proposal | None:
        n = len(state.loops)
        if n == 0:
            return None
        i = int(rng.integers(n))
        lp = state.loops[i]
        N = lp.k * self.params.M
        pos = np.array(lp.positions)
        if N == 1:
            pos[0] = pos[0] + math.sqrt(self.tau) * rng.normal(self.d)
        else:
            w = 1 + int(rng.integers(self.window_choices(lp.k)))
            s = int(rng.integers(N))
            idx = (s + np.arange(w + 2)) % N
            win = pos[idx]
            fill_bridge_window(win, 0, w + 1, self.tau, rng)
            pos[idx[1:-1]] = win[1:-1]
        others = state.sections[:i] + state.sections[i + 1:]
        old_e = self.interaction(state.sections[i], others)
        return self._finish(state, "wiggle", i, pos, lp.k, others, old_e, 0, 0.0, 0.0)

    def propose_rek(self, state: ChainState, rng: RandomStream) -> Proposal | None:
        n = len(state.loops)
        if n == 0:
            return None
        i = int(rng.integers(n))
        lp = state.loops[i]
        k_new = self._draw_k(rng)
        pos = self._new_loop(lp.base, k_new, rng)
        others = state.sections[:i] + state.sections[i + 1:]
        old_e = self.interaction(state.sections[i], others)
        log_q = (lp.k - k_new) * self.log_z
        return self._finish(state, "rek", i, pos, k_new, others, old_e, k_new - lp.k,
                            math.log(k_new) - math.log(lp.k), log_q)

    def propose(self, kind: str, state: ChainState, rng: RandomStream) -> Proposal | None:
        return getattr(self, "propose_" + kind)(state, rng)

    def log_acceptance(self, prop: Proposal) -> float:
        if prop.dh == INF:
            return -INF
        return prop.dK * self.log_z - prop.dlogL - prop.dh + prop.log_q

    def apply(self, state: ChainState, prop: Proposal) -> None:
        i = prop.index
        loops, secs = list(state.loops), list(state.sections)
        if prop.kind == "insert":
            loops.append(prop.loop)
            secs.append(prop.section)
        elif prop.kind == "delete":
            del loops[i]
            del secs[i]
        else:
            loops[i] = prop.loop
            secs[i] = prop.section
        state.loops, state.sections = tuple(loops), tuple(secs)
        state.K += prop.dK
        state.log_L += prop.dlogL
        state.h += prop.dh
        self.floor.check(state.h, state.K, self.floor_per_k, lambda: self.energy(state.loops))

    def step(self, state: ChainState) -> bool:
        """One Metropolis-Hastings step; returns whether it was accepted."""
        rng = state.rng
        kind = MOVES[min(int(np.searchsorted(self.move_cdf, rng.random(), side="right")), 3)]
        self.stats[kind][0] += 1
        prop = self.propose(kind, state, rng)
        state.step += 1
        if prop is None:
            return False
        la = self.log_acceptance(prop)
        if la == -INF or (la < 0 and math.log(rng.random()) >= la):
            return False
        self.apply(state, prop)
        self.stats[kind][1] += 1
        if self.params.check_every and state.step % self.params.check_every == 0:
            self.check_cache(state)
        return True


# module-level convenience wrappers ------------------------------------------------

def log_weight(state: ChainState | Sequence[Loop], params: SimulationParams) -> float:
    loops = state.loops if isinstance(state, ChainState) else tuple(state)
    return LoopGasSampler(params).log_weight(loops)


def propose_insert(state, params, rng, sampler=None):
    return (sampler or LoopGasSampler(params)).propose_insert(state, rng)


def propose_delete(state, params, rng, sampler=None):
    return (sampler or LoopGasSampler(params)).propose_delete(state, rng)


def propose_wiggle(state, params, rng, sampler=None):
    return (sampler or LoopGasSampler(params)).propose_wiggle(state, rng)


def propose_rek(state, params, rng, sampler=None):
    return (sampler or LoopGasSampler(params)).propose_rek(state, rng)


def mh_step(state: ChainState, params: SimulationParams, sampler: LoopGasSampler | None = None) -> ChainState:
    (sampler or LoopGasSampler(params)).step(state)
    return state


# chains ------------------------------------------------------------------------------

@dataclass
class ChainResult:
    state: ChainState
    sampler: LoopGasSampler
    observers: list
    sweeps_done: int
    samples: int


CHECKPOINT_VERSION = 1


def _checkpoint_record(params, chain_id, sweep, samples, state, sampler, observers) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "params_hash": params_fingerprint(params),
        "chain_id": chain_id,
        "sweep": sweep,
        "samples": samples,
        "step": state.step,
        "rng": state.rng.get_state(),
        "config": config_to_record(state.config, params.beta, params.M),
        "cache": {"K": state.K, "log_L": state.log_L, "h": state.h},
        "stats": sampler.stats,
        "floor": sampler.floor.to_dict(),
        "observers": [ob.state_dict() for ob in observers],
    }


def run_chain(
    params: SimulationParams,
    observers: Sequence = (),
    chain_id: int = 0,
    checkpoint: Callable[[dict], None] | None = None,
    checkpoint_every: int = 0,
    resume: dict | None = None,
    step_hooks: Sequence[Callable] = (),
    sweeps: int | None = None,
) -> ChainResult:
    """Run one chain, feeding thinned post-burn-in samples to ``observers``.

    Observers provide ``observe(state, sampler, sample_index)``,
    ``state_dict()`` and ``load_state_dict(d)``.  ``checkpoint`` receives a
    JSON-ready record every ``checkpoint_every`` sweeps and at the end.
    ``resume`` is such a record; the chain continues from it bit-exactly.
    ``step_hooks`` are called after every step with ``(state, accepted)``.
    """
    sampler = LoopGasSampler(params)
    observers = list(observers)
    total = params.sweeps if sweeps is None else sweeps
    if resume is not None:
        if resume.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        if resume["params_hash"] != params_fingerprint(params):
            raise ValueError("checkpoint was written for different parameters")
        rng = RandomStream.from_state(resume["rng"])
        cfg = config_from_record(resume["config"])
        state = sampler.make_state(cfg.loops, rng, resume["step"], resume["cache"]["h"])
        state.K, state.log_L = resume["cache"]["K"], resume["cache"]["log_L"]
        sampler.stats = {k: list(v) for k, v in resume["stats"].items()}
        sampler.floor.load(resume["floor"])
        for ob, d in zip(observers, resume["observers"]):
            ob.load_state_dict(d)
        sweep0, samples = resume["sweep"], resume["samples"]
    else:
        state = sampler.make_state((), RandomStream(params.seed, chain_id))
        sweep0, samples = 0, 0
    for sweep in range(sweep0, total):
        for _ in range(params.steps_per_sweep):
            acc = sampler.step(state)
            for hook in step_hooks:
                hook(state, acc)
        if sweep >= params.burn_in and (sweep - params.burn_in) % params.thin == 0:
            for ob in observers:
                ob.observe(state, sampler, samples)
            samples += 1
        if checkpoint is not None and checkpoint_every and (sweep + 1) % checkpoint_every == 0 and sweep + 1 < total:
            checkpoint(_checkpoint_record(params, chain_id, sweep + 1, samples, state, sampler, observers))
    done = max(total, sweep0)
    if checkpoint is not None:
        checkpoint(_checkpoint_record(params, chain_id, done, samples, state, sampler, observers))
    return ChainResult(state, sampler, observers, done, samples)

"""Accumulators, kernel estimators, bound constants and validators.

Kernel estimates reuse one chain over the whole box.  A chain sample
contributes only when its time-zero section avoids the inner box; the open
paths between the given endpoints are then drawn from the bridge measure and
weighted by their Boltzmann factor against the sampled loops.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .energy import cross_term, self_term, static_term
from .geometry import BoxRegion, ClassicalConfig, Rect, box_difference, hardcore_admissible, max_occupancy
from .loops import Loop
from .mcmc import ChainState, LoopGasSampler, SimulationParams, run_chain
from .potential import constants
from .sampling import RandomStream, sample_bridges, sample_multiplicity_log, sample_permutation

__all__ = [
    "EstimatorUndefinedError",
    "Accumulator",
    "batch_means_stderr",
    "KernelEstimate",
    "CheckRecord",
    "BoundConstants",
    "KernelEvaluator",
    "OccupationObserver",
    "KernelObserver",
    "TraceObserver",
    "CompatibilityObserver",
    "RuelleObserver",
    "DensityObserver",
    "GradientObserver",
    "QBoundObserver",
    "estimate_partition",
    "estimate_rdmk",
    "estimate_density_profile",
    "estimate_confined_loop_mass",
    "bound_constants",
    "validate_ruelle",
    "validate_kernel_bounds",
    "validate_gradient_bound",
    "validate_energy_floor",
    "validate_q_bound",
    "check_compatibility",
    "check_trace",
]

log = logging.getLogger(__name__)
INF = math.inf


class EstimatorUndefinedError(RuntimeError):
    pass


# statistics ---------------------------------------------------------------------


def batch_means_stderr(values: Sequence[float], min_batches: int = 16, max_lag1: float = 0.1) -> float:
    """Standard error of the mean by batch means.

    The batch size doubles until the lag-1 autocorrelation of batch means
    drops below ``max_lag1`` or fewer than ``min_batches`` batches remain.
    """
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        return INF if n == 1 else math.nan
    b = 1
    err = math.nan
    while n // b >= min_batches or b == 1:
        nb = n // b
        means = x[: nb * b].reshape(nb, b).mean(axis=1)
        c = means - means.mean()
        var = float(np.dot(c, c))
        err = math.sqrt(var / (nb - 1) / nb) if nb > 1 else INF
        if var == 0.0:
            return 0.0
        lag1 = float(np.dot(c[:-1], c[1:])) / var
        if lag1 < max_lag1:
            return err
        b *= 2
        if nb < 2:
            break
    return err


class Accumulator:
    """Stores the sample stream; merging concatenates streams.

    The mean is an exactly rounded sum, so it does not depend on order.
    """

    __slots__ = ("values",)

    def __init__(self, values: Sequence[float] = ()):
        self.values = [float(v) for v in values]

    def add(self, x: float) -> None:
        self.values.append(float(x))

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return math.fsum(self.values) / len(self.values) if self.values else math.nan

    @property
    def second_moment(self) -> float:
        return math.fsum(v * v for v in self.values) / len(self.values) if self.values else math.nan

    @property
    def stderr(self) -> float:
        return batch_means_stderr(self.values)

    def merge(self, other: "Accumulator") -> "Accumulator":
        return Accumulator(self.values + other.values)

    def to_dict(self) -> dict:
        return {"values": self.values}

    @classmethod
    def from_dict(cls, d: dict) -> "Accumulator":
        return cls(d["values"])

    def __eq__(self, other) -> bool:
        return isinstance(other, Accumulator) and self.values == other.values


@dataclass(frozen=True)
class KernelEstimate:
    x0: ClassicalConfig
    y0: ClassicalConfig
    value: float
    stderr: float
    samples: int = 0


@dataclass(frozen=True)
class CheckRecord:
    """One validation outcome; ``target`` is the bound or reference value."""

    check: str
    reference: str
    estimate: float
    target: float
    stderr: float
    passed: bool
    detail: str = ""
    source: str = "mc"

    def as_dict(self) -> dict:
        return {
            "check": self.check, "reference": self.reference, "estimate": self.estimate, "target": self.target,
            "stderr": self.stderr, "pass": self.passed, "detail": self.detail, "source": self.source,
        }


# kernel weights -------------------------------------------------------------------


def _points(c, d: int) -> np.ndarray:
    if isinstance(c, ClassicalConfig):
        return c.points.reshape(-1, d)
    return np.asarray(c, dtype=float).reshape(-1, d)


class KernelEvaluator:
    """Per-sample kernel weight for endpoint sets in an inner box."""

    def __init__(self, sampler: LoopGasSampler, box0: BoxRegion):
        self.s = sampler
        self.box0 = box0
        p = sampler.params
        self.p = p
        self.lo0, self.hi0 = box0.lower, box0.upper

    def section_avoids(self, state: ChainState) -> bool:
        """True when no loop has a time-zero copy inside the inner box."""
        M = self.p.M
        for lp in state.loops:
            pts = lp.positions[:-1:M]
            if np.any(np.all((pts >= self.lo0) & (pts <= self.hi0), axis=1)):
                return False
        return True

    def path_energy(self, paths: np.ndarray, ks: Sequence[int], state: ChainState) -> float:
        """Energy of open paths with themselves, the sampled loops and the boundary."""
        M = self.p.M
        secs = [pos[np.arange(M + 1)[:, None] + M * np.arange(k)[None, :]] for pos, k in zip(paths, ks)]
        sec = np.concatenate(secs, axis=1)
        s, V, tau = self.s, self.s.V, self.s.tau
        e = self_term(sec, V, tau)
        if e == INF:
            return INF
        if state.sections:
            c = cross_term(sec, np.concatenate(state.sections, axis=1), V, tau)
            if c == INF:
                return INF
            e += c
        if s.ext_points is not None:
            c = static_term(sec, s.ext_points, V, tau)
            if c == INF:
                return INF
            e += c
        if s.boundary_sections is not None:
            c = cross_term(sec, s.boundary_sections, V, tau)
            if c == INF:
                return INF
            e += c
        return e

    def inner(self, state: ChainState, x0: np.ndarray, y0: np.ndarray, rng: RandomStream) -> float:
        """One draw of the path weight given that the section avoids the inner box."""
        p = self.p
        n = len(x0)
        if n == 0:
            return 1.0
        perm = sample_permutation(n, rng)
        log_w = math.lgamma(n + 1)
        paths, ks = [], []
        for j in range(n):
            x, y = x0[j], y0[perm[j]]
            sq = float(np.sum((x - y) ** 2))
            k, log_norm = sample_multiplicity_log(p.z, p.beta, p.dim, p.k_max, rng, sq)
            log_w += log_norm
            ks.append(k)
            paths.append(sample_bridges(x, y, k, p.beta, p.M, rng, 1)[0])
        lo, hi = self.s.box.lower, self.s.box.upper
        for pos, k in zip(paths, ks):
            if not np.all((pos >= lo) & (pos <= hi)):
                return 0.0
            if k >= 2:
                ctrl = pos[p.M * np.arange(1, k)]
                if np.any(np.all((ctrl >= self.lo0) & (ctrl <= self.hi0), axis=1)):
                    return 0.0
        h = self.path_energy(paths, ks, state)
        if h == INF:
            return 0.0
        self.s.floor.check(h, sum(ks), self.s.floor_per_k)
        return math.exp(log_w - h)

    def weight(self, state: ChainState, x0, y0, rng: RandomStream, n_inner: int = 1, avoids: bool | None = None
               ) -> float:
        d = self.p.dim
        x0, y0 = _points(x0, d), _points(y0, d)
        if len(x0) != len(y0):
            return 0.0
        if avoids is None:
            avoids = self.section_avoids(state)
        if not avoids:
            return 0.0
        if len(x0) == 0:
            return 1.0
        return math.fsum(self.inner(state, x0, y0, rng) for _ in range(n_inner)) / n_inner


# observers ------------------------------------------------------------------------


class _AccumulatingObserver:
    name = "observer"

    def __init__(self, labels: Sequence[str]):
        self.labels = list(labels)
        self.acc = {lab: Accumulator() for lab in self.labels}

    def state_dict(self) -> dict:
        return {"name": self.name, "acc": {lab: a.values for lab, a in self.acc.items()}}

    def load_state_dict(self, d: dict) -> None:
        # keep label order; checkpoints are written with sorted keys
        if set(d["acc"]) != set(self.labels):
            raise ValueError(f"checkpoint labels do not match observer {self.name!r}")
        self.acc = {lab: Accumulator(d["acc"][lab]) for lab in self.labels}

    def merge(self, other: "_AccumulatingObserver") -> None:
        for lab in self.labels:
            self.acc[lab] = self.acc[lab].merge(other.acc[lab])

    def summary(self) -> dict[str, tuple[float, float, int]]:
        return {lab: (self.acc[lab].mean, self.acc[lab].stderr, self.acc[lab].count) for lab in self.labels}


class OccupationObserver(_AccumulatingObserver):
    """Indicators of ``n`` loops for ``n = 0..n_max`` and the total multiplicity."""

    name = "occupation"

    def __init__(self, n_max: int = 2):
        self.n_max = n_max
        super().__init__([f"P(N={n})" for n in range(n_max + 1)] + ["K"])

    def observe(self, state, sampler, index) -> None:
        n = len(state.loops)
        for m in range(self.n_max + 1):
            self.acc[f"P(N={m})"].add(1.0 if n == m else 0.0)
        self.acc["K"].add(state.K)


def _pair_label(x0, y0) -> str:
    def fmt(c):
        pts = np.asarray(c, dtype=float)
        if pts.size == 0:
            return "{}"
        return "{" + ";".join(",".join(f"{v:.6g}" for v in pt) for pt in pts.reshape(len(pts), -1)) + "}"
    return f"F({fmt(x0)},{fmt(y0)})"


class KernelObserver(_AccumulatingObserver):
    """Kernel values for a list of endpoint pairs.

    All pairs at one sample share the same inner noise, which makes
    differences between nearby pairs low-variance.
    """

    name = "kernel"

    def __init__(self, box0: BoxRegion, pairs: Sequence, n_inner: int = 1, seed: int = 0, chain_id: int = 0,
                 tag: int = 101):
        d = box0.dim
        self.box0 = box0
        self.pairs = [(_points(x, d), _points(y, d)) for x, y in pairs]
        self.n_inner, self.seed, self.chain_id, self.tag = n_inner, seed, chain_id, tag
        self._ev: KernelEvaluator | None = None
        super().__init__([_pair_label(x, y) for x, y in self.pairs])

    def evaluator(self, sampler) -> KernelEvaluator:
        if self._ev is None or self._ev.s is not sampler:
            self._ev = KernelEvaluator(sampler, self.box0)
        return self._ev

    def observe(self, state, sampler, index) -> None:
        ev = self.evaluator(sampler)
        avoids = ev.section_avoids(state)
        for (x, y), lab in zip(self.pairs, self.labels):
            rng = RandomStream(self.seed, (self.tag, self.chain_id, index))
            self.acc[lab].add(ev.weight(state, x, y, rng, self.n_inner, avoids))

    def estimates(self) -> list[KernelEstimate]:
        out = []
        for (x, y), lab in zip(self.pairs, self.labels):
            a = self.acc[lab]
            out.append(KernelEstimate(ClassicalConfig(x, dim=self.box0.dim), ClassicalConfig(y, dim=self.box0.dim),
                                      a.mean, a.stderr, a.count))
        return out


def _sample_region_points(rects: Sequence[Rect], weights: np.ndarray, count: int, rng: RandomStream) -> np.ndarray:
    d = rects[0].dim
    out = np.empty((count, d))
    cdf = np.cumsum(weights / weights.sum())
    for i in range(count):
        j = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(rects) - 1)
        out[i] = rng.uniform(rects[j].lower, rects[j].upper)
    return out


def _truncated_poisson_count(lam: float, n_max: int, rng: RandomStream) -> tuple[int, float]:
    logw = np.array([n * math.log(lam) - math.lgamma(n + 1) for n in range(n_max + 1)]) if lam > 0 else \
        np.array([0.0] + [-INF] * n_max)
    top = logw.max()
    w = np.exp(logw - top)
    norm = w.sum()
    n = min(int(np.searchsorted(np.cumsum(w / norm), rng.random(), side="right")), n_max)
    return n, math.exp(top) * norm


class TraceObserver(_AccumulatingObserver):
    """Diagonal kernel integrated over point sets in the inner box.

    Point sets are drawn from the unit Lebesgue-Poisson measure on the inner
    box truncated at the occupancy ceiling, and weighted by its normaliser.
    """

    name = "trace"

    def __init__(self, box0: BoxRegion, n_inner: int = 1, seed: int = 0, chain_id: int = 0, tag: int = 202,
                 n_max: int | None = None):
        self.box0, self.n_inner, self.seed, self.chain_id, self.tag = box0, n_inner, seed, chain_id, tag
        self.n_max = n_max
        self._ev = None
        super().__init__(["trace"])

    def observe(self, state, sampler, index) -> None:
        if self._ev is None or self._ev.s is not sampler:
            self._ev = KernelEvaluator(sampler, self.box0)
        n_max = self.n_max if self.n_max is not None else max_occupancy(self.box0, sampler.V.core_r)
        rng = RandomStream(self.seed, (self.tag, self.chain_id, index))
        n, norm = _truncated_poisson_count(self.box0.volume, n_max, rng)
        pts = rng.uniform(self.box0.lower, self.box0.upper, size=(n, self.box0.dim))
        if n >= 2 and not hardcore_admissible(pts, sampler.V.core_r):
            self.acc["trace"].add(0.0)
            return
        self.acc["trace"].add(norm * self._ev.weight(state, pts, pts, rng, self.n_inner))


class CompatibilityObserver(_AccumulatingObserver):
    """Both sides of the marginalisation identity from a smaller inner box.

    For each pair the left side integrates the outer-box kernel over extra
    points in the shell between the boxes; the right side is the kernel of
    the smaller box.
    """

    name = "compatibility"

    def __init__(self, box0: BoxRegion, box1: BoxRegion, pairs: Sequence, n_inner: int = 1, seed: int = 0,
                 chain_id: int = 0, tag: int = 303):
        if not box0.contains_box(box1):
            raise ValueError("the smaller box must lie inside the inner box")
        d = box0.dim
        self.box0, self.box1 = box0, box1
        self.pairs = [(_points(x, d), _points(y, d)) for x, y in pairs]
        self.n_inner, self.seed, self.chain_id, self.tag = n_inner, seed, chain_id, tag
        self.shell = box_difference(box0, box1)
        self.shell_vol = np.array([rc.volume for rc in self.shell])
        self._ev = None
        labels = []
        for x, y in self.pairs:
            lab = _pair_label(x, y)
            labels += [lab + ":marginal", lab + ":direct"]
        super().__init__(labels)

    def observe(self, state, sampler, index) -> None:
        if self._ev is None or self._ev[0].s is not sampler:
            self._ev = (KernelEvaluator(sampler, self.box0), KernelEvaluator(sampler, self.box1))
        ev0, ev1 = self._ev
        r = sampler.V.core_r
        v0 = max_occupancy(self.box0, r)
        avoids0, avoids1 = ev0.section_avoids(state), ev1.section_avoids(state)
        for (x, y), lab in zip(self.pairs, self.labels[::2]):
            base = lab[: -len(":marginal")]
            rng = RandomStream(self.seed, (self.tag, self.chain_id, index))
            n, norm = _truncated_poisson_count(float(self.shell_vol.sum()), max(0, v0 - len(x)), rng)
            zs = _sample_region_points(self.shell, self.shell_vol, n, rng) if n else np.zeros((0, x.shape[1]))
            xs, ys = np.vstack([x, zs]), np.vstack([y, zs])
            ok = all(len(c) < 2 or hardcore_admissible(c, r) for c in (xs, ys))
            val = norm * ev0.weight(state, xs, ys, rng, self.n_inner, avoids0) if ok else 0.0
            self.acc[base + ":marginal"].add(val)
            rng = RandomStream(self.seed, (self.tag + 1, self.chain_id, index))
            self.acc[base + ":direct"].add(ev1.weight(state, x, y, rng, self.n_inner, avoids1))


class RuelleObserver(_AccumulatingObserver):
    """Moment density of fixed test loops via the insertion weight."""

    name = "ruelle"

    def __init__(self, test_loops: Sequence[Loop]):
        self.test_loops = list(test_loops)
        super().__init__([f"loop{i}(k={lp.k})" for i, lp in enumerate(self.test_loops)])

    def observe(self, state, sampler, index) -> None:
        z = sampler.params.z
        for lp, lab in zip(self.test_loops, self.labels):
            if not np.all((lp.positions >= sampler.box.lower) & (lp.positions <= sampler.box.upper)):
                self.acc[lab].add(0.0)
                continue
            e = sampler.interaction(lp.sections, state.sections)
            if e != INF:
                sampler.floor.check(e, lp.k, sampler.floor_per_k)
            self.acc[lab].add(0.0 if e == INF else z**lp.k / lp.k * math.exp(-e))


class DensityObserver(_AccumulatingObserver):
    """Particle density in cells: time-zero copies per cell volume."""

    name = "density"

    def __init__(self, cells: Sequence[BoxRegion], count: str = "section"):
        if count not in ("section", "base"):
            raise ValueError("count must be 'section' or 'base'")
        self.cells = list(cells)
        self.count = count
        super().__init__([f"cell{i}" for i in range(len(self.cells))] + ["total"])

    def observe(self, state, sampler, index) -> None:
        M = sampler.params.M
        if state.loops:
            if self.count == "section":
                pts = np.concatenate([lp.positions[:-1:M] for lp in state.loops])
            else:
                pts = np.array([lp.base for lp in state.loops])
        else:
            pts = np.zeros((0, sampler.d))
        for cell, lab in zip(self.cells, self.labels):
            n = int(np.count_nonzero(cell.contains(pts))) if len(pts) else 0
            self.acc[lab].add(n / cell.volume)
        self.acc["total"].add(len(pts))


class GradientObserver(_AccumulatingObserver):
    """Central difference of the kernel in one end point coordinate.

    Both evaluations share their inner noise, so the difference quotient has
    bounded variance as the step shrinks.
    """

    name = "gradient"

    def __init__(self, box0: BoxRegion, x0, y0, index: int = 0, axis: int = 0, step: float = 1e-3,
                 n_inner: int = 1, seed: int = 0, chain_id: int = 0, tag: int = 404):
        d = box0.dim
        self.box0, self.x0, self.y0 = box0, _points(x0, d), _points(y0, d)
        self.index, self.axis, self.step = index, axis, step
        self.n_inner, self.seed, self.chain_id, self.tag = n_inner, seed, chain_id, tag
        self._ev = None
        super().__init__(["dF/dy"])

    def observe(self, state, sampler, index) -> None:
        if self._ev is None or self._ev.s is not sampler:
            self._ev = KernelEvaluator(sampler, self.box0)
        avoids = self._ev.section_avoids(state)
        vals = []
        for sgn in (1.0, -1.0):
            y = self.y0.copy()
            y[self.index, self.axis] += sgn * self.step
            rng = RandomStream(self.seed, (self.tag, self.chain_id, index))
            vals.append(self._ev.weight(state, self.x0, y, rng, self.n_inner, avoids))
        self.acc["dF/dy"].add((vals[0] - vals[1]) / (2.0 * self.step))


class QBoundObserver(_AccumulatingObserver):
    """Largest log ratio of a loop's Boltzmann factor against ``q^k``.

    Each sample contributes ``max_j (-W_j - k_j log q)`` over its loops, where
    ``W_j`` is the energy loop ``j`` adds to the rest of the state.  The bound
    holds when every contribution is nonpositive.
    """

    name = "q_bound"

    def __init__(self):
        super().__init__(["max_log_ratio"])

    def observe(self, state, sampler, index) -> None:
        log_q = -sampler.floor_per_k
        worst = 0.0
        secs = state.sections
        for j, lp in enumerate(state.loops):
            w = sampler.interaction(secs[j], secs[:j] + secs[j + 1:])
            worst = max(worst, -w - lp.k * log_q) if j else -w - lp.k * log_q
        self.acc["max_log_ratio"].add(worst)


# estimates --------------------------------------------------------------------------


def estimate_partition(occupation: OccupationObserver) -> tuple[float, float]:
    """Grand partition function from the empty-state frequency."""
    a = occupation.acc["P(N=0)"]
    p = a.mean
    if not a.count or p == 0:
        raise EstimatorUndefinedError("no empty-state visits; use a smaller box or fugacity")
    return 1.0 / p, a.stderr / (p * p)


def estimate_rdmk(params: SimulationParams, box0: BoxRegion, x0, y0, n_bridge_samples: int = 1,
                  chain_id: int = 0) -> KernelEstimate:
    """Kernel on ``box0`` between ``x0`` and ``y0`` from a fresh chain."""
    d = params.dim
    x, y = _points(x0, d), _points(y0, d)
    cx, cy = ClassicalConfig(x, dim=d), ClassicalConfig(y, dim=d)
    if len(x) != len(y):
        return KernelEstimate(cx, cy, 0.0, 0.0)
    r = params.potential.core_r
    for pts in (x, y):
        if len(pts) and not np.all(box0.contains(pts)):
            raise ValueError("endpoints must lie in the inner box")
        if len(pts) > 1 and not hardcore_admissible(pts, r):
            raise ValueError("endpoints violate the hard core")
    if len(x) > max_occupancy(box0, r):
        raise ValueError("more endpoints than the occupancy ceiling")
    ob = KernelObserver(box0, [(x, y)], n_bridge_samples, params.seed, chain_id)
    run_chain(params, [ob], chain_id=chain_id)
    return ob.estimates()[0]


def estimate_density_profile(params: SimulationParams, cells: Sequence[BoxRegion], chain_id: int = 0
                             ) -> list[tuple[float, float]]:
    ob = DensityObserver(cells)
    run_chain(params, [ob], chain_id=chain_id)
    return [(ob.acc[lab].mean, ob.acc[lab].stderr) for lab in ob.labels[:-1]]


def estimate_confined_loop_mass(box: BoxRegion, beta: float, k: int, M: int, n_samples: int,
                                rng: RandomStream, batch: int = 10000, continuous: bool = False
                                ) -> tuple[float, float]:
    """Mass of loops of multiplicity ``k`` based in ``box`` whose slices stay in ``box``.

    Base points are uniform in the box and each loop is a bridge from the
    base to itself; returns the estimate and its standard error.  With
    ``continuous`` each surviving loop is further weighted by the probability
    that the Brownian bridge between consecutive slices does not cross a
    wall (one-wall approximation per coordinate), which removes the
    discrete-monitoring bias of the slice check.
    """
    d = box.dim
    lo, hi = box.lower, box.upper
    tau = beta / M
    s1 = s2 = 0.0
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        base = rng.uniform(lo, hi, size=(m, d))
        noise = sample_bridges(np.zeros(d), np.zeros(d), k, beta, M, rng, m)
        pos = noise + base[:, None, :]
        inside = np.all((pos >= lo) & (pos <= hi), axis=(1, 2))
        w = inside.astype(float)
        if continuous:
            a, b = pos[:, :-1, :], pos[:, 1:, :]
            with np.errstate(invalid="ignore"):
                log_keep = (np.log1p(-np.exp(-2.0 * (a - lo) * (b - lo) / tau))
                            + np.log1p(-np.exp(-2.0 * (hi - a) * (hi - b) / tau)))
            log_keep = np.where(inside[:, None, None], log_keep, 0.0)
            w = np.where(inside, np.exp(np.sum(log_keep, axis=(1, 2))), 0.0)
        s1 += math.fsum(w)
        s2 += math.fsum(w * w)
        done += m
    scale = box.volume * (2.0 * math.pi * k * beta) ** (-0.5 * d)
    p = s1 / n_samples
    err = math.sqrt(max(s2 / n_samples - p * p, 0.0) / n_samples)
    return scale * p, scale * err


# bounds ----------------------------------------------------------------------------


def _series(rho_bar: float, f) -> float:
    """``sum_{k>=1} rho_bar^k f(k)`` truncated when a term drops below 1e-15 of the sum."""
    if rho_bar >= 1.0:
        return INF
    total, k = 0.0, 1
    while True:
        term = rho_bar**k * f(k)
        total += term
        if term <= 1e-15 * total or k > 100000:
            return total
        k += 1


@dataclass(frozen=True)
class BoundConstants:
    """Right-hand sides of the explicit kernel bounds on an inner box."""

    v0: int
    rho_bar: float
    q_bound_per_k: float
    kernel_bound: float
    gradient_bound: float
    series: dict = field(default_factory=dict)

    def q_bound(self, K: int) -> float:
        return self.q_bound_per_k**K


def bound_constants(params: SimulationParams, box0: BoxRegion) -> BoundConstants:
    V = params.potential
    d, beta = params.dim, params.beta
    c = constants(V, params.z, beta, d)
    v0 = max_occupancy(box0, V.core_r)
    q1 = math.exp(beta * c.v_bar * c.packing_ratio)
    if not c.stable:
        log.warning("rho_bar = %.4g >= 1: bound series diverge, bounds reported as +inf", c.rho_bar)
        return BoundConstants(v0, c.rho_bar, q1, INF, INF, {})
    s0 = _series(c.rho_bar, lambda k: (2 * math.pi * beta * k) ** (-0.5 * d))
    s1 = _series(c.rho_bar, lambda k: (2 * math.pi * beta * k) ** (-1 - 0.5 * d))
    s2 = _series(c.rho_bar, lambda k: (2 * math.pi) ** (-0.5 * d) * (beta * k) ** (1 - 0.5 * d))
    core = math.factorial(v0) * max(1.0, s0) ** v0
    kernel = core
    grad = 2 * math.sqrt(d) * box0.half_side * core * s1 + c.v_bar1 * beta * c.packing_ratio * core * s2
    return BoundConstants(v0, c.rho_bar, q1, kernel, grad, {"s0": s0, "s1": s1, "s2": s2})


# validators ----------------------------------------------------------------------------


def validate_ruelle(observer: RuelleObserver, params: SimulationParams) -> list[CheckRecord]:
    c = constants(params.potential, params.z, params.beta, params.dim)
    out = []
    for lp, lab in zip(observer.test_loops, observer.labels):
        a = observer.acc[lab]
        bound = c.rho_bar**lp.k / lp.k
        est, err = a.mean, a.stderr
        out.append(CheckRecord("ruelle_bound", "one-loop moment bound", est, bound, err,
                               bool(est <= bound + 2 * err), lab))
    return out


def validate_kernel_bounds(estimates: Sequence[KernelEstimate], bounds: BoundConstants) -> list[CheckRecord]:
    out = []
    for e in estimates:
        lab = _pair_label(e.x0.points, e.y0.points)
        ok = abs(e.value) <= bounds.kernel_bound + 2 * e.stderr
        out.append(CheckRecord("kernel_bound", "uniform kernel bound", e.value, bounds.kernel_bound, e.stderr,
                               bool(ok), lab))
    return out


def validate_gradient_bound(observer: GradientObserver, bounds: BoundConstants) -> CheckRecord:
    a = observer.acc["dF/dy"]
    est, err = a.mean, a.stderr
    return CheckRecord("gradient_bound", "uniform kernel gradient bound", est, bounds.gradient_bound, err,
                       bool(abs(est) <= bounds.gradient_bound + 2 * err),
                       _pair_label(observer.x0, observer.y0))


def validate_energy_floor(sampler: LoopGasSampler) -> CheckRecord:
    f = sampler.floor
    return CheckRecord("energy_floor", "linear energy floor", float(f.violations), 0.0, 0.0, f.violations == 0,
                       f"checks={f.checks} worst_margin={f.worst_margin:.6g}")


def validate_q_bound(observer: QBoundObserver, bounds: BoundConstants) -> CheckRecord:
    vals = observer.acc["max_log_ratio"].values
    worst = max(vals) if vals else 0.0
    return CheckRecord("q_bound", "one-loop Boltzmann factor bound", worst, 0.0, 0.0, bool(worst <= 1e-9),
                       f"q={bounds.q_bound_per_k:.6g} samples={len(vals)}")


def check_compatibility(observer: CompatibilityObserver, n_sigma: float = 3.0) -> list[CheckRecord]:
    out = []
    for lab in observer.labels[::2]:
        base = lab[: -len(":marginal")]
        a, b = observer.acc[base + ":marginal"], observer.acc[base + ":direct"]
        diff = a.mean - b.mean
        err = math.hypot(a.stderr, b.stderr)
        out.append(CheckRecord("compatibility", "marginal of inner-box kernel", a.mean, b.mean, err,
                               bool(abs(diff) <= n_sigma * err), base))
    return out


def check_trace(observer: TraceObserver, n_sigma: float = 3.0) -> CheckRecord:
    a = observer.acc["trace"]
    est, err = a.mean, a.stderr
    return CheckRecord("trace", "unit trace of the kernel", est, 1.0, err, bool(abs(est - 1.0) <= n_sigma * err))

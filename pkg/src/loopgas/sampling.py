"""Seeded random streams and the elementary samplers of the loop gas.

Brownian bridges are built by recursive midpoint bisection.  A bisection
schedule depends only on the number of steps, so it is computed once and
reused for every batch and for partial window resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp

from .geometry import BoxRegion, ClassicalConfig
from .loops import Loop, OpenPath

__all__ = [
    "RandomStream",
    "bridge_mass",
    "bridge_log_mass",
    "multiplicity_log_weights",
    "sample_multiplicity",
    "sample_multiplicity_log",
    "multiplicity_tail_bound",
    "sample_bridge",
    "sample_bridges",
    "fill_bridge_window",
    "sample_lebesgue_poisson",
    "sample_truncated_lebesgue_poisson",
    "sample_permutation",
]


class RandomStream:
    """PCG64 stream keyed by ``(seed, stream_id)``.

    ``stream_id`` may be an int or a tuple of ints; it becomes the spawn key
    of the seed sequence, so distinct ids give independent streams.
    """

    def __init__(self, seed: int, stream_id: int | tuple = 0):
        key = tuple(stream_id) if isinstance(stream_id, (tuple, list)) else (int(stream_id),)
        self.seed = int(seed)
        self.stream_id = key
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def child(self, *key: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id + tuple(int(k) for k in key))

    def get_state(self) -> dict:
        st = self.generator.bit_generator.state
        return {
            "seed": self.seed,
            "stream_id": list(self.stream_id),
            "state": {"state": str(st["state"]["state"]), "inc": str(st["state"]["inc"])},
            "has_uint32": st["has_uint32"],
            "uinteger": st["uinteger"],
        }

    def set_state(self, rec: dict) -> None:
        self.generator.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {"state": int(rec["state"]["state"]), "inc": int(rec["state"]["inc"])},
            "has_uint32": rec["has_uint32"],
            "uinteger": rec["uinteger"],
        }

    @classmethod
    def from_state(cls, rec: dict) -> "RandomStream":
        rs = cls(rec["seed"], tuple(rec["stream_id"]))
        rs.set_state(rec)
        return rs

    # thin pass-throughs
    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def bridge_log_mass(x, y, k: int, beta: float, d: int | None = None) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = x.shape[-1] if d is None else d
    s = k * beta
    return -0.5 * d * math.log(2.0 * math.pi * s) - float(np.sum((x - y) ** 2)) / (2.0 * s)


def bridge_mass(x, y, k: int, beta: float, d: int | None = None) -> float:
    """Total mass ``(2 pi k beta)^(-d/2) exp(-|x-y|^2 / (2 k beta))`` of the bridge measure."""
    return math.exp(bridge_log_mass(x, y, k, beta, d))


def multiplicity_log_weights(z: float, beta: float, d: int, k_max: int, sq_dist: float = 0.0) -> np.ndarray:
    """``log(z^k * bridge_mass)`` for ``k = 1..k_max`` at squared endpoint distance ``sq_dist``."""
    k = np.arange(1, k_max + 1, dtype=float)
    return k * math.log(z) - 0.5 * d * np.log(2.0 * math.pi * k * beta) - sq_dist / (2.0 * k * beta)


def sample_multiplicity_log(z: float, beta: float, d: int, k_max: int, rng: RandomStream,
                            sq_dist: float = 0.0) -> tuple[int, float]:
    """Like :func:`sample_multiplicity` but returns the log of the normaliser."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    lw = multiplicity_log_weights(z, beta, d, k_max, sq_dist)
    log_norm = float(logsumexp(lw))
    if k_max == 1:
        return 1, log_norm
    cdf = np.cumsum(np.exp(lw - log_norm))
    k = int(np.searchsorted(cdf, rng.random(), side="right")) + 1
    return min(k, k_max), log_norm


def sample_multiplicity(z: float, beta: float, d: int, k_max: int, rng: RandomStream,
                        sq_dist: float = 0.0) -> tuple[int, float]:
    """Draw ``k`` proportional to ``z^k * bridge_mass`` truncated at ``k_max``.

    Returns ``(k, normaliser)``; ``normaliser / (weight of k)`` is the
    importance factor making sums over ``k <= k_max`` unbiased.
    """
    k, log_norm = sample_multiplicity_log(z, beta, d, k_max, rng, sq_dist)
    return k, math.exp(log_norm)


def multiplicity_tail_bound(rho_bar: float, beta: float, d: int, k_max: int) -> float:
    """Geometric bound on ``sum_{k > k_max} rho_bar^k (2 pi k beta)^(-d/2)``."""
    if rho_bar >= 1.0:
        return math.inf
    k = k_max + 1
    return rho_bar**k * (2.0 * math.pi * k * beta) ** (-0.5 * d) / (1.0 - rho_bar)


@dataclass(frozen=True)
class _Schedule:
    """One bisection level: fill ``mid`` from ``left`` and ``right``."""

    left: np.ndarray
    mid: np.ndarray
    right: np.ndarray
    wl: np.ndarray
    wr: np.ndarray
    scale: np.ndarray  # std in units of sqrt(tau)


@lru_cache(maxsize=256)
def _bisection(n_steps: int) -> tuple[_Schedule, ...]:
    levels = []
    intervals = [(0, n_steps)]
    while intervals:
        L, Mi, R, nxt = [], [], [], []
        for a, b in intervals:
            if b - a < 2:
                continue
            m = (a + b) // 2
            L.append(a)
            Mi.append(m)
            R.append(b)
            nxt += [(a, m), (m, b)]
        if not Mi:
            break
        a, m, b = (np.array(v) for v in (L, Mi, R))
        span = (b - a).astype(float)
        levels.append(_Schedule(a, m, b, (b - m) / span, (m - a) / span, np.sqrt((m - a) * (b - m) / span)))
        intervals = nxt
    return tuple(levels)


def _fill(pos: np.ndarray, lo: int, hi: int, tau: float, rng: RandomStream) -> None:
    """Resample ``pos[..., lo+1:hi, :]`` as a bridge pinned at ``lo`` and ``hi``; in place."""
    sq = math.sqrt(tau)
    for lev in _bisection(hi - lo):
        a, m, b = lev.left + lo, lev.mid + lo, lev.right + lo
        noise = rng.normal(pos.shape[:-2] + (len(m), pos.shape[-1]))
        pos[..., m, :] = (
            lev.wl[:, None] * pos[..., a, :]
            + lev.wr[:, None] * pos[..., b, :]
            + (sq * lev.scale)[:, None] * noise
        )


def fill_bridge_window(positions: np.ndarray, lo: int, hi: int, tau: float, rng: RandomStream) -> None:
    """Resample the interior of the slice window ``(lo, hi)`` of a position array in place."""
    if hi - lo >= 2:
        _fill(positions, lo, hi, tau, rng)


def sample_bridges(x, y, k: int, beta: float, M: int, rng: RandomStream, size: int) -> np.ndarray:
    """Batch of ``size`` bridges as an array of shape ``(size, k*M+1, d)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = k * M
    pos = np.empty((size, n + 1, x.shape[0]))
    pos[:, 0] = x
    pos[:, n] = y
    _fill(pos, 0, n, beta / M, rng)
    return pos


def sample_bridge(x, y, k: int, beta: float, M: int, rng: RandomStream) -> OpenPath:
    """One discretised bridge from ``x`` to ``y`` of time-length ``k*beta``.

    Returns a :class:`Loop` when ``x`` and ``y`` are equal.
    """
    if M < 1 or k < 1:
        raise ValueError("k and M must be positive")
    pos = sample_bridges(x, y, k, beta, M, rng, 1)[0]
    cls = Loop if np.array_equal(pos[0], pos[-1]) else OpenPath
    return cls(pos, k, M, beta)


def sample_lebesgue_poisson(box: BoxRegion, intensity: float, rng: RandomStream) -> ClassicalConfig:
    """Poisson(intensity * volume) many uniform points in ``box``."""
    n = int(rng.generator.poisson(intensity * box.volume))
    pts = rng.uniform(box.lower, box.upper, size=(n, box.dim))
    return ClassicalConfig(pts, dim=box.dim)


def sample_truncated_lebesgue_poisson(box: BoxRegion, intensity: float, n_max: int,
                                      rng: RandomStream) -> tuple[ClassicalConfig, float]:
    """Lebesgue-Poisson draw conditioned on at most ``n_max`` points.

    Returns the configuration and the truncated normaliser
    ``sum_{n <= n_max} (intensity * volume)^n / n!`` so that
    ``normaliser * E[f]`` integrates ``f`` against the truncated measure.
    """
    lam = intensity * box.volume
    n = np.arange(n_max + 1)
    logw = n * math.log(lam) - gammaln(n + 1)
    log_norm = logsumexp(logw)
    p = np.exp(logw - log_norm)
    count = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    count = min(count, n_max)
    pts = rng.uniform(box.lower, box.upper, size=(count, box.dim))
    return ClassicalConfig(pts, dim=box.dim), math.exp(log_norm)


def sample_permutation(n: int, rng: RandomStream) -> tuple[int, ...]:
    """Uniform permutation of ``0..n-1``."""
    if n <= 1:
        return tuple(range(n))
    return tuple(int(i) for i in rng.generator.permutation(n))

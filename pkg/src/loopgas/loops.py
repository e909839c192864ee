"""Time-discretised loops and open paths, their sections and indicator functionals.

A path of multiplicity ``k`` stores ``k*M + 1`` positions at times ``j*beta/M``.
Its section at slice ``j`` (0 <= j <= M) holds the ``k`` copies
``positions[j + l*M]`` for ``l = 0..k-1``.  For loops the last position
repeats the first, so slice ``M`` is slice ``0`` with the copies rotated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoxRegion, ClassicalConfig

__all__ = [
    "SliceAlignmentError",
    "OpenPath",
    "Loop",
    "LoopConfiguration",
    "OpenPathCollection",
    "slice_index",
    "t_section",
    "section_of_config",
    "K_of",
    "L_of",
    "alpha_indicator",
    "chi_indicator",
    "admissible_r",
    "config_to_record",
    "config_from_record",
    "RECORD_VERSION",
]

RECORD_VERSION = 1


class SliceAlignmentError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OpenPath:
    """Discretised path of time-length ``k*beta`` with ``M`` slices per period."""

    positions: np.ndarray
    k: int
    M: int
    beta: float

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if self.k < 1 or self.M < 1:
            raise ValueError("multiplicity and slice count must be positive")
        if pos.shape[0] != self.k * self.M + 1:
            raise ValueError(f"expected {self.k * self.M + 1} positions, got {pos.shape[0]}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "beta", float(self.beta))

    closed = False

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @cached_property
    def sections(self) -> np.ndarray:
        """All slice sections as an ``(M+1, k, d)`` array."""
        idx = np.arange(self.M + 1)[:, None] + self.M * np.arange(self.k)[None, :]
        out = self.positions[idx]
        out.setflags(write=False)
        return out

    @property
    def control_points(self) -> np.ndarray:
        """Positions at times ``l*beta`` for ``l = 1..k-1``."""
        return self.positions[self.M * np.arange(1, self.k)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, OpenPath):
            return NotImplemented
        return (
            type(self) is type(other)
            and (self.k, self.M, self.beta) == (other.k, other.M, other.beta)
            and np.array_equal(self.positions, other.positions)
        )

    def __hash__(self) -> int:
        return hash((self.k, self.M, self.beta, self.positions.tobytes()))


@dataclass(frozen=True, eq=False)
class Loop(OpenPath):
    """Closed path: the last position equals the first (the base point)."""

    def __post_init__(self):
        super().__post_init__()
        if not np.array_equal(self.positions[0], self.positions[-1]):
            raise ValueError("loop must end at its base point")

    closed = True

    @property
    def base(self) -> np.ndarray:
        return self.positions[0]


def _check_common(paths: Sequence[OpenPath]):
    if not paths:
        return
    M, beta, d = paths[0].M, paths[0].beta, paths[0].dim
    for p in paths:
        if (p.M, p.beta, p.dim) != (M, beta, d):
            raise ValueError("all members must share M, beta and dimension")


class LoopConfiguration:
    """Finite collection of loops with distinct, hard-core admissible base points.

    Base admissibility is validated only when ``core_r`` is given.
    """

    __slots__ = ("loops", "dim")

    def __init__(self, loops: Iterable[Loop] = (), core_r: float | None = None, dim: int | None = None):
        loops = tuple(loops)
        for lp in loops:
            if not isinstance(lp, Loop):
                raise TypeError("LoopConfiguration members must be Loop instances")
        _check_common(loops)
        self.loops = loops
        self.dim = loops[0].dim if loops else dim
        if len(loops) > 1:
            bases = np.array([lp.base for lp in loops])
            if len(np.unique(bases, axis=0)) != len(loops):
                raise ValueError("loop base points must be distinct")
            if core_r is not None:
                from .geometry import hardcore_admissible

                if not hardcore_admissible(bases, core_r):
                    raise ValueError("loop base points violate the hard core")

    def __len__(self) -> int:
        return len(self.loops)

    def __iter__(self):
        return iter(self.loops)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LoopConfiguration):
            return NotImplemented
        return len(self) == len(other) and set(self.loops) == set(other.loops)

    def __hash__(self):
        return hash(frozenset(self.loops))

    @property
    def bases(self) -> ClassicalConfig:
        return ClassicalConfig([lp.base for lp in self.loops], dim=self.dim)


class OpenPathCollection:
    """Ordered open paths; path ``j`` runs from ``starts[j]`` to ``ends[permutation[j]]``."""

    __slots__ = ("paths", "permutation", "ends")

    def __init__(self, paths: Sequence[OpenPath], permutation: Sequence[int] | None = None,
                 ends: np.ndarray | None = None):
        paths = tuple(paths)
        _check_common(paths)
        n = len(paths)
        perm = tuple(range(n)) if permutation is None else tuple(int(i) for i in permutation)
        if sorted(perm) != list(range(n)):
            raise ValueError("permutation must be a bijection on 0..n-1")
        if ends is None:
            ends = np.empty((n, paths[0].dim if n else 0))
            for j, p in enumerate(paths):
                ends[perm[j]] = p.end
        ends = np.asarray(ends, dtype=float)
        for j, p in enumerate(paths):
            if not np.array_equal(p.end, ends[perm[j]]):
                raise ValueError(f"path {j} does not end at its permuted endpoint")
        self.paths = paths
        self.permutation = perm
        self.ends = ends

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self):
        return iter(self.paths)


def slice_index(t: float, beta: float, M: int) -> int:
    """Slice index ``j`` with ``t = j*beta/M``; raises on misaligned ``t``."""
    j = t * M / beta
    jr = round(j)
    if abs(j - jr) > 1e-9 * max(1.0, abs(j)) or not 0 <= jr <= M:
        raise SliceAlignmentError(f"t={t} is not a slice time jβ/M with 0 <= j <= {M}")
    return int(jr)


def _members(c) -> tuple[OpenPath, ...]:
    if isinstance(c, OpenPath):
        return (c,)
    if isinstance(c, (LoopConfiguration, OpenPathCollection)):
        return tuple(c)
    return tuple(c)


def t_section(p: OpenPath, t: float) -> ClassicalConfig:
    """Positions of the ``k`` copies at time ``t`` within the period."""
    return ClassicalConfig(p.sections[slice_index(t, p.beta, p.M)], dim=p.dim)


def section_of_config(c, t: float) -> ClassicalConfig:
    members = _members(c)
    if not members:
        return ClassicalConfig()
    j = slice_index(t, members[0].beta, members[0].M)
    return ClassicalConfig(np.concatenate([p.sections[j] for p in members]), dim=members[0].dim)


def K_of(c) -> int:
    return sum(p.k for p in _members(c))


def L_of(c) -> int:
    return math.prod(p.k for p in _members(c))


def alpha_indicator(box: BoxRegion, c) -> int:
    """1 iff every slice position of every member lies in the closed box."""
    lo, hi = box.lower, box.upper
    for p in _members(c):
        if not np.all((p.positions >= lo) & (p.positions <= hi)):
            return 0
    return 1


def chi_indicator(box0: BoxRegion, c) -> int:
    """1 iff the control points of every member with ``k >= 2`` lie outside ``box0``."""
    for p in _members(c):
        if p.k >= 2 and np.any(box0.contains(p.control_points)):
            return 0
    return 1


def admissible_r(c, r: float) -> bool:
    """Hard-core check of every slice section of the whole collection.

    Coinciding copies count as an overlap.
    """
    members = _members(c)
    if not members:
        return True
    sec = np.concatenate([p.sections for p in members], axis=1)  # (M+1, P, d)
    P = sec.shape[1]
    if P < 2:
        return True
    iu = np.triu_indices(P, 1)
    diff = sec[:, iu[0], :] - sec[:, iu[1], :]
    return bool(np.einsum("spd,spd->sp", diff, diff).min() >= r * r)


def config_to_record(c: LoopConfiguration, beta: float | None = None, M: int | None = None) -> dict:
    """Versioned plain-data record; floats survive a JSON round trip exactly."""
    loops = c.loops
    return {
        "version": RECORD_VERSION,
        "dim": c.dim,
        "beta": loops[0].beta if loops else beta,
        "M": loops[0].M if loops else M,
        "loops": [{"k": lp.k, "base": lp.base.tolist(), "positions": lp.positions.tolist()} for lp in loops],
    }


def config_from_record(rec: dict) -> LoopConfiguration:
    if rec.get("version") != RECORD_VERSION:
        raise ValueError(f"unsupported configuration record version {rec.get('version')}")
    beta, M = rec["beta"], rec["M"]
    loops = [Loop(np.array(e["positions"], dtype=float), e["k"], M, beta) for e in rec["loops"]]
    return LoopConfiguration(loops, dim=rec["dim"])

"""Cubic boxes, finite point configurations and hard-core admissibility."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "BoxRegion",
    "Rect",
    "ClassicalConfig",
    "min_pair_distance",
    "hardcore_admissible",
    "max_occupancy",
    "shift_config",
    "box_difference",
]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned closed rectangle given by lower and upper corners."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))


@dataclass(frozen=True)
class BoxRegion:
    """Closed axis-aligned cube ``center + [-half_side, half_side]^dim``."""

    center: tuple[float, ...]
    half_side: float

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        if len(center) < 1:
            raise ValueError("box dimension must be at least 1")
        if not (self.half_side > 0 and math.isfinite(self.half_side)):
            raise ValueError(f"half_side must be positive and finite, got {self.half_side}")
        object.__setattr__(self, "half_side", float(self.half_side))

    @classmethod
    def centered(cls, dim: int, half_side: float) -> "BoxRegion":
        return cls((0.0,) * dim, half_side)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - self.half_side

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + self.half_side

    @property
    def volume(self) -> float:
        return (2.0 * self.half_side) ** self.dim

    def as_rect(self) -> Rect:
        return Rect(tuple(self.lower), tuple(self.upper))

    def contains(self, points) -> np.ndarray | bool:
        """Closed-box membership, vectorised over the last axis."""
        pts = np.asarray(points, dtype=float)
        inside = np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def contains_box(self, other: "BoxRegion") -> bool:
        return bool(np.all(other.lower >= self.lower) and np.all(other.upper <= self.upper))

    def shifted(self, s) -> "BoxRegion":
        return BoxRegion(tuple(np.asarray(self.center) + np.asarray(s, dtype=float)), self.half_side)


def box_difference(outer: BoxRegion | Rect, inner: BoxRegion | Rect | None) -> list[Rect]:
    """Split ``outer`` minus the interior of ``inner`` into disjoint rectangles.

    The pieces overlap only on boundaries, which carry no volume.
    """
    o = outer.as_rect() if isinstance(outer, BoxRegion) else outer
    if inner is None:
        return [o]
    i = inner.as_rect() if isinstance(inner, BoxRegion) else inner
    lo_o, hi_o = np.array(o.lower), np.array(o.upper)
    lo_i = np.maximum(np.array(i.lower), lo_o)
    hi_i = np.minimum(np.array(i.upper), hi_o)
    if np.any(lo_i >= hi_i):
        return [o]
    pieces: list[Rect] = []
    cur_lo, cur_hi = lo_o.copy(), hi_o.copy()
    # peel slabs off one axis at a time
    for ax in range(o.dim):
        if lo_i[ax] > cur_lo[ax]:
            hi = cur_hi.copy()
            hi[ax] = lo_i[ax]
            pieces.append(Rect(tuple(cur_lo), tuple(hi)))
        if hi_i[ax] < cur_hi[ax]:
            lo = cur_lo.copy()
            lo[ax] = hi_i[ax]
            pieces.append(Rect(tuple(lo), tuple(cur_hi)))
        cur_lo[ax], cur_hi[ax] = lo_i[ax], hi_i[ax]
    return pieces


class ClassicalConfig:
    """Finite set of distinct points in R^d.

    Exact duplicates collapse on construction (set semantics); no tolerance
    is applied.  The point array is read-only.
    """

    __slots__ = ("_points", "_dim")

    def __init__(self, points: Iterable[Sequence[float]] | np.ndarray = (), dim: int | None = None):
        arr = np.asarray(points, dtype=float)
        if arr.size == 0:
            d = dim if dim is not None else (arr.shape[-1] if arr.ndim == 2 else None)
            arr = np.zeros((0, d if d else 0))
        else:
            if arr.ndim == 1:
                arr = arr[None, :] if dim is None or dim == arr.shape[0] else arr.reshape(-1, dim)
            if arr.ndim != 2:
                raise ValueError("points must form an (n, d) array")
            d = arr.shape[1]
            if dim is not None and dim != d:
                raise ValueError(f"points have dimension {d}, expected {dim}")
            if not np.all(np.isfinite(arr)):
                raise ValueError("points must be finite")
            _, first = np.unique(arr, axis=0, return_index=True)
            if len(first) != len(arr):
                arr = arr[np.sort(first)]
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self._points = arr
        self._dim = d

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def dim(self) -> int | None:
        return self._dim

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self):
        return iter(self._points)

    def _key(self) -> frozenset:
        return frozenset(map(tuple, self._points.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClassicalConfig):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    def __repr__(self) -> str:
        return f"ClassicalConfig({self._points.tolist()})"

    def union(self, other: "ClassicalConfig") -> "ClassicalConfig":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return ClassicalConfig(np.vstack([self._points, other._points]))


def min_pair_distance(cc: ClassicalConfig | np.ndarray) -> float:
    """Smallest distance over distinct pairs, ``inf`` for fewer than two points."""
    pts = cc.points if isinstance(cc, ClassicalConfig) else np.asarray(cc, dtype=float)
    n = len(pts)
    if n < 2:
        return math.inf
    if n <= 64:
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return float(dist[np.triu_indices(n, 1)].min())
    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(dist[:, 1].min())


def hardcore_admissible(cc: ClassicalConfig | np.ndarray, r: float) -> bool:
    """True iff every pair of points is at distance at least ``r``."""
    if r <= 0:
        raise ValueError("core radius must be positive")
    return min_pair_distance(cc) >= r


def max_occupancy(box: BoxRegion, r: float) -> int:
    """Occupancy ceiling ``ceil((2L)^d / r^d)`` used in the kernel bounds.

    Ratios within 1e-9 of an integer are rounded first so that
    representation error cannot push the ceiling up by one.
    """
    if r <= 0:
        raise ValueError("core radius must be positive")
    ratio = (2.0 * box.half_side / r) ** box.dim
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, ratio):
        ratio = nearest
    return max(1, math.ceil(ratio))


def shift_config(cc: ClassicalConfig, s) -> ClassicalConfig:
    """Translate every point by ``s``."""
    if len(cc) == 0:
        return cc
    return ClassicalConfig(cc.points + np.asarray(s, dtype=float))

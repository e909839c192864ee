"""Hard-core pair potentials with finite range and their derived constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import ClassicalConfig

__all__ = [
    "InvalidPotentialError",
    "PotentialModel",
    "PotentialConstants",
    "evaluate",
    "constants",
    "pair_energy",
    "cross_energy",
    "bump",
    "bump_derivative",
]


class InvalidPotentialError(ValueError):
    pass


def bump(u):
    """C^2 bump on [0, 1] with unit maximum at u = 1/2 and vanishing second derivative at the ends."""
    u = np.asarray(u, dtype=float)
    return 64.0 * u**3 * (1.0 - u) ** 3


def bump_derivative(u):
    u = np.asarray(u, dtype=float)
    return 192.0 * u**2 * (1.0 - u) ** 2 * (1.0 - 2.0 * u)


def _zero(s):
    return np.zeros_like(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class PotentialModel:
    """Pair potential: +inf below ``core_r``, ``profile`` on [r, R), zero beyond ``range_R``.

    ``derivative`` is the derivative of the profile, used for the gradient
    constant.  ``family`` and ``params`` are kept for serialisation.
    """

    core_r: float
    range_R: float
    profile: Callable = field(default=_zero, compare=False)
    derivative: Callable = field(default=_zero, compare=False)
    family: str = "hard_core"
    params: tuple = ()

    def __post_init__(self):
        r, R = float(self.core_r), float(self.range_R)
        if not (0.0 < r < R < math.inf):
            raise InvalidPotentialError(f"need 0 < core_r < range_R < inf, got r={r}, R={R}")
        object.__setattr__(self, "core_r", r)
        object.__setattr__(self, "range_R", R)

    @property
    def is_pure_hard_core(self) -> bool:
        return self.family == "hard_core"

    @classmethod
    def hard_core(cls, r: float, R: float | None = None) -> "PotentialModel":
        """Pure hard core: zero outside the core."""
        return cls(r, 2.0 * r if R is None else R)

    @classmethod
    def square_well(cls, r: float, R: float, depth: float) -> "PotentialModel":
        """Smoothed attractive well ``-depth * bump((s - r)/(R - r))``."""
        w = R - r
        return cls(
            r, R,
            profile=lambda s: -depth * bump((np.asarray(s) - r) / w),
            derivative=lambda s: -depth * bump_derivative((np.asarray(s) - r) / w) / w,
            family="square_well",
            params=(("depth", float(depth)),),
        )

    @classmethod
    def shoulder(cls, r: float, R: float, height: float) -> "PotentialModel":
        """Smoothed repulsive shoulder ``+height * bump((s - r)/(R - r))``."""
        w = R - r
        return cls(
            r, R,
            profile=lambda s: height * bump((np.asarray(s) - r) / w),
            derivative=lambda s: height * bump_derivative((np.asarray(s) - r) / w) / w,
            family="shoulder",
            params=(("height", float(height)),),
        )

    @classmethod
    def tabulated(cls, distances, values) -> "PotentialModel":
        """Cubic spline through a (distance, value) table.

        The first and last distances are taken as the core and range radii.
        A natural spline end condition is used, so the profile is C^2 inside.
        """
        s = np.asarray(distances, dtype=float)
        v = np.asarray(values, dtype=float)
        if s.ndim != 1 or s.shape != v.shape or len(s) < 4:
            raise InvalidPotentialError("table needs at least 4 (distance, value) rows")
        if not np.all(np.diff(s) > 0):
            raise InvalidPotentialError("table distances must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise InvalidPotentialError("table values must be finite")
        spline = CubicSpline(s, v, bc_type="natural")
        return cls(
            s[0], s[-1],
            profile=spline,
            derivative=spline.derivative(),
            family="table",
            params=(("distances", tuple(s.tolist())), ("values", tuple(v.tolist()))),
        )

    @classmethod
    def from_table_file(cls, path: str | Path) -> "PotentialModel":
        data = np.loadtxt(path, delimiter=None, comments="#", ndmin=2)
        if data.shape[1] != 2:
            raise InvalidPotentialError(f"{path}: expected two columns")
        return cls.tabulated(data[:, 0], data[:, 1])

    def __call__(self, dist):
        return evaluate(self, dist)


def evaluate(V: PotentialModel, dist):
    """Vectorised pair potential, ``+inf`` inside the core."""
    d = np.asarray(dist, dtype=float)
    out = np.zeros_like(d)
    core = d < V.core_r
    out[core] = math.inf
    if not V.is_pure_hard_core:
        mid = ~core & (d < V.range_R)
        if np.any(mid):
            out[mid] = V.profile(d[mid])
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PotentialConstants:
    """Derived constants: well depth, gradient sup, effective density and stability flag.

    ``packing_ratio`` is ``(R/r)^d`` which appears in every energy bound.
    """

    v_bar: float
    v_bar1: float
    rho_bar: float
    stable: bool
    packing_ratio: float = 1.0


def constants(V: PotentialModel, z: float, beta: float, d: int, resolution: int = 4096) -> PotentialConstants:
    if not (z > 0 and beta > 0):
        raise ValueError("z and beta must be positive")
    packing = (V.range_R / V.core_r) ** d
    if V.is_pure_hard_core:
        v_bar = v_bar1 = 0.0
    else:
        s = np.linspace(V.core_r, V.range_R, resolution)
        with np.errstate(all="ignore"):
            prof = np.asarray(V.profile(s), dtype=float)
            der = np.asarray(V.derivative(s), dtype=float)
        if not (np.all(np.isfinite(prof)) and np.all(np.isfinite(der))):
            raise InvalidPotentialError("profile is not finite on [r, R]")
        v_bar = max(0.0, -float(prof.min()))
        v_bar1 = float(np.abs(der).max())
    rho_bar = z * math.exp(beta * v_bar * packing) if v_bar > 0 else float(z)
    return PotentialConstants(v_bar, v_bar1, rho_bar, rho_bar < 1.0, packing)


def _as_points(cc) -> np.ndarray:
    return cc.points if isinstance(cc, ClassicalConfig) else np.asarray(cc, dtype=float)


def pair_energy(cc, V: PotentialModel) -> float:
    """Sum of V over unordered distinct pairs; ``inf`` on any core overlap."""
    pts = _as_points(cc)
    n = len(pts)
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, 1)
    dist = np.linalg.norm(pts[iu[0]] - pts[iu[1]], axis=-1)
    if dist.min() < V.core_r:
        return math.inf
    if V.is_pure_hard_core:
        return 0.0
    return float(math.fsum(evaluate(V, dist)))


def cross_energy(cc, cc2, V: PotentialModel) -> float:
    """Sum of V over all pairs with one point in each config; no 1/2 factor."""
    a, b = _as_points(cc), _as_points(cc2)
    if len(a) == 0 or len(b) == 0:
        return 0.0
    dist = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1).ravel()
    if dist.min() < V.core_r:
        return math.inf
    if V.is_pure_hard_core:
        return 0.0
    return float(math.fsum(evaluate(V, dist)))

"""Time-sliced energies of paths, loop collections and their environments.

Every time integral is a left Riemann sum over slices ``0..M-1`` with step
``beta/M``.  Hard-core overlaps are checked on all slices ``0..M`` and make
the energy ``+inf`` before anything is summed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import ClassicalConfig
from .loops import LoopConfiguration, OpenPath, OpenPathCollection
from .potential import PotentialConstants, PotentialModel, evaluate

__all__ = [
    "EnergyBreakdown",
    "path_self_energy",
    "path_pair_energy",
    "collection_energy",
    "combined_energy",
    "external_cc_energy",
    "external_lc_energy",
    "energy_lower_bound",
    "energy_breakdown",
    "self_term",
    "cross_term",
    "static_term",
    "stack_sections",
]

INF = math.inf
_KDTREE_MIN = 256


@dataclass(frozen=True)
class EnergyBreakdown:
    self: float
    internal_pairs: float
    external: float

    @property
    def total(self) -> float:
        parts = (self.self, self.internal_pairs, self.external)
        if any(p == INF for p in parts):
            return INF
        return self.self + self.internal_pairs + self.external


# array kernels -------------------------------------------------------------
# ``sec`` arrays have shape (M+1, P, d): slice, copy, coordinate.


def self_term(sec: np.ndarray, V: PotentialModel, tau: float) -> float:
    """Energy among the copies of one section stack, pairs counted once."""
    S, P, _ = sec.shape
    if P < 2:
        return 0.0
    if P >= _KDTREE_MIN:
        return _self_term_tree(sec, V, tau)
    iu, ju = np.triu_indices(P, 1)
    diff = sec[:, iu, :] - sec[:, ju, :]
    d2 = np.einsum("spd,spd->sp", diff, diff)
    if d2.min() < V.core_r * V.core_r:
        return INF
    if V.is_pure_hard_core:
        return 0.0
    d2 = d2[:-1]
    near = d2 < V.range_R * V.range_R
    if not near.any():
        return 0.0
    return tau * float(np.sum(evaluate(V, np.sqrt(d2[near]))))


def _self_term_tree(sec, V, tau):
    total = 0.0
    for s in range(sec.shape[0]):
        pts = sec[s]
        tree = cKDTree(pts)
        if tree.query_pairs(V.core_r * (1 - 1e-15), output_type="ndarray").size:
            # query_pairs is inclusive; recheck exactly
            pairs = tree.query_pairs(V.core_r, output_type="ndarray")
            dist = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=-1)
            if np.any(dist < V.core_r):
                return INF
        if V.is_pure_hard_core or s == sec.shape[0] - 1:
            continue
        pairs = tree.query_pairs(V.range_R, output_type="ndarray")
        if len(pairs):
            dist = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=-1)
            total += float(np.sum(evaluate(V, dist[dist < V.range_R])))
    return tau * total


def cross_term(secA: np.ndarray, secB: np.ndarray, V: PotentialModel, tau: float) -> float:
    """Energy between two section stacks over the same slices."""
    if secA.shape[1] == 0 or secB.shape[1] == 0:
        return 0.0
    diff = secA[:, :, None, :] - secB[:, None, :, :]
    d2 = np.einsum("sabd,sabd->sab", diff, diff)
    if d2.min() < V.core_r * V.core_r:
        return INF
    if V.is_pure_hard_core:
        return 0.0
    d2 = d2[:-1]
    near = d2 < V.range_R * V.range_R
    if not near.any():
        return 0.0
    return tau * float(np.sum(evaluate(V, np.sqrt(d2[near]))))


def static_term(sec: np.ndarray, pts: np.ndarray, V: PotentialModel, tau: float) -> float:
    """Energy between a section stack and fixed points present at every slice."""
    if sec.shape[1] == 0 or len(pts) == 0:
        return 0.0
    flat = sec.reshape(-1, sec.shape[-1])
    diff = flat[:, None, :] - pts[None, :, :]
    d2 = np.einsum("abd,abd->ab", diff, diff).reshape(sec.shape[0], sec.shape[1], len(pts))
    if d2.min() < V.core_r * V.core_r:
        return INF
    if V.is_pure_hard_core:
        return 0.0
    d2 = d2[:-1]
    near = d2 < V.range_R * V.range_R
    if not near.any():
        return 0.0
    return tau * float(np.sum(evaluate(V, np.sqrt(d2[near]))))


def _members(c) -> tuple[OpenPath, ...]:
    if isinstance(c, OpenPath):
        return (c,)
    return tuple(c)


def _tau(members) -> float:
    return members[0].beta / members[0].M


def stack_sections(members) -> np.ndarray:
    """Concatenate member sections into one ``(M+1, P, d)`` stack."""
    return np.concatenate([p.sections for p in members], axis=1)


# public functionals ----------------------------------------------------------


def path_self_energy(p: OpenPath, V: PotentialModel) -> float:
    """Interaction of a path with itself across its ``k`` time-shifted copies."""
    return self_term(p.sections, V, p.beta / p.M)


def path_pair_energy(p: OpenPath, q: OpenPath, V: PotentialModel) -> float:
    """Interaction between two paths, all copies against all copies."""
    if (p.M, p.beta) != (q.M, q.beta):
        raise ValueError("paths must share the time grid")
    return cross_term(p.sections, q.sections, V, p.beta / p.M)


def collection_energy(c, V: PotentialModel) -> float:
    """Self energies plus every unordered member pair."""
    members = _members(c)
    if not members:
        return 0.0
    return self_term(stack_sections(members), V, _tau(members))


def combined_energy(pc: OpenPathCollection, lc: LoopConfiguration, V: PotentialModel) -> float:
    members = _members(pc) + _members(lc)
    if not members:
        return 0.0
    return self_term(stack_sections(members), V, _tau(members))


def external_cc_energy(c, ext: ClassicalConfig, V: PotentialModel) -> float:
    """Interaction of a collection with fixed outside points at every slice.

    Only points within ``R`` of some slice position can contribute; the
    others are dropped before the pair sum.
    """
    members = _members(c)
    pts = ext.points if isinstance(ext, ClassicalConfig) else np.asarray(ext, dtype=float)
    if not members or len(pts) == 0:
        return 0.0
    sec = stack_sections(members)
    flat = sec.reshape(-1, sec.shape[-1])
    lo = flat.min(axis=0) - V.range_R
    hi = flat.max(axis=0) + V.range_R
    pts = pts[np.all((pts >= lo) & (pts <= hi), axis=1)]
    return static_term(sec, pts, V, _tau(members))


def external_lc_energy(c, boundary: LoopConfiguration, V: PotentialModel, truncation_box=None) -> float:
    """Interaction with boundary loops, optionally only those based in ``truncation_box``."""
    members = _members(c)
    bnd = _members(boundary)
    if truncation_box is not None:
        bnd = tuple(b for b in bnd if truncation_box.contains(b.base))
    if not members or not bnd:
        return 0.0
    return cross_term(stack_sections(members), stack_sections(bnd), V, _tau(members))


def energy_breakdown(c, V: PotentialModel, ext=None) -> EnergyBreakdown:
    """Self, internal pair and external parts of the energy of ``c``."""
    members = _members(c)
    if not members:
        return EnergyBreakdown(0.0, 0.0, 0.0)
    selfs = [path_self_energy(p, V) for p in members]
    s = INF if INF in selfs else math.fsum(selfs)
    pairs = [
        path_pair_energy(members[i], members[j], V)
        for i in range(len(members))
        for j in range(i + 1, len(members))
    ]
    internal = INF if INF in pairs else math.fsum(pairs)
    if ext is None:
        e = 0.0
    elif isinstance(ext, LoopConfiguration):
        e = external_lc_energy(members, ext, V)
    else:
        e = external_cc_energy(members, ext, V)
    return EnergyBreakdown(s, internal, e)


def energy_lower_bound(K: int, consts: PotentialConstants, beta: float, d: int | None = None) -> float:
    """Floor ``-beta * v_bar * (R/r)^d * K`` on finite energies."""
    if consts.v_bar == 0 or K == 0:
        return 0.0
    return -beta * consts.v_bar * consts.packing_ratio * K

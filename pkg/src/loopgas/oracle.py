"""Deterministic quadrature of the discretised loop-gas integrals for tiny systems.

Each loop or path of multiplicity ``k`` is cut into ``k`` strands, one per
period.  A configuration with ``P`` strands is a chain of ``M`` Gaussian
transitions between slice states in ``R^(P*d)``.  The integral is evaluated
as a transfer-matrix product over quadrature nodes: slice 0 carries the base
points, copies and path starts; slices ``1..M-1`` share one node set; slice
``M`` is slice 0 with the strands shifted by one copy and path ends inserted.

In one dimension the hard core is integrated exactly: admissible slice
states split into orderings of the points, and each ordering is a polytope
covered by nested Gauss-Legendre rules whose panels break where a lower
limit changes branch.  In higher dimension a tensor rule is masked by the
hard core, which converges slowly and is meant only for smoke checks.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.spatial.distance import cdist

from .geometry import BoxRegion, ClassicalConfig, Rect, box_difference, hardcore_admissible
from .potential import PotentialModel, evaluate

__all__ = [
    "QuadratureSpec",
    "OracleSizeError",
    "OracleValue",
    "quad_partition",
    "quad_rdmk",
    "quad_trace",
    "dirichlet_single_particle",
]

N_MAX_CAP, K_MAX_CAP, M_CAP, NODES_CAP = 2, 2, 4, 16


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    """Truncation and grid sizes of the oracle.

    ``nodes`` is the Gauss-Legendre order per panel and axis; the error
    estimate reruns with ``refine_nodes`` (default three quarters of it).
    """

    n_max: int = 2
    k_max: int = 1
    nodes: int = 16
    refine_nodes: int | None = None
    max_nodes: int = 4096

    def __post_init__(self):
        if not (0 <= self.n_max <= N_MAX_CAP and 1 <= self.k_max <= K_MAX_CAP and 2 <= self.nodes <= NODES_CAP):
            raise OracleSizeError(
                f"oracle caps: n_max <= {N_MAX_CAP}, k_max <= {K_MAX_CAP}, 2 <= nodes <= {NODES_CAP}"
            )

    @property
    def coarse(self) -> int:
        return self.refine_nodes if self.refine_nodes else max(2, (3 * self.nodes) // 4)


@dataclass(frozen=True)
class OracleValue:
    value: float
    error: float
    terms: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)


@dataclass(frozen=True)
class _Member:
    """Loop (``start is None``) or path with slice-0 regions for its free strands."""

    k: int
    base_region: tuple[Rect, ...] = ()
    copy_region: tuple[Rect, ...] = ()
    start: np.ndarray | None = None
    end: np.ndarray | None = None


# node construction -------------------------------------------------------------


def _subtract_zones(intervals, centers, r):
    """Remove open intervals ``(c - r, c + r)`` from a list of closed intervals."""
    out = list(intervals)
    for c in centers:
        nxt = []
        for a, b in out:
            if b <= c - r or a >= c + r:
                nxt.append((a, b))
                continue
            if a < c - r:
                nxt.append((a, c - r))
            if b > c + r:
                nxt.append((c + r, b))
        out = nxt
    return [(a, b) for a, b in out if b > a]


def _chain_rule(a, b, r, x, w, budget):
    """Nodes for ``a_i <= y_i <= b_i`` with ``y_{i+1} - y_i >= r``.

    Returns ``(points, weights)`` with points of shape ``(Q, S)``.
    """
    S = len(a)
    ub = list(b)
    for i in range(S - 2, -1, -1):
        ub[i] = min(b[i], ub[i + 1] - r)
    rows: list[tuple[tuple, float]] = [((), 1.0)]
    for i in range(S):
        bps = [a[j] - (j - i) * r for j in range(i + 1, S)]
        new = []
        for pts, wt in rows:
            lo = a[i] if i == 0 else max(a[i], pts[-1] + r)
            hi = ub[i]
            if lo >= hi:
                continue
            cuts = sorted({lo, hi, *[c for c in bps if lo < c < hi]})
            for c0, c1 in zip(cuts[:-1], cuts[1:]):
                half = 0.5 * (c1 - c0)
                ys = half * x + 0.5 * (c1 + c0)
                for y, wy in zip(ys, half * w):
                    new.append((pts + (y,), wt * wy))
        rows = new
        if len(rows) > budget:
            raise OracleSizeError(f"slice node count exceeds {budget}")
    if not rows:
        return np.zeros((0, S)), np.zeros(0)
    return np.array([p for p, _ in rows]), np.array([wt for _, wt in rows])


def _nodes_1d(regions, forbidden, r, n, budget):
    """Admissible 1-d nodes for free slots with interval regions."""
    S = len(regions)
    if S == 0:
        return np.zeros((1, 0)), np.ones(1)
    x, w = leggauss(n)
    ivs = [_subtract_zones([(rc.lower[0], rc.upper[0]) for rc in reg], forbidden, r) for reg in regions]
    if any(not iv for iv in ivs):
        return np.zeros((0, S)), np.zeros(0)
    blocks, weights, total = [], [], 0
    for order in itertools.permutations(range(S)):
        for choice in itertools.product(*[ivs[s] for s in order]):
            a = [c[0] for c in choice]
            b = [c[1] for c in choice]
            pts, wt = _chain_rule(a, b, r, x, w, budget - total)
            if len(wt) == 0:
                continue
            full = np.empty_like(pts)
            full[:, list(order)] = pts
            blocks.append(full)
            weights.append(wt)
            total += len(wt)
    if not blocks:
        return np.zeros((0, S)), np.zeros(0)
    return np.concatenate(blocks), np.concatenate(weights)


def _nodes_nd(regions, forbidden, r, n, d, budget):
    """Masked tensor Gauss-Legendre nodes for free slots with rectangle regions."""
    S = len(regions)
    if S == 0:
        return np.zeros((1, 0, d)), np.ones(1)
    x, w = leggauss(n)
    per_slot = []
    for reg in regions:
        pts, wts = [], []
        for rc in reg:
            lo, hi = np.array(rc.lower), np.array(rc.upper)
            half = 0.5 * (hi - lo)
            grids = [half[a] * x + 0.5 * (hi[a] + lo[a]) for a in range(d)]
            gw = [half[a] * w for a in range(d)]
            mesh = np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, d)
            mw = np.prod(np.stack(np.meshgrid(*gw, indexing="ij"), -1).reshape(-1, d), axis=1)
            pts.append(mesh)
            wts.append(mw)
        per_slot.append((np.concatenate(pts), np.concatenate(wts)))
    count = math.prod(len(p[1]) for p in per_slot)
    if count > budget * 16:
        raise OracleSizeError(f"tensor grid of {count} nodes exceeds the budget")
    idx = np.stack(np.meshgrid(*[np.arange(len(p[1])) for p in per_slot], indexing="ij"), -1).reshape(-1, S)
    nodes = np.stack([per_slot[s][0][idx[:, s]] for s in range(S)], axis=1)
    wts = np.prod(np.stack([per_slot[s][1][idx[:, s]] for s in range(S)], axis=1), axis=1)
    keep = np.ones(len(wts), dtype=bool)
    for s, t in itertools.combinations(range(S), 2):
        keep &= np.sum((nodes[:, s] - nodes[:, t]) ** 2, axis=-1) >= r * r
    if len(forbidden):
        f = np.asarray(forbidden)
        dd = np.sum((nodes[:, :, None, :] - f[None, None, :, :]) ** 2, axis=-1)
        keep &= np.all(dd >= r * r, axis=(1, 2))
    nodes, wts = nodes[keep], wts[keep]
    if len(wts) > budget:
        raise OracleSizeError(f"slice node count {len(wts)} exceeds {budget}")
    return nodes, wts


def _free_nodes(regions, forbidden, r, n, d, budget):
    if d == 1:
        f = [float(np.asarray(p).ravel()[0]) for p in forbidden]
        pts, wts = _nodes_1d(regions, f, r, n, budget)
        return pts[:, :, None], wts
    return _nodes_nd(regions, forbidden, r, n, d, budget)


# slice weights and transfer ---------------------------------------------------


def _slice_energy(X: np.ndarray, ext: np.ndarray | None, V: PotentialModel) -> np.ndarray:
    """Energy of each slice state in ``X`` of shape ``(Q, P, d)``, hard core included."""
    Q, P, _ = X.shape
    E = np.zeros(Q)
    if P >= 2:
        iu, ju = np.triu_indices(P, 1)
        dist = np.linalg.norm(X[:, iu] - X[:, ju], axis=-1)
        E += evaluate(V, dist).sum(axis=1)
    if ext is not None and len(ext) and P:
        dist = np.linalg.norm(X[:, :, None, :] - ext[None, None, :, :], axis=-1)
        E += evaluate(V, dist).reshape(Q, -1).sum(axis=1)
    return E


def _kernel(A: np.ndarray, B: np.ndarray, tau: float) -> np.ndarray:
    """Product Gaussian transition density between slice states (flattened)."""
    D = A.shape[1]
    return (2.0 * math.pi * tau) ** (-0.5 * D) * np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * tau))


def _sector_integral(members: Sequence[_Member], box: BoxRegion, V: PotentialModel, beta: float, M: int,
                     ext: np.ndarray | None, n: int, budget: int) -> float:
    """Integral of one configuration type over all its strand positions."""
    d = box.dim
    r = V.core_r
    tau = beta / M
    strands = [(m, l) for m, mem in enumerate(members) for l in range(mem.k)]
    P = len(strands)
    if P == 0:
        return 1.0
    starts = [mem.start for mem in members if mem.start is not None]
    ends = [mem.end for mem in members if mem.end is not None]
    ext_list = [] if ext is None else list(ext)
    for fixed in (starts + ext_list, ends + ext_list):
        if len(fixed) >= 2 and not hardcore_admissible(np.array(fixed), r):
            return 0.0

    # slice 0: free strands are loop copies and path copies l >= 1
    free_idx, free_regions, fixed_idx, fixed_pts = [], [], [], []
    for s, (m, l) in enumerate(strands):
        mem = members[m]
        if mem.start is not None and l == 0:
            fixed_idx.append(s)
            fixed_pts.append(mem.start)
        else:
            free_idx.append(s)
            free_regions.append(mem.base_region if (mem.start is None and l == 0) else mem.copy_region)
    forb = starts + ends + ext_list
    pts0, w0 = _free_nodes(free_regions, forb, r, n, d, budget)
    if len(w0) == 0:
        return 0.0
    X0 = np.empty((len(w0), P, d))
    X0[:, free_idx] = pts0
    for s, p in zip(fixed_idx, fixed_pts):
        X0[:, s] = p
    w0 = w0 * np.exp(-tau * _slice_energy(X0, ext, V))

    # slice M from slice 0
    XM = np.empty_like(X0)
    for s, (m, l) in enumerate(strands):
        mem = members[m]
        if l < mem.k - 1:
            XM[:, s] = X0[:, strands.index((m, l + 1))]
        elif mem.start is None:
            XM[:, s] = X0[:, strands.index((m, 0))]
        else:
            XM[:, s] = mem.end
    closing = np.isfinite(_slice_energy(XM, ext, PotentialModel.hard_core(r, V.range_R)))
    w0 = w0 * closing

    A0 = X0.reshape(len(w0), -1)
    AM = XM.reshape(len(w0), -1)
    if M == 1:
        diag = (2.0 * math.pi * tau) ** (-0.5 * P * d) * np.exp(-np.sum((A0 - AM) ** 2, axis=1) / (2.0 * tau))
        return float(np.sum(w0 * diag))

    ptsm, wm = _free_nodes([(box.as_rect(),)] * P, ext_list, r, n, d, budget)
    if len(wm) == 0:
        return 0.0
    wm = wm * np.exp(-tau * _slice_energy(ptsm, ext, V))
    Am = ptsm.reshape(len(wm), -1)
    T = _kernel(A0, Am, tau) * wm[None, :]
    if M > 2:
        G = _kernel(Am, Am, tau) * wm[None, :]
        for _ in range(M - 2):
            T = T @ G
    C = _kernel(Am, AM, tau)
    return float(np.sum(w0 * np.einsum("am,ma->a", T, C)))


# public oracles ---------------------------------------------------------------


def _check_caps(params, spec: QuadratureSpec):
    if params.M > M_CAP:
        raise OracleSizeError(f"oracle cap: M <= {M_CAP}, got {params.M}")


def _ext_points(params) -> np.ndarray | None:
    b = params.boundary
    if b is None:
        return None
    if isinstance(b, ClassicalConfig):
        return b.points if len(b) else None
    raise OracleSizeError("the oracle supports fixed boundary points only")


def _k_tuples(n: int, k_max: int):
    return itertools.product(range(1, k_max + 1), repeat=n)


def _partition_terms(params, spec, box_region, n_nodes, k_max, n_max):
    """Sector sums ``Xi_n`` for loops based in ``box_region`` minus an optional hole."""
    box = params.box
    ext = _ext_points(params)
    terms = {}
    for nl in range(n_max + 1):
        acc = 0.0
        for ks in _k_tuples(nl, k_max):
            members = [_Member(k, box_region, box_region) for k in ks]
            wt = math.prod(params.z**k / k for k in ks) / math.factorial(nl)
            acc += wt * _sector_integral(members, box, params.potential, params.beta, params.M, ext, n_nodes,
                                         spec.max_nodes)
        terms[nl] = acc
    return terms


def quad_partition(params, spec: QuadratureSpec = QuadratureSpec()) -> OracleValue:
    """Grand partition function truncated at ``n_max`` loops of multiplicity ``<= k_max``.

    ``terms[n]`` holds the contribution of ``n`` loops, so ``terms[n] / value``
    is the probability of ``n`` loops.
    """
    _check_caps(params, spec)
    k_max = min(spec.k_max, params.k_max)
    region = (params.box.as_rect(),)
    fine = _partition_terms(params, spec, region, spec.nodes, k_max, spec.n_max)
    coarse = _partition_terms(params, spec, region, spec.coarse, k_max, spec.n_max)
    v, vc = math.fsum(fine.values()), math.fsum(coarse.values())
    return OracleValue(v, abs(v - vc), fine,
                       {"M": params.M, "nodes": spec.nodes, "refine_nodes": spec.coarse, "k_max": k_max,
                        "n_max": spec.n_max})


def _rdmk_numerator(params, spec, box0, x0, y0, n_nodes, k_max):
    box = params.box
    ext = _ext_points(params)
    outside = tuple(box_difference(box, box0))
    n = len(x0)
    total = 0.0
    for perm in itertools.permutations(range(n)):
        for kp in _k_tuples(n, k_max):
            paths = [_Member(k, (), outside, np.asarray(x0[j]), np.asarray(y0[perm[j]])) for j, k in enumerate(kp)]
            wp = params.z ** sum(kp)
            for m in range(spec.n_max - n + 1):
                for kl in _k_tuples(m, k_max):
                    loops = [_Member(k, outside, outside) for k in kl]
                    wl = math.prod(params.z**k / k for k in kl) / math.factorial(m)
                    total += wp * wl * _sector_integral(paths + loops, box, params.potential, params.beta,
                                                        params.M, ext, n_nodes, spec.max_nodes)
    return total


def _as_points(c, d):
    if isinstance(c, ClassicalConfig):
        return c.points
    return np.asarray(c, dtype=float).reshape(-1, d)


def quad_rdmk(params, spec: QuadratureSpec, box0: BoxRegion, x0, y0, partition: OracleValue | None = None
              ) -> OracleValue:
    """Reduced density matrix kernel on ``box0`` between point sets ``x0`` and ``y0``.

    Environment loops are based outside ``box0`` with their copies at the
    period times outside ``box0`` as well; at most ``n_max`` strands-owning
    members enter in total.
    """
    _check_caps(params, spec)
    d = params.dim
    x0, y0 = _as_points(x0, d), _as_points(y0, d)
    if len(x0) != len(y0):
        return OracleValue(0.0, 0.0)
    if len(x0) > spec.n_max:
        raise OracleSizeError("more endpoints than n_max")
    for pts in (x0, y0):
        if len(pts) and not np.all(box0.contains(pts)):
            raise ValueError("endpoints must lie in the inner box")
        if len(pts) >= 2 and not hardcore_admissible(pts, params.potential.core_r):
            raise ValueError("endpoints violate the hard core")
    k_max = min(spec.k_max, params.k_max)
    xi = partition if partition is not None else quad_partition(params, spec)
    num = _rdmk_numerator(params, spec, box0, x0, y0, spec.nodes, k_max)
    num_c = _rdmk_numerator(params, spec, box0, x0, y0, spec.coarse, k_max)
    v = num / xi.value
    err = abs(num - num_c) / xi.value + abs(v) * xi.error / xi.value
    return OracleValue(v, err, {"numerator": num}, dict(xi.grid))


def quad_trace(params, spec: QuadratureSpec, box0: BoxRegion, n_points: int = 24) -> OracleValue:
    """Diagonal integral of the kernel over configurations in a 1-d ``box0`` with at most one point.

    The one-point integrand is smooth between the positions where a hard-core
    zone around the point meets a region edge; panels are split there.
    """
    if params.dim != 1:
        raise OracleSizeError("trace quadrature is implemented for d = 1")
    xi = quad_partition(params, spec)
    r = params.potential.core_r
    a0, b0 = float(box0.lower[0]), float(box0.upper[0])
    edges = [float(params.box.lower[0]), float(params.box.upper[0]), a0, b0]
    cuts = sorted({a0, b0, *[e + s * r for e in edges for s in (-1, 1) if a0 < e + s * r < b0]})
    x, w = leggauss(n_points)
    empty = quad_rdmk(params, spec, box0, np.zeros((0, 1)), np.zeros((0, 1)), xi)
    one = 0.0
    one_err = 0.0
    for c0, c1 in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (c1 - c0)
        for t, wt in zip(half * x + 0.5 * (c0 + c1), half * w):
            f = quad_rdmk(params, spec, box0, [[t]], [[t]], xi)
            one += wt * f.value
            one_err += wt * f.error
    return OracleValue(empty.value + one, empty.error + one_err, {0: empty.value, 1: one}, dict(xi.grid))


def dirichlet_single_particle(box: BoxRegion, beta: float, k: int = 1) -> float:
    """Heat trace ``[sum_m exp(-k beta pi^2 m^2 / (8 L^2))]^d`` of the Dirichlet box."""
    L = box.half_side
    c = k * beta * math.pi**2 / (8.0 * L * L)
    total, m = 0.0, 1
    while True:
        term = math.exp(-c * m * m)
        total += term
        if term < 1e-15 * total:
            break
        m += 1
    return total**box.dim

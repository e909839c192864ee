"""Quadrature oracle values next to a Monte Carlo run on the same small 1-d box."""

import argparse
import math

from loopgas.estimators import OccupationObserver, estimate_partition
from loopgas.geometry import BoxRegion
from loopgas.mcmc import SimulationParams, run_chain
from loopgas.oracle import QuadratureSpec, quad_partition
from loopgas.potential import PotentialModel


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--half-side", type=float, default=1.5)
    ap.add_argument("--core", type=float, default=1.55)
    ap.add_argument("--z", type=float, default=0.3)
    ap.add_argument("--beta", type=float, default=0.5)
    ap.add_argument("--slices", type=int, default=2)
    ap.add_argument("--sweeps", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=3)
    a = ap.parse_args()
    p = SimulationParams(BoxRegion.centered(1, a.half_side), a.z, a.beta, PotentialModel.hard_core(a.core),
                         a.slices, sweeps=a.sweeps, seed=a.seed)
    for n in (4, 8, 12, 16):
        v = quad_partition(p, QuadratureSpec(nodes=n))
        print(f"nodes={n:2d}  Xi={v.value:.12f}  error estimate={v.error:.2e}")
    occ = OccupationObserver(2)
    run_chain(p, [occ])
    xi, err = estimate_partition(occ)
    print(f"MC Xi={xi:.5f} +- {err:.5f}  ({abs(xi - v.value) / math.hypot(err, v.error):.2f} sigma)")
    for n in range(3):
        acc = occ.acc[f"P(N={n})"]
        ref = v.terms[n] / v.value
        print(f"P(N={n}) MC={acc.mean:.5f} +- {acc.stderr:.5f}  oracle={ref:.5f}")


if __name__ == "__main__":
    main()

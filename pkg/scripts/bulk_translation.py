"""Densities of a row of adjacent bulk cells in a 2-d hard-core box."""

import argparse

import numpy as np

from loopgas.estimators import DensityObserver
from loopgas.geometry import BoxRegion
from loopgas.mcmc import SimulationParams, run_chain
from loopgas.potential import PotentialModel


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--half-side", type=float, default=4.0)
    ap.add_argument("--z", type=float, default=0.4)
    ap.add_argument("--beta", type=float, default=1.0)
    ap.add_argument("--core", type=float, default=0.5)
    ap.add_argument("--cell", type=float, default=0.5, help="cell side")
    ap.add_argument("--sweeps", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=5)
    a = ap.parse_args()
    p = SimulationParams(BoxRegion.centered(2, a.half_side), a.z, a.beta, PotentialModel.hard_core(a.core), 4,
                         k_max=2, sweeps=a.sweeps, steps_per_sweep=20, burn_in=200, seed=a.seed)
    h = a.cell / 2
    xs = np.arange(-a.half_side + h, a.half_side, a.cell)
    ob = DensityObserver([BoxRegion((float(x), 0.0), h) for x in xs])
    run_chain(p, [ob])
    print("x\tdensity\tstderr")
    for x, lab in zip(xs, ob.labels):
        print(f"{x:+.2f}\t{ob.acc[lab].mean:.4f}\t{ob.acc[lab].stderr:.4f}")


if __name__ == "__main__":
    main()

"""Frozen reference values from the deterministic quadrature (16 nodes).

Oracle box: half-side 1.5, hard core r = 1.55, z = 0.3, beta = 0.5, M = 2,
k_max = 1; inner box half-side 0.5, smaller box half-side 0.25.
"""

ORACLE_BOX = dict(half_side=1.5, r=1.55, z=0.3, beta=0.5, M=2, k_max=1, inner=0.5, small=0.25)

XI = 1.4745296735010063
P_N = (0.6781823505970411, 0.31198025413208436, 0.009837395270874582)

KERNEL_PAIRS = [
    ((), ()),
    (((0.1,),), ((0.1,),)),
    (((0.1,),), ((-0.2,),)),
    (((-0.2,),), ((0.1,),)),
    (((0.0,),), ((0.15,),)),
]
KERNEL_VALUES = (
    0.8840675440279383,
    0.11492842624623177,
    0.10490467526734594,
    0.10490467526734594,
    0.11222956146662655,
)

# second box: half-side 1.0, r = 1.05, other parameters as above
XI_SMALL = 1.294927087876069
P_N_SMALL = (0.7722442517131938, 0.22454335080147614, 0.003212397485330129)

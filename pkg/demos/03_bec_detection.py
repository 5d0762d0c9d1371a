"""Condensation shows up as the eigenvalue 1/2 of S.

The thermal state on balls of Z^3 with condensate weight D > 0 develops an
S-eigenvalue approaching 1/2 whose eigenvector is carried by the condensate
functional.  Without the condensate the gap to 1/2 shrinks with the ball but
levels off at a positive floor (about 0.026 by radius 14).
"""
from bosegraph.graphs import lattice
from bosegraph.spectral import transience_test
from bosegraph.structure import bec_detect

z3 = transience_test(lattice(3))
for D in (1.0, 0.0):
    rep = bec_detect(lattice(3), beta=1.0, D=D, radii=(4, 6, 8), transience=z3)
    gaps = [f"{e['gap_to_half']:.2e}" for e in rep.filtration_trend]
    print(f"D={D}: verdicts {rep.verdicts}  BEC={rep.bec['bec']}")
    print(f"       gap to 1/2 along r=4,6,8: {gaps}")
    if rep.eigvec_half:
        print(f"       q-localization of the central vector: {rep.eigvec_half['q_localization']:.4f}")

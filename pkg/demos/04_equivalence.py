"""Quasi-equivalence versus disjointness for condensed components.

Components of the condensed state differ by offsets proportional to the
condensate functional.  On growing balls the dual norm of the offset
difference grows roughly linearly in the radius, which certifies
disjointness; the same component against itself is quasi-equivalent.
"""
import numpy as np

from bosegraph.ccr import DoubledSpace, StateModel
from bosegraph.decomposition import component_family_graph
from bosegraph.equivalence import coherent_quasi_equiv, hs_distance
from bosegraph.graphs import lattice
from bosegraph.spectral import transience_test

# two thermal states at nearby temperatures: a small Hilbert-Schmidt distance
h = np.array([0.3, 1.0, 2.5])
st = lambda beta: StateModel.from_space(DoubledSpace(np.eye(3), np.diag(1 / np.expm1(beta * h)),
                                                     np.zeros(3)))
print("HS distance beta=2 vs 2.01:", hs_distance(st(2.0), st(2.01))[0])

N = transience_test(lattice(3)).norm_extrapolated
fam = component_family_graph(lattice(3), beta=1.0, D=1.0, radii=(3, 6, 9), norm_estimate=N)
a, b = fam.component((1.0, 0.0)), fam.component((0.0, 1.0))
v = coherent_quasi_equiv(a, b)
print("s=(1,0) vs (0,1):", v.verdict, "lambda gaps", np.round(v.lambda_gap, 3).tolist())
print("s=(1,0) vs itself:", coherent_quasi_equiv(a, a).verdict)

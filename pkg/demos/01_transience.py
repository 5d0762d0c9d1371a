"""Is the adjacency operator transient?  Green's functions on growing balls.

Condensation needs the resolvent of the adjacency matrix to stay finite at
the top of the spectrum.  We compare the line (recurrent), the cubic
lattice (transient, with Watson's value at the edge) and the 3-regular tree.
"""
from bosegraph.graphs import build_truncation, lattice, regular_tree
from bosegraph.spectral import pf_weight, spectral_norm, transience_test

for spec, kw in [(lattice(1), {}), (lattice(3), {}), (regular_tree(3), {"radii": range(7, 14)})]:
    rep = transience_test(spec, **kw)
    print(f"{spec.label:>16}: {rep.verdict:<12} N ~ {rep.norm_extrapolated:.6f}  "
          f"G_edge ~ {rep.extrapolated_edge_value:.5f}")

# finite balls never reach the norm of the infinite graph
for r in (4, 8, 12):
    print(f"  ||A|| on the radius-{r} ball of Z^3: {spectral_norm(build_truncation(lattice(3), r)).value:.5f}")

# the Perron-Frobenius weight at the edge: constant on the lattice, decaying on the tree
g = build_truncation(regular_tree(3), 5)
v = pf_weight(g, 2 * 2**0.5).values
print("tree PF weight by depth:", [round(float(v[g.depth == k][0]), 4) for k in range(6)])

"""Splitting a condensed state into a Gaussian mixture of factor states.

The central eigenspace of S (eigenvalue 1/2) carries the condensate.  The
state is an average of coherent components over a Gaussian measure, which
Gauss-Hermite quadrature reproduces to roundoff.  The same identity holds
in the graph parametrisation with unit Gaussians.
"""
import numpy as np

from bosegraph.ccr import DoubledSpace, StateModel
from bosegraph.decomposition import (central_eigenspace, component_state, graph_change_of_variables,
                                     graph_mixture_check, mixture_check)
from bosegraph.graphs import lattice
from bosegraph.structure import classify, graph_state

rng = np.random.default_rng(0)
probes = [rng.normal(size=3) + 1j * rng.normal(size=3) for _ in range(50)]

# two thermal modes and one mode carrying only the condensate
sp = DoubledSpace(np.diag([1.0, 2.0, 0.0]), np.diag([0.4, 0.1, 0.0]), [0.0, 0.0, 1.0], D=1.5)
state = StateModel.from_space(sp, label="toy")
cert = central_eigenspace(state)
print("central basis size:", cert.size, "active coordinates:", cert.active_coordinates)
print("mixture error:", mixture_check(cert, probes)["max_error"])
comp = component_state(cert, [0.5, 0.0, -0.3, 0.0])
print("component verdicts:", classify(comp).verdicts)
print("change of variables residuals:",
      {k: v for k, v in graph_change_of_variables(cert).items() if k != "T"})

g_state = graph_state(lattice(3), 6, beta=1.0, D=1.0, norm_estimate=6.000004)
g_probes = [rng.normal(size=g_state.n) / g_state.n**0.5 for _ in range(20)]
print("graph mixture error (Z^3, r=6):", graph_mixture_check(g_state, g_probes)["max_error"])

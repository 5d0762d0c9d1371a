"""Quasi-free and coherent states on a small doubled space.

A state is fixed by its covariance form.  The operator S it induces has
spectrum in [0, 1], symmetric under s -> 1 - s; Weyl values are Gaussian
and every Weyl matrix is positive semidefinite.  Corrupting the covariance
breaks positivity, and the checks notice.
"""
import numpy as np

from bosegraph.ccr import (DoubledSpace, InvariantViolation, StateModel, corrupt_state,
                           s_operator, weyl_positivity_check, weyl_value)

rng = np.random.default_rng(1)
Gh = np.diag([1.0, 1.0, 2.0])
G0 = np.diag([0.2, 1.5, 0.0])
state = StateModel.from_space(DoubledSpace(Gh, G0, [1.0, 0.0, 0.5], D=0.8), label="demo")
ev = np.linalg.eigvalsh(s_operator(state))
print("S spectrum:", np.round(ev, 6))
print("pairing residual:", np.max(np.abs(np.sort(ev) - np.sort(1 - ev))))

c = np.array([0.3, -0.2j, 0.1])
print("phi(W(f)) =", weyl_value(state, c))
coh = state.with_offset(rng.normal(size=6), label="coherent")
print("coherent phi(W(f)) =", weyl_value(coh, c), "(same modulus, shifted phase)")

vecs = [rng.normal(size=3) + 1j * rng.normal(size=3) for _ in range(6)]
print("min Weyl-matrix eigenvalue:", weyl_positivity_check(state, vecs))
bad = corrupt_state(state, c)
print("after corruption:", weyl_positivity_check(bad, [np.zeros(3), c] + vecs[:2]))
try:
    s_operator(bad)
except InvariantViolation as exc:
    print("s_operator refuses:", exc)

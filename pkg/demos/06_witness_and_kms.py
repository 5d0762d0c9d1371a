"""Why the condensate functional is discontinuous, and the KMS checks.

Vectors f_n = f - P_n(H) f with P_n(0) = 1 converge to f in the thermal
norm while their pairing with the Perron-Frobenius weight stays close to
the truncation bound.  The degree-n Taylor polynomial of exp(-n x) blows
up on the spectrum of H, so a Chebyshev approximant is shown alongside.
"""
from bosegraph.decomposition import discontinuity_witness, kms_residual
from bosegraph.graphs import lattice

N = 6.000004
for method in ("taylor", "minimax"):
    rep = discontinuity_witness(lattice(3), beta=1.0, radius=6, norm_estimate=N, method=method,
                                n_values=[5, 20, 40, 60])
    print(method)
    for n, rel, p, b in zip(rep.n_values, rep.relative_s_norm, rep.pairing, rep.pairing_bound):
        print(f"  n={n:>2}  ||f_n - f||/||f|| = {rel:.2e}  |<v, f_n>| = {p:.4e} <= {b:.4e}")

kms = kms_residual(lattice(3), beta=1.0, radii=(4, 6, 8), norm_estimate=N)
print("KMS mode residual:", max(kms.mode_residual), " two-point:", max(kms.two_point_residual))
print("condensate invariance residual by radius:", [round(x, 4) for x in kms.invariance_residual])

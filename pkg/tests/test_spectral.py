from fractions import Fraction
from math import factorial

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from bosegraph.graphs import build_truncation, edge_list, lattice, regular_tree
from bosegraph.spectral import (SingularOccupationError, SpectralCalculus, bose_factor,
                                bose_occupation, compensated_horner, exp_betaH, exp_itH,
                                fit_power_tail, greens_function, matrix_function, pf_weight,
                                polynomial, richardson, spectral_norm, transience_test)


def watson(d, lam):
    """Lattice Green's function at the origin, int_0^inf exp(-lam t) I_0(2t)^d dt."""
    f = lambda t: np.exp(-(lam - 2 * d) * t) * special.ive(0, 2 * t) ** d
    return integrate.quad(f, 0, np.inf, limit=500)[0]


def tree_green(d, lam):
    return 2 * (d - 1) / ((d - 2) * lam + d * np.sqrt(lam**2 - 4 * (d - 1)))


def radial_chain_green(d, r, lam):
    off = np.array([np.sqrt(d)] + [np.sqrt(d - 1)] * (r - 1))
    J = np.diag(off, 1) + np.diag(off, -1)
    return np.linalg.inv(lam * np.eye(r + 1) - J)[0, 0]


@pytest.mark.parametrize("r", [1, 3, 10, 25])
def test_path_norm(r):
    g = build_truncation(lattice(1), r)
    n = 2 * r + 1
    assert spectral_norm(g).value == pytest.approx(2 * np.cos(np.pi / (n + 1)), abs=1e-9)


def test_norm_matches_dense_eigensolver():
    g = build_truncation(regular_tree(3), 5)
    top = np.linalg.eigvalsh(g.adjacency.toarray()).max()
    assert spectral_norm(g, tol=1e-12).value == pytest.approx(top, abs=1e-10)


def test_watson_oracle_self_check():
    # Z^1 closed form and the classical Z^3 value
    assert watson(1, 3.0) == pytest.approx(1 / np.sqrt(5.0), rel=1e-10)
    assert watson(3, 6.0) == pytest.approx(0.2527310, abs=1e-6)


@pytest.mark.parametrize("lam", [2.5, 3.0, 4.0])
def test_lattice1_green_vs_closed_form(lam):
    # far from the edge the ball Green's function converges exponentially in r
    g = build_truncation(lattice(1), 60)
    assert greens_function(g, (0,), lam) == pytest.approx(1 / np.sqrt(lam**2 - 4), rel=1e-10)


def test_lattice3_green_away_from_edge_vs_watson():
    g = build_truncation(lattice(3), 14)
    assert greens_function(g, (0, 0, 0), 7.5) == pytest.approx(watson(3, 7.5), rel=1e-6)


@pytest.mark.parametrize("r", [2, 5, 9])
def test_tree_ball_green_exact(r):
    g = build_truncation(regular_tree(3), r)
    lam = 2 * np.sqrt(2)
    exact = np.sqrt(2) * (r + 1) / (r + 4)
    assert greens_function(g, (), lam) == pytest.approx(exact, rel=1e-10)
    assert radial_chain_green(3, r, lam) == pytest.approx(exact, rel=1e-10)


def test_tree_green_limit_from_radial_chain():
    # the radial chain reaches radius 400; the ball itself would not fit in memory
    for lam in (3.0, 2 * np.sqrt(2) + 1e-3):
        assert radial_chain_green(3, 400, lam) == pytest.approx(tree_green(3, lam), rel=1e-6)
    assert tree_green(3, 2 * np.sqrt(2)) == pytest.approx(np.sqrt(2))


def test_transience_verdicts():
    rec = transience_test(lattice(1))
    assert rec.verdict == "recurrent"
    tr = transience_test(lattice(3))
    assert tr.verdict == "transient"
    assert tr.extrapolated_edge_value == pytest.approx(0.2527310, rel=0.02)
    assert tr.norm_extrapolated == pytest.approx(6.0, abs=1e-4)
    d = tr.to_dict()
    assert d["schema_version"] == 1 and d["verdict"] == "transient"
    assert tr.green_csv().splitlines()[0].startswith("radius")


def test_transience_input_checks():
    with pytest.raises(ValueError):
        transience_test(lattice(3), radii=(8, 6, 10))
    with pytest.raises(ValueError):
        transience_test(lattice(3), offsets=(1e-3, 1e-2, 1e-4))


def test_power_fit_and_richardson_recover_model():
    x = np.geomspace(1e-4, 1e-1, 9)
    y = 2.0 - 3.0 * x**0.5
    fit = fit_power_tail(x, y)
    assert fit.a == pytest.approx(2.0, abs=1e-8)
    assert fit.c == pytest.approx(0.5, abs=1e-6)
    r = np.array([8.0, 12.0, 16.0, 20.0])
    assert richardson(r, 6.0 - 5.0 / r**2 + 7.0 / r**3, (2, 3)) == pytest.approx(6.0, abs=1e-10)


def test_pf_weight_lattice_is_constant():
    g = build_truncation(lattice(3), 5)
    pf = pf_weight(g, 6.0)
    np.testing.assert_allclose(pf.values, 1.0, atol=1e-10)
    assert pf.residual < 1e-9


def test_pf_weight_tree_profile():
    d = 3
    g = build_truncation(regular_tree(d), 7)
    pf = pf_weight(g, 2 * np.sqrt(d - 1))
    k = g.depth
    profile = (d - 1.0) ** (-k / 2) * (1 + k * (d - 2) / d)
    np.testing.assert_allclose(pf.values, profile, rtol=1e-9)
    assert pf.to_dict()["normalization"] == "v(root) = 1"


def test_pf_weight_rescaling_is_condensate_rescaling():
    # rescaling v by c is equivalent to D -> c^2 D in the two-point function
    from bosegraph.ccr import DoubledSpace, delta_subspace

    g = build_truncation(regular_tree(3), 4)
    N = 2 * np.sqrt(2) + 1e-9
    calc = SpectralCalculus(g, N)
    v = pf_weight(g, N).values
    sub = delta_subspace(g)
    a = DoubledSpace.from_graph(sub, calc, 1.0, 3.0 * v, 0.5)
    b = DoubledSpace.from_graph(sub, calc, 1.0, v, 4.5)
    np.testing.assert_allclose(a.M, b.M, atol=1e-12)


def test_pf_weight_closed_graph_uses_top_eigenvector():
    g = build_truncation(edge_list([(0, 1), (1, 2), (2, 0)]), 2)
    pf = pf_weight(g, 2.0)
    np.testing.assert_allclose(pf.values, 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 25), st.floats(0.0, 0.25))
def test_compensated_horner_matches_exact_rationals(n, x):
    coeffs = [(-n) ** k / factorial(k) for k in range(n + 1)]
    exact = sum(Fraction(c) * Fraction(x) ** k for k, c in enumerate(coeffs))
    got = compensated_horner(coeffs, np.array([x]))[0]
    scale = sum(abs(Fraction(c)) * Fraction(x) ** k for k, c in enumerate(coeffs))
    assert abs(Fraction(got) - exact) <= 1e-15 * scale + Fraction(1, 10**300)


def test_bose_factor_small_argument():
    h = np.array([1e-12, 1e-6, 1.0])
    np.testing.assert_allclose(bose_factor(h, 2.0), 1 / np.expm1(2.0 * h), rtol=1e-14)
    assert bose_factor(1e-12, 1.0) == pytest.approx(1e12, rel=1e-6)


@pytest.mark.parametrize("f", [exp_itH(0.7), exp_betaH(0.3), polynomial([1.0, -0.5, 0.02])])
def test_dense_calculus_vs_scipy(f):
    g = build_truncation(lattice(2), 4)
    N = 4.0
    H = N * np.eye(g.n) - g.adjacency.toarray()
    if f.kind == "exp_itH":
        ref = sla.expm(1j * f.param * H)
    elif f.kind == "exp_betaH":
        ref = sla.expm(f.param * H)
    else:
        ref = sum(c * np.linalg.matrix_power(H, k) for k, c in enumerate(f.param))
    calc = SpectralCalculus(g, N)
    np.testing.assert_allclose(calc.matrix(f), ref, atol=1e-10 * np.abs(ref).max())
    v = np.random.default_rng(0).normal(size=g.n)
    np.testing.assert_allclose(matrix_function(g, f, v, N), ref @ v, atol=1e-9 * np.abs(ref).max())


@pytest.mark.parametrize("f", [exp_itH(1.3), exp_betaH(0.2), polynomial([0.3, 1.0, 0.1, -0.01])])
def test_chebyshev_path_matches_dense(f):
    g = build_truncation(lattice(3), 4)
    v = np.random.default_rng(1).normal(size=g.n)
    dense = SpectralCalculus(g, 6.0).apply(f, v)
    cheb = SpectralCalculus(g, 6.0, dense_max=0).apply(f, v)
    np.testing.assert_allclose(cheb, dense, atol=1e-11 * np.abs(dense).max())


def test_bose_occupation_thermal_matrix():
    g = build_truncation(lattice(1), 3)
    calc = SpectralCalculus(g, 2.0)
    H = 2.0 * np.eye(g.n) - g.adjacency.toarray()
    n = calc.matrix(bose_occupation(1.5))
    np.testing.assert_allclose(n @ (sla.expm(1.5 * H) - np.eye(g.n)), np.eye(g.n), atol=1e-10)


def test_occupation_refuses_zero_mode():
    # closed triangle with N equal to its norm: H has a zero eigenvalue
    g = build_truncation(edge_list([(0, 1), (1, 2), (2, 0)]), 2)
    calc = SpectralCalculus(g, 2.0)
    with pytest.raises(SingularOccupationError):
        calc.matrix(bose_occupation(1.0))
    with pytest.raises(SingularOccupationError):
        calc.apply(bose_occupation(1.0), np.ones(3))
    # a vector orthogonal to the zero mode is fine
    out = calc.apply(bose_occupation(1.0), np.array([1.0, -1.0, 0.0]))
    np.testing.assert_allclose(out, np.array([1.0, -1.0, 0.0]) / np.expm1(3.0), atol=1e-12)

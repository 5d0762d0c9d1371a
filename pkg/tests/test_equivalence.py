import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from bosegraph.ccr import DoubledSpace, StateModel
from bosegraph.equivalence import (coherent_quasi_equiv, hs_distance, kernel_agreement,
                                   lambda_gap, topology_bounds)

from factories import real_space


def sqrtm_distance(s1, s2):
    """||K1^{1/2} (sqrt(S1) - sqrt(S2)) K1^{-1/2}||_F with S = K^{-1} F as an operator."""
    K1, K2 = s1.gram(), s2.gram()
    A = sla.sqrtm(np.linalg.solve(K1, s1.form_matrix()))
    B = sla.sqrtm(np.linalg.solve(K2, s2.form_matrix()))
    R = sla.sqrtm(K1)
    return np.linalg.norm(R @ (A - B) @ np.linalg.inv(R))


def thermal(nbar, D=0.0, q=None):
    n = len(nbar)
    q = np.zeros(n) if q is None else q
    return StateModel.from_space(DoubledSpace(np.eye(n), np.diag(nbar), q, D))


def test_identical_states_have_zero_distance():
    st_ = thermal([0.2, 1.0], D=0.5, q=[1.0, 1.0])
    assert hs_distance(st_, st_) == [0.0]
    assert topology_bounds(st_, st_) == (1.0, 1.0)


def test_thermal_pair_matches_per_mode_formula():
    beta, h = 2.0, np.array([0.3, 1.0, 2.5])
    n1, n2 = 1 / np.expm1(beta * h), 1 / np.expm1((beta + 1e-4) * h)
    got = hs_distance(thermal(n1), thermal(n2))[0]
    # each mode contributes S-eigenvalues (1 +- a)/2 with a = 1/(1 + 2 nbar)
    a1, a2 = 1 / (1 + 2 * n1), 1 / (1 + 2 * n2)
    expect = 0.0
    for sgn in (1, -1):
        expect += np.sum((np.sqrt(0.5 * (1 + sgn * a1)) - np.sqrt(0.5 * (1 + sgn * a2))) ** 2)
    assert got == pytest.approx(np.sqrt(expect), rel=1e-8)


def test_rank_one_perturbation_vs_sqrtm():
    rng = np.random.default_rng(2)
    sp = real_space(rng, 2, D=0.0)
    u = rng.normal(size=2)
    a = StateModel.from_space(sp)
    b = StateModel.from_space(DoubledSpace(sp.gram_h, sp.gram_0, u, 0.4))
    assert hs_distance(a, b)[0] == pytest.approx(sqrtm_distance(a, b), rel=1e-8)
    assert hs_distance(b, a)[0] == pytest.approx(sqrtm_distance(b, a), rel=1e-8)


def same_gram_states(rng, n, k):
    """States sharing M = Gh/2 + G0, so all distances use one inner product."""
    X = rng.normal(size=(n, n))
    M = X @ X.T / n + np.eye(n)
    out = []
    for _ in range(k):
        Y = rng.normal(size=(n, n))
        Gh = Y @ Y.T / n
        Gh *= 1.8 / sla.eigh(Gh, M, eigvals_only=True).max()  # keeps G0 >= 0
        out.append(StateModel.from_space(DoubledSpace(Gh, M - 0.5 * Gh, np.zeros(n))))
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_triangle_inequality_and_symmetry(seed, n):
    a, b, c = same_gram_states(np.random.default_rng(seed), n, 3)
    ab, bc, ac = (hs_distance(x, y)[0] for x, y in ((a, b), (b, c), (a, c)))
    assert ac <= ab + bc + 1e-9
    assert hs_distance(b, a)[0] == pytest.approx(ab, abs=1e-9)
    assert ab == pytest.approx(sqrtm_distance(a, b), abs=1e-8)


def test_lambda_gap_is_dual_norm():
    rng = np.random.default_rng(4)
    sp = real_space(rng, 5)
    off = rng.normal(size=10)
    a, b = StateModel.from_space(sp), StateModel.from_space(sp, off)
    M = sp.M
    alpha, beta = off[:5], off[5:]
    expect = 0.5 * np.sqrt(alpha @ np.linalg.solve(M, alpha) + beta @ np.linalg.solve(M, beta))
    assert lambda_gap(a, b) == pytest.approx(expect, rel=1e-12)
    # the general probe route agrees
    probes = list(np.eye(5))
    assert lambda_gap(a, b, probes=probes) == pytest.approx(expect, rel=1e-10)
    # the maximiser attains it and random directions stay below
    x, y = np.linalg.solve(M, alpha), np.linalg.solve(M, beta)
    c = x + 1j * y
    ratio = lambda c: abs(alpha @ c.real + beta @ c.imag) / np.sqrt(4 * np.real(np.vdot(c, M @ c)))
    assert ratio(c) == pytest.approx(expect, rel=1e-12)
    for _ in range(50):
        assert ratio(rng.normal(size=5) + 1j * rng.normal(size=5)) <= expect * (1 + 1e-12)


def offset_filtration(sizes, coeff):
    """Fock states on growing spaces; the second carries offset coefficients coeff(n)."""
    f1, f2 = [], []
    for n in sizes:
        sp = DoubledSpace(np.eye(n), np.zeros((n, n)), np.zeros(n))
        f1.append(StateModel.from_space(sp, label="fock"))
        f2.append(StateModel.from_space(sp, np.concatenate([coeff(n), np.zeros(n)]),
                                        label="shifted"))
    return f1, f2


def test_square_summable_offset_is_quasi_equivalent():
    f1, f2 = offset_filtration((4, 8, 16), lambda n: 2.0 ** -np.arange(n))
    v = coherent_quasi_equiv(f1, f2)
    assert v.verdict == "quasi_equivalent"
    assert v.hs_norms == [0.0, 0.0, 0.0]
    # M = I/2 so the gap is |alpha| / sqrt(2)
    assert v.lambda_gap[-1] == pytest.approx(np.linalg.norm(2.0 ** -np.arange(16)) / np.sqrt(2))
    assert coherent_quasi_equiv(f2, f1).verdict == "quasi_equivalent"


def test_non_summable_offset_is_disjoint():
    f1, f2 = offset_filtration((2, 8, 32), lambda n: np.ones(n))
    v = coherent_quasi_equiv(f1, f2)
    assert v.verdict == "disjoint" and v.trends["lambda"] == "divergent"
    np.testing.assert_allclose(v.lambda_gap, np.sqrt([2, 8, 32]) / np.sqrt(2))
    assert coherent_quasi_equiv(f2, f1).verdict == "disjoint"
    assert v.to_dict()["schema_version"] == 1


def test_slow_growth_is_inconclusive():
    f1, f2 = offset_filtration((4, 5, 6), lambda n: np.ones(n))
    v = coherent_quasi_equiv(f1, f2)
    assert v.verdict == "inconclusive" and v.notes


def test_kernel_mismatch_is_detected():
    # an explicit zero form has a fully degenerate induced inner product
    sp = DoubledSpace([[1.0]], [[0.0]], [0.0])
    a, b = StateModel.from_space(sp), StateModel(sp, np.zeros((2, 2)))
    ok, info = kernel_agreement(a, b)
    assert not ok and info["kernel_dims"] == [0, 2]

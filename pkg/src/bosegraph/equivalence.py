"""Quasi-equivalence and disjointness of quasi-free and coherent states.

The four conditions are evaluated index by index along a filtration:

1. the two inner products induce equivalent topologies (the extreme
   generalised eigenvalues of the two Gram matrices stay bounded);
2. the square roots of the two covariance operators differ by a
   Hilbert-Schmidt operator (the Frobenius distances stay bounded);
3. the kernels of the two inner products agree and the offsets coincide
   on them;
4. the offset difference is continuous (its dual norm over the probe span
   stays bounded).

Growth by at least ``growth_factor`` over the trend window counts as
divergence and certifies disjointness; a trend that neither stabilises nor
diverges gives ``inconclusive``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from ._io import SCHEMA_VERSION, plain
from .ccr import CCRError, StateModel, _orthonormalizer, real_embedding

__all__ = [
    "EquivalenceVerdict",
    "topology_bounds",
    "hs_distance",
    "lambda_gap",
    "kernel_agreement",
    "coherent_quasi_equiv",
]


def _as_list(x) -> list:
    return [x] if isinstance(x, StateModel) else list(x)


def _blocks(state: StateModel):
    """``(K, F)`` pairs whose direct sum is the doubled Gram/form data."""
    if state.derived:
        sp_ = state.space
        M = sp_.M
        half = 0.5 * sp_.gram_h
        return [(M, 0.5 * (M + half)), (M, 0.5 * (M - half))]
    return [(state.gram(), state.form_matrix())]


def _pair_blocks(s1: StateModel, s2: StateModel):
    if s1.n != s2.n:
        raise CCRError("states must share the test subspace")
    if s1.derived and s2.derived:
        return list(zip(_blocks(s1), _blocks(s2)))
    return [((s1.gram(), s1.form_matrix()), (s2.gram(), s2.form_matrix()))]


def _same_covariance(s1: StateModel, s2: StateModel) -> bool:
    if s1.derived and s2.derived:
        a, b = s1.space, s2.space
        return a is b or (a.D == b.D and np.array_equal(a.gram_h, b.gram_h)
                          and np.array_equal(a.gram_0, b.gram_0)
                          and np.array_equal(a.q_values, b.q_values))
    return np.array_equal(s1.form_matrix(), s2.form_matrix()) and np.array_equal(
        s1.space.gram_h, s2.space.gram_h)


def topology_bounds(s1: StateModel, s2: StateModel) -> tuple[float, float]:
    """Best constants with ``c_low ||x||_1^2 <= ||x||_2^2 <= c_high ||x||_1^2``."""
    if _same_covariance(s1, s2):
        return 1.0, 1.0
    lo, hi = np.inf, 0.0
    for (K1, _), (K2, _) in _pair_blocks(s1, s2):
        W, dropped = _orthonormalizer(K1)
        w = np.linalg.eigvalsh(W.conj().T @ K2 @ W)
        lo, hi = min(lo, float(w[0])), max(hi, float(w[-1]))
    return lo, hi


def _psd_sqrt(T):
    w, U = np.linalg.eigh(0.5 * (T + T.conj().T))
    w = np.where(w < 0, 0.0, w)  # clamp: negatives are roundoff (checked upstream)
    return (U * np.sqrt(w)) @ U.conj().T


def _hs_single(s1: StateModel, s2: StateModel, guard: float) -> float:
    if _same_covariance(s1, s2):
        return 0.0
    total = 0.0
    for (K1, F1), (K2, F2) in _pair_blocks(s1, s2):
        W, _ = _orthonormalizer(K1)
        T1 = W.conj().T @ F1 @ W
        K2r = W.conj().T @ K2 @ W
        F2r = W.conj().T @ F2 @ W
        w = np.linalg.eigvalsh(K2r)
        if w[0] <= 0 or w[-1] / w[0] > guard:
            return float("nan")
        L2 = np.linalg.cholesky(K2r)
        L2inv = sla.solve_triangular(L2, np.eye(L2.shape[0]), lower=True)
        T2 = L2inv @ F2r @ L2inv.conj().T
        X = L2inv.conj().T  # maps the state-2 orthonormal frame into the reference frame
        D = _psd_sqrt(T1) - X @ _psd_sqrt(T2) @ np.linalg.inv(X)
        total += float(np.sum(np.abs(D) ** 2))
    return float(np.sqrt(total))


def hs_distance(filtration1, filtration2, guard: float = 1e12) -> list:
    """Hilbert-Schmidt distance of covariance square roots per filtration index.

    Norms are taken in the inner product of the first state.  Square roots
    use a symmetric eigendecomposition with negative eigenvalues clamped to
    zero.  When the second inner product is degenerate or its condition
    relative to the first exceeds ``guard`` the entry is ``nan`` (skipped).

    Examples
    --------
    >>> from bosegraph.ccr import DoubledSpace, StateModel
    >>> st = StateModel.from_space(DoubledSpace([[1.0]], [[0.3]], [0.0]))
    >>> hs_distance(st, st)
    [0.0]
    """
    f1, f2 = _as_list(filtration1), _as_list(filtration2)
    if len(f1) != len(f2):
        raise CCRError("filtrations must have the same length")
    return [_hs_single(a, b, guard) for a, b in zip(f1, f2)]


def _probe_vectors(state: StateModel, probes):
    n = state.n
    if probes is None:
        eye = np.eye(n)
        return np.concatenate([eye, 1j * eye], axis=1)
    P = np.column_stack([np.asarray(p, dtype=complex) for p in probes])
    return np.concatenate([P, 1j * P], axis=1)


def lambda_gap(s1: StateModel, s2: StateModel, probes=None, rel_tol: float = 1e-12) -> float:
    """``sup |lambda_1(f) - lambda_2(f)| / ||f||_1`` over the real span of the probes.

    ``probes`` are one-particle coefficient vectors (the test basis when
    ``None``); their real span includes ``i f`` for every probe ``f``.  The
    supremum is the dual norm ``sqrt(l^T P^+ l)`` with ``P`` the real Gram
    matrix of the probes in the first inner product.
    """
    n = s1.n
    dlam = s1.offset - s2.offset
    if not np.any(dlam):
        return 0.0
    sp_ = s1.space
    if probes is None and s1.derived and sp_.conj is None and not np.iscomplexobj(sp_.M):
        # whole test basis: P = 4 blockdiag(M, M) in (Re c, Im c) coordinates
        cf = sla.cho_factor(sp_.M)
        a, b = dlam[:n], dlam[n:]
        return float(np.sqrt(0.25 * (a @ sla.cho_solve(cf, a) + b @ sla.cho_solve(cf, b))))
    C = _probe_vectors(s1, probes)
    ell = dlam[:n] @ C.real + dlam[n:] @ C.imag
    if not np.any(ell):
        return 0.0
    if s1.derived and sp_.conj is None and not np.iscomplexobj(sp_.M):
        # F(c) = sqrt(2)(c + conj c): Re <F(c), F(c')>_K = 4 Re(c^* M c')
        MC = sp_.M @ C
        P = 4.0 * np.real(C.conj().T @ MC)
    else:
        K = s1.gram()
        F = np.column_stack([real_embedding(sp_, C[:, j]) for j in range(C.shape[1])])
        P = np.real(F.conj().T @ K @ F)
    w, U = np.linalg.eigh(0.5 * (P + P.T))
    keep = w > rel_tol * max(w.max(), 1e-300)
    coeff = U[:, keep].T @ ell
    return float(np.sqrt(np.sum(coeff**2 / w[keep])))


def kernel_agreement(s1: StateModel, s2: StateModel, null_tol: float = 1e-12,
                     tol: float = 1e-9) -> tuple[bool, dict]:
    """Certificate that the null spaces coincide and the offsets agree on them."""
    info = {}
    nulls = []
    for s in (s1, s2):
        K = s.gram() if not s.derived else None
        if K is None:
            # derived covariances have strictly positive Gram (construction check)
            nulls.append(np.zeros((2 * s.n, 0)))
            continue
        w, U = np.linalg.eigh(K)
        nulls.append(U[:, w <= null_tol * max(w.max(), 1e-300)])
    N1, N2 = nulls
    info["kernel_dims"] = [N1.shape[1], N2.shape[1]]
    if N1.shape[1] != N2.shape[1]:
        return False, info
    if N1.shape[1] == 0:
        info["status"] = "both kernels trivial"
        return True, info
    # same subspace iff projecting one basis onto the other loses nothing
    resid = np.linalg.norm(N1 - N2 @ (N2.conj().T @ N1))
    info["subspace_residual"] = float(resid)
    J = s1.space.gamma_matrix()
    n = s1.n
    worst = 0.0
    for k in range(N1.shape[1]):
        x = N1[:, k]
        r = 0.5 * (x + J @ x.conj())  # real part of the null vector
        if np.linalg.norm(r) < 1e-12:
            r = 0.5j * (x - J @ x.conj())
        c = r[:n] / np.sqrt(2.0)
        worst = max(worst, abs(s1.lam(c) - s2.lam(c)))
    info["offset_mismatch_on_kernel"] = worst
    return bool(resid < 1e-8 and worst < tol), info


@dataclass
class EquivalenceVerdict:
    pair: dict
    topology_bounds: list
    hs_norms: list
    lambda_gap: list
    kernel_agreement: bool
    verdict: str
    lambda_gap_sup: float = 0.0
    trends: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return plain(d)


def _trend(values, window, growth_factor, abs_tol):
    """Classify a nonnegative sequence as bounded, divergent or unclear."""
    x = np.asarray(values[-window:], dtype=float)
    if len(values) < window:
        return "unclear"
    if np.any(~np.isfinite(x)):
        return "divergent"
    if np.all(x <= abs_tol):
        return "bounded"
    inc = np.diff(x)
    if np.all(inc > 0) and x[-1] >= growth_factor * max(x[0], abs_tol):
        return "divergent"
    if np.all(inc <= abs_tol):
        return "bounded"
    # increments shrinking geometrically: a Cauchy-type trend
    if len(inc) > 1 and np.all(np.abs(inc[1:]) < 0.5 * np.abs(inc[:-1]) + abs_tol):
        return "bounded"
    return "unclear"


def coherent_quasi_equiv(filtration1, filtration2, probes=None, window: int = 3,
                         growth_factor: float = 2.0, abs_tol: float = 1e-10,
                         guard: float = 1e12) -> EquivalenceVerdict:
    """Quasi-equivalence verdict for two states along a shared filtration.

    ``probes`` is ``None`` (test basis), a list of coefficient vectors used
    at every index, or a list of such lists (one per index).

    Examples
    --------
    >>> from bosegraph.ccr import DoubledSpace, StateModel
    >>> st = StateModel.from_space(DoubledSpace([[1.0]], [[0.3]], [0.0]))
    >>> coherent_quasi_equiv(st, st).verdict
    'quasi_equivalent'
    """
    exact = isinstance(filtration1, StateModel) and isinstance(filtration2, StateModel)
    f1, f2 = _as_list(filtration1), _as_list(filtration2)
    if exact:
        f1, f2 = f1 * window, f2 * window
    if len(f1) != len(f2):
        raise CCRError("filtrations must have the same length")
    if probes is not None and len(probes) == len(f1) and all(
            isinstance(p, (list, tuple)) for p in probes):
        per_index = list(probes)
    else:
        per_index = [probes] * len(f1)

    bounds, hs, gaps = [], [], []
    for a, b, pr in zip(f1, f2, per_index):
        lo, hi = topology_bounds(a, b)
        bounds.append((lo, hi))
        hs.append(float("nan") if hi / max(lo, 1e-300) > guard else _hs_single(a, b, guard))
        gaps.append(lambda_gap(a, b, pr))
    kern_ok, kern_info = kernel_agreement(f1[-1], f2[-1])

    cond = [hi / lo if lo > 0 else float("inf") for lo, hi in bounds]
    trends = {
        "topology": _trend([c - 1.0 for c in cond], window, growth_factor, abs_tol),
        "hs": _trend(hs, window, growth_factor, abs_tol),
        "lambda": _trend(gaps, window, growth_factor, abs_tol),
        "kernel": kern_info,
    }
    notes = []
    divergent = [k for k in ("topology", "hs", "lambda") if trends[k] == "divergent"]
    if divergent:
        verdict = "disjoint"
        notes.append("divergence certificate: " + ", ".join(divergent))
    elif not kern_ok:
        verdict = "disjoint"
        notes.append("kernels or offsets on the kernel disagree")
    elif all(trends[k] == "bounded" for k in ("topology", "hs", "lambda")):
        verdict = "quasi_equivalent"
    else:
        verdict = "inconclusive"
        notes.append(f"trend window {window} with growth factor {growth_factor} "
                     "neither stabilised nor diverged")
    return EquivalenceVerdict(
        pair={"first": f1[-1].label, "second": f2[-1].label, "indices": len(f1),
              "exact_models": exact},
        topology_bounds=[list(b) for b in bounds],
        hs_norms=hs,
        lambda_gap=gaps,
        kernel_agreement=kern_ok,
        verdict=verdict,
        lambda_gap_sup=float(np.max(gaps)) if gaps else 0.0,
        trends=trends,
        notes=notes,
        tolerances={"window": window, "growth_factor": growth_factor, "abs_tol": abs_tol,
                    "guard": guard},
    )

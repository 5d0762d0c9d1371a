"""Doubled one-particle spaces, covariance forms and Weyl functionals.

Conventions
-----------
Inner products are antilinear in the first slot.  A test subspace is
spanned by the columns ``b_1, ..., b_n`` of a matrix on the vertex set; the
doubled space has basis ``{b_i + 0, 0 + b_i}`` and coefficient vectors of
length ``2n``.  The two-point functional

    phi(a^*(f) a(g)) = <g, f>_0 + D conj(q(g)) q(f)

enters through ``M = G_h / 2 + G_0 + D conj(q) q^T``: the doubled inner
product is ``blockdiag(M, M)`` and the covariance form is

    S = blockdiag(G_h/2 + G_0/2 + D Q/2,  G_0/2 + D Q/2),

so that ``S(xi, eta) + S(Gamma eta, Gamma xi)`` recovers the inner product
and ``S(xi, eta) - S(Gamma eta, Gamma xi) = blockdiag(G_h/2, -G_h/2)``.
A one-particle vector ``f`` with coefficients ``c`` sits in the real space
as ``F = sqrt(2) (c + C conj(c))`` where ``C`` expresses complex conjugation
in the basis, and

    phi(W(f)) = exp(-S(F, F) / 4 + i lambda(f)).

With this normalisation a Fock vacuum gives ``exp(-|f|^2 / 4)`` and the
Weyl relation reads ``W(F) W(G) = exp(-gamma(F, G) / 4) W(F + G)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ._io import SCHEMA_VERSION, complex_matrix, plain
from .graphs import FiniteGraph
from .spectral import SpectralCalculus, exp_itH

__all__ = [
    "CCRError",
    "InvariantViolation",
    "TestSubspace",
    "delta_subspace",
    "time_evolved_subspace",
    "DoubledSpace",
    "StateModel",
    "two_point",
    "covariance_matrix",
    "s_operator",
    "s_spectrum",
    "real_embedding",
    "weyl_value",
    "weyl_matrix",
    "weyl_positivity_check",
    "corrupt_state",
]


class CCRError(ValueError):
    """Inconsistent or degenerate finite-dimensional CCR data."""


class InvariantViolation(RuntimeError):
    """A structural identity failed beyond tolerance (indicates a bug or bad input)."""


# ---------------------------------------------------------------------------
# test subspaces


@dataclass(frozen=True, eq=False)
class TestSubspace:
    """Span of explicit vectors on a truncation, closed under conjugation.

    ``basis`` holds the vectors as columns in the vertex basis (a sparse
    identity for the span of all delta vectors).  ``conj`` is the matrix
    ``C`` with ``conj(basis) = basis @ C``, ``None`` meaning the identity.
    ``dropped`` lists labels removed as numerically dependent.
    """

    __test__ = False  # not a pytest class

    ambient: FiniteGraph
    basis: np.ndarray
    labels: tuple
    conj: np.ndarray | None = field(repr=False, default=None)
    dropped: tuple = ()
    rank_tol: float = 1e-7

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def is_full_delta(self) -> bool:
        return sp.issparse(self.basis)

    @classmethod
    def from_vectors(cls, g: FiniteGraph, vectors: np.ndarray, labels: Sequence[str],
                     rank_tol: float = 1e-7, close_conjugation: bool = True) -> "TestSubspace":
        """Build a subspace, dropping near-dependent vectors by pivoted QR."""
        V = np.asarray(vectors, dtype=complex)
        if V.ndim != 2 or V.shape[0] != g.n:
            raise CCRError("vectors must be a (n_vertices, k) array")
        labels = list(labels)
        if len(labels) != V.shape[1]:
            raise CCRError("one label per vector required")
        if close_conjugation:
            V = np.hstack([V, V.conj()])
            labels = labels + [f"conj({lab})" for lab in labels]
        norms = np.linalg.norm(V, axis=0)
        if np.any(norms == 0):
            raise CCRError("zero vector in test subspace")
        _, R, piv = sla.qr(V / norms, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > rank_tol * diag[0]))
        keep = np.sort(piv[:rank])
        drop = np.sort(piv[rank:])
        B = V[:, keep]
        C, *_ = np.linalg.lstsq(B, B.conj(), rcond=None)
        res = np.linalg.norm(B @ C - B.conj()) / max(np.linalg.norm(B), 1.0)
        if res > 1e-8:
            raise CCRError(f"subspace is not closed under conjugation (residual {res:.2e})")
        # exact vectors give C = P with P a permutation or identity; clean roundoff
        C = np.where(np.abs(C) < 1e-13, 0.0, C)
        return cls(g, B, tuple(labels[i] for i in keep), C,
                   tuple(labels[i] for i in drop), rank_tol)

    def coordinates(self, vectors) -> tuple[np.ndarray, float]:
        """Least-squares coordinates of vertex-basis vectors and the relative residual."""
        V = np.asarray(vectors)
        if self.is_full_delta:
            return V, 0.0
        V = V.astype(complex)
        X, *_ = np.linalg.lstsq(self.basis, V, rcond=None)
        res = np.linalg.norm(self.basis @ X - V) / max(np.linalg.norm(V), 1e-300)
        return X, float(res)

    def to_dict(self) -> dict:
        return {"radius": self.ambient.radius, "n_vertices": self.ambient.n,
                "labels": list(self.labels), "dropped": list(self.dropped),
                "rank_tol": self.rank_tol}


def delta_subspace(g: FiniteGraph, vertices=None) -> TestSubspace:
    """Span of delta vectors (all vertices by default)."""
    if vertices is None:
        labels = tuple(f"delta:{x}" for x in g.vertices)
        return TestSubspace(g, sp.identity(g.n, format="csr"), labels, None)
    idx = np.array([g.index[x] for x in vertices])
    B = np.zeros((g.n, idx.size), dtype=complex)
    B[idx, np.arange(idx.size)] = 1.0
    labels = [f"delta:{g.vertices[i]}" for i in idx]
    return TestSubspace(g, B, tuple(labels), None)


def time_evolved_subspace(g: FiniteGraph, calc: SpectralCalculus, times: Sequence[float],
                          vertices=None, rank_tol: float = 1e-7) -> TestSubspace:
    """Span of ``exp(itH) delta_x`` over a time grid (conjugates added)."""
    verts = [g.spec.root] if vertices is None else list(vertices)
    E = np.zeros((g.n, len(verts)))
    for k, x in enumerate(verts):
        E[g.index[x], k] = 1.0
    cols, labels = [], []
    for t in times:
        U = calc.apply(exp_itH(t), E)
        for k, x in enumerate(verts):
            cols.append(U[:, k])
            labels.append(f"exp(i*{t!r}*H)delta:{x}")
    return TestSubspace.from_vectors(g, np.column_stack(cols), labels, rank_tol)


# ---------------------------------------------------------------------------
# doubled space


def _freeze(a):
    a = np.array(a)
    if np.iscomplexobj(a) and not np.any(a.imag):
        a = a.real.copy()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DoubledSpace:
    """Gram data of the doubled space over a test subspace.

    ``gram_h[i, j] = <b_i, b_j>``, ``gram_0[i, j] = <b_i, b_j>_0`` and
    ``q_values[i] = q(b_i)``.  ``conj`` is the conjugation matrix of the
    basis (``None`` for the identity, i.e. a real basis); it defaults to the
    one stored on ``subspace``.
    """

    gram_h: np.ndarray
    gram_0: np.ndarray
    q_values: np.ndarray
    D: float = 0.0
    subspace: TestSubspace | None = None
    conj: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        Gh = np.asarray(self.gram_h, dtype=complex)
        G0 = np.asarray(self.gram_0, dtype=complex)
        q = np.asarray(self.q_values, dtype=complex).reshape(-1)
        n = Gh.shape[0]
        if Gh.shape != (n, n) or G0.shape != (n, n) or q.shape != (n,):
            raise CCRError("gram_h, gram_0 and q_values must have matching dimension")
        if not np.isfinite(self.D) or self.D < 0:
            raise CCRError("D must be a nonnegative real")
        for name, G in (("gram_h", Gh), ("gram_0", G0)):
            if np.linalg.norm(G - G.conj().T) > 1e-10 * max(np.linalg.norm(G), 1.0):
                raise CCRError(f"{name} is not Hermitian")
        C = self.conj
        if C is None and self.subspace is not None:
            C = self.subspace.conj
        if C is not None:
            C = _freeze(np.asarray(C, dtype=complex))
            if C.shape != (n, n):
                raise CCRError("conj matrix has the wrong dimension")
        object.__setattr__(self, "gram_h", _freeze(0.5 * (Gh + Gh.conj().T)))
        object.__setattr__(self, "gram_0", _freeze(0.5 * (G0 + G0.conj().T)))
        object.__setattr__(self, "q_values", _freeze(q))
        object.__setattr__(self, "D", float(self.D))
        object.__setattr__(self, "conj", C)

    @property
    def n(self) -> int:
        return self.gram_h.shape[0]

    @property
    def Q(self) -> np.ndarray:
        q = self.q_values
        return np.outer(q.conj(), q)

    @property
    def M(self) -> np.ndarray:
        """One block of the doubled inner product."""
        return 0.5 * self.gram_h + self.gram_0 + self.D * self.Q

    def conj_matrix(self) -> np.ndarray:
        return np.eye(self.n) if self.conj is None else self.conj

    def conj_apply(self, c) -> np.ndarray:
        """Coefficients of ``conj(f)`` for ``f`` with coefficients ``c``."""
        c = np.conj(np.asarray(c))
        return c if self.conj is None else self.conj @ c

    def gamma_matrix(self) -> np.ndarray:
        """Coefficient-space matrix of the antilinear involution (apply to conj(c))."""
        n, C = self.n, self.conj_matrix()
        J = np.zeros((2 * n, 2 * n), dtype=complex)
        J[:n, n:] = C
        J[n:, :n] = C
        return J

    def gamma_form(self) -> np.ndarray:
        Gh = self.gram_h
        return sla.block_diag(0.5 * Gh, -0.5 * Gh)

    def with_D(self, D: float) -> "DoubledSpace":
        return replace(self, D=D)

    @classmethod
    def from_graph(cls, subspace: TestSubspace, calc: SpectralCalculus, beta: float,
                   v: np.ndarray, D: float, regularization: float | None = None) -> "DoubledSpace":
        """Thermal data ``G_0 = B^* n(H) B`` and ``q(b) = <v, b>`` on a truncation."""
        from .spectral import bose_occupation

        occ = bose_occupation(beta, regularization)
        v = np.asarray(v, dtype=float)
        if subspace.is_full_delta:
            G0 = calc.matrix(occ)
            Gh = np.eye(subspace.dim)
            q = v
        else:
            B = subspace.basis
            G0 = B.conj().T @ calc.apply(occ, B)
            Gh = B.conj().T @ B
            q = v @ B
        floor = regularization if regularization is not None else calc.default_regularization()
        meta = {"beta": float(beta), "regularization": float(floor),
                "radius": subspace.ambient.radius, "norm_estimate": calc.N,
                "min_H_eigenvalue": float(calc.h[0]) if calc.dense else None}
        return cls(Gh, G0, q, D, subspace, metadata=meta)

    def to_dict(self) -> dict:
        return plain({
            "n": self.n,
            "D": self.D,
            "gram_h": complex_matrix(self.gram_h),
            "gram_0": complex_matrix(self.gram_0),
            "q_values": complex_matrix(self.q_values),
            "conj": None if self.conj is None else complex_matrix(self.conj),
            "subspace": self.subspace.to_dict() if self.subspace is not None else None,
            "metadata": self.metadata,
        })


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True, eq=False)
class StateModel:
    """Quasi-free (``offset`` zero) or generalised coherent state.

    ``form`` is the ``2n x 2n`` matrix of the covariance form on the doubled
    basis; ``None`` means the form induced by ``space`` (built on demand, so
    large graph states never materialise it unless asked).  ``offset`` is a
    length ``2n`` real vector ``(alpha, beta)`` with
    ``lambda(f) = alpha . Re(c) + beta . Im(c)`` for coefficients ``c``.
    """

    space: DoubledSpace
    form: np.ndarray | None = None
    offset: np.ndarray | None = None
    kind: str = "quasi_free"
    label: str = ""

    def __post_init__(self):
        m = 2 * self.space.n
        if self.form is not None:
            F = np.asarray(self.form, dtype=complex)
            if F.shape != (m, m):
                raise CCRError("form has the wrong dimension")
            object.__setattr__(self, "form", _freeze(0.5 * (F + F.conj().T)))
        lam = np.zeros(m) if self.offset is None else self.offset
        lam = np.asarray(lam, dtype=float).reshape(-1)
        if lam.shape != (m,):
            raise CCRError("offset must have 2n real coefficients")
        kind = self.kind
        if kind not in ("quasi_free", "coherent"):
            raise CCRError(f"unknown state kind {kind!r}")
        object.__setattr__(self, "offset", _freeze(lam))

    @classmethod
    def from_space(cls, space: DoubledSpace, offset=None, label: str = "") -> "StateModel":
        covariance_matrix(space, blocks_only=True)  # validates the Gram data
        if offset is None:
            return cls(space, None, None, "quasi_free", label)
        return cls(space, None, offset, "coherent", label)

    @property
    def derived(self) -> bool:
        """True when the covariance is the one induced by ``space``."""
        return self.form is None

    def form_matrix(self) -> np.ndarray:
        if self.form is not None:
            return self.form
        return covariance_matrix(self.space)[1]

    @property
    def n(self) -> int:
        return self.space.n

    def gram(self) -> np.ndarray:
        """Inner product ``S(xi, eta) + S(Gamma eta, Gamma xi)``."""
        F = self.form_matrix()
        J = self.space.gamma_matrix()
        return F + (J.conj().T @ F @ J).T

    def compatibility_residual(self) -> float:
        """Max entry of ``S(xi,eta) - S(Gamma eta, Gamma xi) - gamma(xi,eta)``."""
        F = self.form_matrix()
        J = self.space.gamma_matrix()
        lhs = F - (J.conj().T @ F @ J).T
        return float(np.max(np.abs(lhs - self.space.gamma_form())))

    def with_offset(self, offset, label: str | None = None) -> "StateModel":
        return replace(self, offset=np.asarray(offset, dtype=float), kind="coherent",
                       label=self.label if label is None else label)

    def lam(self, c) -> float:
        c = np.asarray(c, dtype=complex)
        n = self.n
        return float(self.offset[:n] @ c.real + self.offset[n:] @ c.imag)

    def to_dict(self) -> dict:
        return plain({
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "label": self.label,
            "space": self.space.to_dict(),
            "form": None if self.form is None else complex_matrix(self.form),
            "offset": {"re_coefficients": self.offset[: self.n],
                       "im_coefficients": self.offset[self.n:]},
        })


def two_point(state: StateModel | DoubledSpace, f, g) -> complex:
    """``phi(a^*(f) a(g)) = <g, f>_0 + D conj(q(g)) q(f)`` on basis coefficients."""
    space = state.space if isinstance(state, StateModel) else state
    f = np.asarray(f, dtype=complex)
    g = np.asarray(g, dtype=complex)
    if f.shape != (space.n,) or g.shape != (space.n,):
        raise CCRError("coefficient vectors must have the subspace dimension")
    q = space.q_values
    return complex(g.conj() @ space.gram_0 @ f + space.D * np.conj(q @ g) * (q @ f))


def covariance_matrix(space: DoubledSpace, blocks_only: bool = False):
    """Gram matrix of the doubled inner product and matrix of the form ``S``.

    Examples
    --------
    >>> sp = DoubledSpace([[1.0]], [[0.0]], [0.0])
    >>> K, S = covariance_matrix(sp)
    >>> K.real.tolist(), S.real.tolist()
    ([[0.5, 0.0], [0.0, 0.5]], [[0.5, 0.0], [0.0, 0.0]])

    With ``blocks_only`` only the Gram check is run and ``M`` is returned.
    """
    M = space.M
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(M)
        bad = np.flatnonzero(np.abs(U[:, 0]) > 0.1)
        raise CCRError(
            f"doubled Gram matrix is singular (eigenvalue {w[0]:.2e}); "
            f"offending basis indices {bad.tolist()}"
        ) from None
    if blocks_only:
        return M
    half = 0.5 * space.gram_h
    K = sla.block_diag(M, M)
    S = sla.block_diag(0.5 * (M + half), 0.5 * (M - half))
    return K, S


def _orthonormalizer(gram: np.ndarray, null_tol: float = 1e-12):
    """``W`` with ``W^* gram W = I`` and the dimension dropped as null."""
    try:
        L = np.linalg.cholesky(gram)
        W = sla.solve_triangular(L, np.eye(gram.shape[0]), lower=True).conj().T
        # condition guard: Cholesky of a nearly singular Gram is not trustworthy
        d = np.abs(np.diag(L)) ** 2
        if d.min() > null_tol * d.max():
            return W, 0
    except np.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(gram)
    keep = w > null_tol * max(w.max(), 1e-300)
    return U[:, keep] / np.sqrt(w[keep]), int(np.sum(~keep))


def s_operator(state: StateModel | DoubledSpace, tol: float = 1e-9, check: bool = True,
               return_basis: bool = False):
    """Matrix of ``S`` in a basis orthonormal for the inner product it induces.

    For a strictly positive Gram matrix ``K = L L^*`` this is
    ``L^{-1} S L^{-*}``.  Semidefinite Gram data (compressed covariances) are
    handled on the quotient by the null space.  With ``return_basis`` the
    coefficient vectors ``W`` of the orthonormal basis are returned as well,
    so that eigenvectors ``u`` of the result correspond to ``W u``.

    Examples
    --------
    >>> sp = DoubledSpace([[1.0]], [[0.0]], [0.0])
    >>> np.round(np.linalg.eigvalsh(s_operator(sp)), 12).tolist()
    [0.0, 1.0]
    """
    if isinstance(state, DoubledSpace):
        state = StateModel.from_space(state)
    K = state.gram()
    if check:
        kev = np.linalg.eigvalsh(0.5 * (K + K.conj().T))
        if kev.size and kev[0] < -tol * max(kev[-1], 1.0):
            raise InvariantViolation(
                f"induced inner product has eigenvalue {kev[0]:.3e} < 0: not a covariance"
            )
    W, _ = _orthonormalizer(K)
    S_op = W.conj().T @ state.form_matrix() @ W
    S_op = 0.5 * (S_op + S_op.conj().T)
    if check:
        ev = np.linalg.eigvalsh(S_op)
        if ev.size and (ev[0] < -tol or ev[-1] > 1 + tol):
            raise InvariantViolation(
                f"S spectrum [{ev[0]:.3e}, {ev[-1]:.3e}] leaves [0, 1]: inconsistent Gram data"
            )
    return (S_op, W) if return_basis else S_op


def s_spectrum(space: DoubledSpace) -> np.ndarray:
    """Spectrum of ``S`` from the ``n x n`` pencil ``(G_h / 2, M)``.

    The spectrum is ``{(1 + a) / 2, (1 - a) / 2}`` over the pencil
    eigenvalues ``a``; this is the cheap route for large subspaces.
    """
    a = sla.eigh(0.5 * space.gram_h, space.M, eigvals_only=True)
    return np.sort(np.concatenate([0.5 * (1 + a), 0.5 * (1 - a)]))


# ---------------------------------------------------------------------------
# Weyl functionals


def _form_apply(state: StateModel, F) -> np.ndarray:
    """``F^* S F`` for a matrix of doubled coefficient columns."""
    if state.form is not None:
        return F.conj().T @ state.form @ F
    sp_ = state.space
    n = sp_.n
    M = sp_.M
    half = 0.5 * sp_.gram_h
    up, lo = F[:n], F[n:]
    return 0.5 * (up.conj().T @ ((M + half) @ up) + lo.conj().T @ ((M - half) @ lo))


def _form_value(state: StateModel, F) -> float:
    return float(np.real(_form_apply(state, F[:, None])[0, 0]))


def real_embedding(space: DoubledSpace, c) -> np.ndarray:
    """Doubled coefficients ``sqrt(2) (c + C conj(c))`` of a one-particle vector."""
    c = np.asarray(c, dtype=complex)
    if c.shape[0] != space.n:
        raise CCRError("coefficient vector has the wrong dimension")
    return np.sqrt(2.0) * np.concatenate([c, space.conj_apply(c)])


def weyl_value(state: StateModel, c) -> complex:
    """``phi(W(f)) = exp(-S(F, F) / 4 + i lambda(f))`` with ``F`` the real embedding.

    Examples
    --------
    >>> st = StateModel.from_space(DoubledSpace([[1.0]], [[0.0]], [0.0]))
    >>> abs(weyl_value(st, [2.0]) - np.exp(-1.0)) < 1e-15
    True
    """
    F = real_embedding(state.space, c)
    sff = _form_value(state, F)
    return complex(np.exp(-0.25 * sff + 1j * state.lam(c)))


def weyl_matrix(state: StateModel, vectors: Sequence) -> np.ndarray:
    """``M_jk = phi(W(f_j)^* W(f_k)) = exp(gamma(F_j, F_k) / 4) phi(W(f_k - f_j))``."""
    C = np.column_stack([np.asarray(v, dtype=complex) for v in vectors])
    F = np.column_stack([real_embedding(state.space, C[:, k]) for k in range(C.shape[1])])
    SF = _form_apply(state, F)
    n = state.n
    Gh = state.space.gram_h
    gam = 0.5 * (F[:n].conj().T @ Gh @ F[:n] - F[n:].conj().T @ Gh @ F[n:])
    d = np.real(np.diag(SF))
    lam = state.offset[:n] @ C.real + state.offset[n:] @ C.imag
    # S(F_k - F_j, F_k - F_j) = S_kk + S_jj - 2 Re S_jk
    quad = d[:, None] + d[None, :] - 2 * np.real(SF)
    M = np.exp(-0.25 * quad + 0.25 * gam + 1j * (lam[None, :] - lam[:, None]))
    return 0.5 * (M + M.conj().T)


def weyl_positivity_check(state: StateModel, test_vectors: Sequence, tol: float = 1e-10) -> float:
    """Minimum eigenvalue of the Weyl positivity matrix.

    A valid state gives a value ``>= -tol``.  A single test vector is
    allowed (the matrix is then ``[1]``).

    Examples
    --------
    >>> st = StateModel.from_space(DoubledSpace([[1.0]], [[0.0]], [0.0]))
    >>> weyl_positivity_check(st, [[0.0]])
    1.0
    """
    if len(test_vectors) < 1:
        raise CCRError("need at least one test vector")
    return float(np.linalg.eigvalsh(weyl_matrix(state, test_vectors))[0])


def corrupt_state(state: StateModel, c, value: float = -0.1) -> StateModel:
    """Negative control: force ``S(F, F) = value * ||F||^2`` along ``F = embed(c)``.

    The result is no longer a state: the normalised Rayleigh quotient of the
    covariance operator along ``F`` equals ``value``.
    """
    F = real_embedding(state.space, c)
    K = state.gram()
    nF = float(np.real(F.conj() @ K @ F))
    w = K @ F / nF
    form = state.form_matrix()
    cur = float(np.real(F.conj() @ form @ F)) / nF
    bad = form + (value - cur) * nF * np.outer(w, w.conj())
    return replace(state, form=bad, label=(state.label + " [corrupted]").strip())

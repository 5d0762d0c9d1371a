"""Factor decomposition of non-factor states and its supporting checks.

A non-factor state has ``S`` with eigenvalue 1/2.  Writing ``E_0`` for that
spectral projection and ``e_k`` for an orthonormal basis of its range,

    phi(W(f)) = phi_{S E_0^perp, lambda}(W(f)) * exp(-sum_k |(e_k, f)_S|^2 / 8),

and the Gaussian factor is the characteristic function of a centred normal
law.  From ``int exp(i x t) N(0, s^2)(dx) = exp(-s^2 t^2 / 2)`` with
``s^2 t^2 / 2 = t^2 / 8`` every coordinate of ``rho(f) = (Re (e_k, f)_S,
Im (e_k, f)_S)`` gets variance 1/4.  The basis is chosen invariant under
``Gamma`` so that ``(e_k, f)_S`` is real for real ``f``; the imaginary
coordinates then vanish identically and drop out of the quadrature.

On graphs the same mixture is written with unit Gaussians and shifts
``s sqrt(D) (Re q, Im q)``; :func:`graph_change_of_variables` recovers the
linear map between the two parametrisations.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import lgamma, log
from typing import Sequence

import numpy as np
import numpy.polynomial.chebyshev as cheb
import scipy.linalg as sla
from numpy.polynomial.hermite import hermgauss

from ._io import SCHEMA_VERSION, plain
from .ccr import CCRError, StateModel, s_operator, weyl_value
from .graphs import FiniteGraph, GraphSpec, build_truncation
from .spectral import (SpectralCalculus, bose_factor, compensated_horner, exp_itH,
                       pf_weight, spectral_norm, transience_test)
from .structure import RefusalError, classify, graph_state

__all__ = [
    "DecompositionError",
    "DecompositionCertificate",
    "central_eigenspace",
    "component_state",
    "mixture_check",
    "graph_mixture_check",
    "graph_change_of_variables",
    "ComponentFamily",
    "component_family_graph",
    "taylor_coefficients",
    "WitnessReport",
    "discontinuity_witness",
    "gauss_fourier_symbol",
    "H2Vector",
    "h2_vector",
    "h2_membership",
    "KMSReport",
    "kms_residual",
]

MEASURE_VARIANCE = 0.25


class DecompositionError(ValueError):
    """The requested decomposition is not defined for the input."""


# ---------------------------------------------------------------------------
# central eigenspace and components


@dataclass
class DecompositionCertificate:
    state: StateModel = field(repr=False)
    central_basis: np.ndarray
    eigenvalues: np.ndarray
    gap: float
    tol: float
    orthonormality_error: float
    gamma_real: bool
    active_coordinates: list
    component_rule: str = ("covariance S(E0^perp f, E0^perp f) with E0 the span of the "
                           "central basis; offset x . rho(f) + lambda(f)")
    measure: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=dict)
    max_mixture_error: float | None = None
    mixture_converged: bool | None = None

    @property
    def size(self) -> int:
        """Number ``|I|`` of central basis vectors."""
        return self.central_basis.shape[1]

    def rho_functionals(self) -> np.ndarray:
        """Rows ``(alpha, beta)`` with ``rho_j(f) = alpha . Re c + beta . Im c``.

        Row ``2k`` is ``Re (e_k, f)_S`` and row ``2k + 1`` is ``Im (e_k, f)_S``.
        """
        st = self.state
        n = st.n
        G = _k_rows(st, self.central_basis)
        C = st.space.conj_matrix()
        gu, gl = G[:, :n], G[:, n:] @ C
        r2 = np.sqrt(2.0)
        rows = []
        for k in range(G.shape[0]):
            p, m = gu[k] + gl[k], gu[k] - gl[k]
            rows.append(np.concatenate([r2 * p.real, -r2 * m.imag]))
            rows.append(np.concatenate([r2 * p.imag, r2 * m.real]))
        return np.array(rows)

    def rho(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=complex)
        return self.rho_functionals() @ np.concatenate([c.real, c.imag])

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "state"}
        d["state"] = self.state.label
        d["central_basis"] = {"re": self.central_basis.real, "im": self.central_basis.imag}
        d["schema_version"] = SCHEMA_VERSION
        return plain(d)


def _k_rows(state: StateModel, X) -> np.ndarray:
    """``X^* K`` without forming ``K`` for derived states."""
    if state.derived:
        n, M = state.n, state.space.M
        return np.concatenate([X[:n].conj().T @ M, X[n:].conj().T @ M], axis=1)
    return X.conj().T @ state.gram()


def _gamma_apply(state: StateModel, X) -> np.ndarray:
    """``Gamma`` on doubled coefficient columns: conjugate and swap the halves."""
    n = state.n
    C = state.space.conj
    up, lo = X[:n].conj(), X[n:].conj()
    if C is not None:
        up, lo = C @ up, C @ lo
    return np.concatenate([lo, up])


def _gamma_real_basis(X, state, tol=1e-8):
    """Orthonormal Gamma-invariant basis of the span of ``X`` (if it is invariant)."""
    GX = _gamma_apply(state, X)
    cand = np.concatenate([0.5 * (X + GX), 0.5j * (GX - X)], axis=1)
    G = np.real(_k_rows(state, cand) @ cand)
    w, U = np.linalg.eigh(0.5 * (G + G.T))
    keep = w > tol * w.max()
    basis = cand @ (U[:, keep] / np.sqrt(w[keep]))
    return basis, int(keep.sum())


def central_eigenspace(state: StateModel, tol: float = 1e-6, filtration=None,
                       gamma_real: bool = True) -> DecompositionCertificate:
    """Eigenvectors of ``S`` with ``|s - 1/2| < tol``, orthonormal in ``(., .)_S``.

    ``filtration`` (optional) is the classification input; a factor verdict
    there is refused before any eigenvalue is inspected.  When
    ``gamma_real`` the basis is rotated to be invariant under ``Gamma``,
    which is possible because the eigenvalue 1/2 is fixed by the pairing
    ``s -> 1 - s``.

    Examples
    --------
    >>> from bosegraph.ccr import DoubledSpace, StateModel
    >>> sp = DoubledSpace([[1.0, 0.0], [0.0, 0.0]], [[0.3, 0.0], [0.0, 0.0]], [0.0, 1.0], D=2.0)
    >>> central_eigenspace(StateModel.from_space(sp)).size
    2
    """
    if filtration is not None:
        rep = classify(filtration)
        if rep.verdicts["factor"] == "yes":
            raise DecompositionError("nothing to decompose: the state is factor")
    if state.derived:
        # n x n pencil: S = (1 +- a) / 2 on (y + 0) and (0 + y)
        sp_ = state.space
        a, Y = sla.eigh(0.5 * sp_.gram_h, sp_.M)
        ev = np.concatenate([0.5 * (1 + a), 0.5 * (1 - a)])
        Z = np.zeros_like(Y)
        V = np.concatenate([np.concatenate([Y, Z]), np.concatenate([Z, Y])], axis=1)
    else:
        S_op, W = s_operator(state, return_basis=True)
        ev, U = np.linalg.eigh(S_op)
        V = W @ U
    dist = np.abs(ev - 0.5)
    gap = float(dist.min()) if dist.size else float("inf")
    sel = dist < tol
    if not np.any(sel):
        raise DecompositionError(
            f"no S eigenvalue within tol={tol:g} of 1/2 (nearest at distance {gap:.3e}); "
            "nothing to decompose at this tolerance"
        )
    X = V[:, sel]
    is_real = False
    if gamma_real:
        Xr, m = _gamma_real_basis(X, state)
        if m == X.shape[1]:
            X, is_real = Xr, True
    ortho = float(np.max(np.abs(_k_rows(state, X) @ X - np.eye(X.shape[1]))))
    k = X.shape[1]
    active = [j for j in range(2 * k) if not (is_real and j % 2 == 1)]
    return DecompositionCertificate(
        state=state, central_basis=X, eigenvalues=ev[sel], gap=gap, tol=tol,
        orthonormality_error=ortho, gamma_real=is_real, active_coordinates=active,
        measure={"family": "gaussian", "mean": [0.0] * (2 * k),
                 "covariance": (MEASURE_VARIANCE * np.eye(2 * k)).tolist(),
                 "coordinates": "rho = (Re (e_k, f)_S, Im (e_k, f)_S)"},
    )


def _projector_perp(cert: DecompositionCertificate) -> np.ndarray:
    X = cert.central_basis
    K = cert.state.gram()
    return np.eye(K.shape[0]) - X @ (X.conj().T @ K)


def component_state(cert: DecompositionCertificate, x) -> StateModel:
    """The coherent component with covariance ``S E_0^perp`` and offset ``x . rho + lambda``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (2 * cert.size,):
        raise DecompositionError(f"x must have {2 * cert.size} coordinates")
    st = cert.state
    P = _projector_perp(cert)
    form = P.conj().T @ st.form_matrix() @ P
    offset = st.offset + x @ cert.rho_functionals()
    return StateModel(st.space, form, offset, "coherent",
                      f"{st.label} component x={np.round(x, 6).tolist()}")


def _gh_rule(order: int, dims: int, variance: float):
    """Tensor Gauss-Hermite nodes and weights for ``N(0, variance I)`` on ``R^dims``."""
    y, w = hermgauss(order)
    y = np.sqrt(2.0 * variance) * y
    w = w / np.sqrt(np.pi)
    if dims == 0:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*([y] * dims), indexing="ij")
    wgrids = np.meshgrid(*([w] * dims), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    weights = np.prod(np.stack([g.reshape(-1) for g in wgrids], axis=1), axis=1)
    return nodes, weights


def _mixture_errors(full, base_vals, rho, order, variance):
    dims = rho.shape[1]
    nodes, weights = _gh_rule(order, dims, variance)
    phases = np.exp(1j * rho @ nodes.T)  # probes x nodes
    mix = base_vals * (phases @ weights)
    return np.abs(full - mix)


def mixture_check(cert: DecompositionCertificate, probes: Sequence, quad_order: int = 40,
                  max_dims: int = 6) -> dict:
    """Compare Weyl values of the state with the Gauss-Hermite mixture of components.

    For each probe ``c`` the left side is ``phi(W(f))``; the right side is
    ``phi_base(W(f)) * sum_nodes w exp(i x . rho(f))`` where ``phi_base`` is
    the component at ``x = 0``.  The Gaussian factor alone is compared too.
    Convergence is flagged when the error at ``quad_order`` is not below the
    error at ``quad_order // 2`` (unless both are at roundoff).
    """
    if quad_order < 2:
        raise DecompositionError("quad_order must be at least 2")
    st = cert.state
    active = cert.active_coordinates
    if len(active) > max_dims:
        raise DecompositionError(f"{len(active)} quadrature dimensions exceed the cap {max_dims}")
    base = component_state(cert, np.zeros(2 * cert.size))
    probes = [np.asarray(p, dtype=complex) for p in probes]
    full = np.array([weyl_value(st, c) for c in probes])
    base_vals = np.array([weyl_value(base, c) for c in probes])
    rho = np.array([cert.rho(c) for c in probes])[:, active]
    err = _mixture_errors(full, base_vals, rho, quad_order, MEASURE_VARIANCE)
    err_lo = _mixture_errors(full, base_vals, rho, max(quad_order // 2, 1), MEASURE_VARIANCE)
    gauss_lhs = np.exp(-np.sum(rho**2, axis=1) / 8.0)
    nodes, weights = _gh_rule(quad_order, rho.shape[1], MEASURE_VARIANCE)
    gauss_rhs = np.exp(1j * rho @ nodes.T) @ weights
    roundoff = 1e-13
    converged = bool(err.max() <= max(err_lo.max(), roundoff) or err.max() < roundoff)
    cert.quadrature = {"scheme": "tensor Gauss-Hermite", "order": quad_order,
                       "dimensions": len(active)}
    cert.max_mixture_error = float(err.max())
    cert.mixture_converged = converged
    return {"max_error": float(err.max()), "max_error_half_order": float(err_lo.max()),
            "max_gaussian_factor_error": float(np.max(np.abs(gauss_lhs - gauss_rhs))),
            "converged": converged, "probes": len(probes), "order": quad_order}


def _q_functionals(state: StateModel) -> np.ndarray:
    """Rows for ``Re q(f)`` and ``Im q(f)`` in ``(Re c, Im c)`` coordinates."""
    q = state.space.q_values
    return np.array([np.concatenate([q.real, -q.imag]), np.concatenate([q.imag, q.real])])


def graph_change_of_variables(cert: DecompositionCertificate) -> dict:
    """Linear map ``s = T x`` with ``x . rho(f) = s . sqrt(D) (Re q(f), Im q(f))``.

    The unit-Gaussian parametrisation requires ``T Cov(x) T^T = I``; the
    residual of that identity and of the functional match are returned.
    """
    D = cert.state.space.D
    if D <= 0:
        raise DecompositionError("the condensate weight D must be positive")
    R = cert.rho_functionals()[cert.active_coordinates]
    G = np.sqrt(D) * _q_functionals(cert.state)
    # x . R = s . G  for all f  <=>  R^T x = G^T s
    T, *_ = np.linalg.lstsq(G.T, R.T, rcond=None)
    match = float(np.max(np.abs(G.T @ T - R.T))) / max(np.abs(R).max(), 1e-300)
    cov = MEASURE_VARIANCE * T @ T.T
    return {"T": T, "functional_residual": match,
            "covariance_residual": float(np.max(np.abs(cov - np.eye(2))))}


# ---------------------------------------------------------------------------
# graph components


def _graph_offset(state: StateModel, s) -> np.ndarray:
    s = np.asarray(s, dtype=float).reshape(2)
    return np.sqrt(state.space.D) * (s @ _q_functionals(state))


def _zero_condensate(state: StateModel) -> StateModel:
    """The same state with ``D = 0`` (explicit form when the Gram data degenerates)."""
    sp0 = state.space.with_D(0.0)
    try:
        return StateModel.from_space(sp0, label=f"{state.label} base")
    except CCRError:
        M0 = 0.5 * sp0.gram_h + sp0.gram_0
        half = 0.5 * sp0.gram_h
        n = sp0.n
        form = np.zeros((2 * n, 2 * n), dtype=complex)
        form[:n, :n] = 0.5 * (M0 + half)
        form[n:, n:] = 0.5 * (M0 - half)
        return StateModel(state.space, form, None, "quasi_free", f"{state.label} base")


def graph_mixture_check(state: StateModel, probes: Sequence, quad_order: int = 40) -> dict:
    """Unit-Gaussian mixture of ``phi_{s1,s2}`` against ``phi_{q,D}`` Weyl values.

    The components share the covariance of ``phi_{q,0}`` and carry offsets
    ``s1 sqrt(D) Re q(f) + s2 sqrt(D) Im q(f)``; the weight is
    ``exp(-|s|^2 / 2) / (2 pi)``.
    """
    D = state.space.D
    if D <= 0:
        raise DecompositionError("D = 0: the state is already the single component")
    base = _zero_condensate(state)
    probes = [np.asarray(p, dtype=complex) for p in probes]
    full = np.array([weyl_value(state, c) for c in probes])
    base_vals = np.array([weyl_value(base, c) for c in probes])
    G = np.sqrt(D) * _q_functionals(state)
    shifts = np.array([G @ np.concatenate([c.real, c.imag]) for c in probes])
    err = _mixture_errors(full, base_vals, shifts, quad_order, 1.0)
    err_lo = _mixture_errors(full, base_vals, shifts, max(quad_order // 2, 1), 1.0)
    return {"max_error": float(err.max()), "max_error_half_order": float(err_lo.max()),
            "converged": bool(err.max() <= max(err_lo.max(), 1e-13)),
            "probes": len(probes), "order": quad_order}


@dataclass
class ComponentFamily:
    """The states ``phi_{s1,s2}`` along a filtration of balls."""

    spec: GraphSpec
    beta: float
    D: float
    radii: tuple
    norm_estimate: float
    bases: list = field(repr=False)
    condensed: list = field(repr=False)

    def component(self, s, index: int | None = None):
        """``phi_{s1,s2}`` at one filtration index, or the whole filtration."""
        idx = range(len(self.bases)) if index is None else [index]
        out = []
        for i in idx:
            st = self.condensed[i]
            out.append(self.bases[i].with_offset(
                _graph_offset(st, s), label=f"{self.spec.label} r={self.radii[i]} s={list(s)}"))
        return out if index is None else out[0]

    def to_dict(self) -> dict:
        return plain({"schema_version": SCHEMA_VERSION, "graph": self.spec.to_dict(),
                      "beta": self.beta, "D": self.D, "radii": list(self.radii),
                      "norm_estimate": self.norm_estimate,
                      "offset_rule": "s1 sqrt(D) Re q(f) + s2 sqrt(D) Im q(f)",
                      "base": "condensate weight 0"})


def component_family_graph(spec: GraphSpec, beta: float, D: float,
                           radii: Sequence[int] = (6, 10, 14), norm_estimate: float | None = None,
                           transience=None) -> ComponentFamily:
    """Components of the condensed thermal state on balls of ``spec``.

    ``norm_estimate`` defaults to the extrapolated norm of ``transience``
    (computed if absent); recurrent or inconclusive graphs are refused.
    """
    if D <= 0:
        raise DecompositionError("D = 0 gives a factor state: no decomposition needed")
    if norm_estimate is None:
        transience = transience or transience_test(spec)
        if transience.verdict != "transient":
            raise RefusalError(f"graph is {transience.verdict}")
        norm_estimate = float(transience.norm_extrapolated)
    bases, condensed = [], []
    for r in radii:
        condensed.append(graph_state(spec, r, beta, D, norm_estimate))
        bases.append(graph_state(spec, r, beta, 0.0, norm_estimate))
    return ComponentFamily(spec, float(beta), float(D), tuple(int(r) for r in radii),
                           float(norm_estimate), bases, condensed)


# ---------------------------------------------------------------------------
# discontinuity witness


def taylor_coefficients(n: int) -> np.ndarray:
    """Monomial coefficients of ``p_n(x) = sum_{k<=n} (-n x)^k / k!`` (log-space, no overflow).

    >>> np.round(taylor_coefficients(2), 12).tolist()
    [1.0, -2.0, 2.0]
    """
    if n == 0:
        return np.ones(1)
    k = np.arange(n + 1)
    mag = np.exp(np.array([kk * log(n) - lgamma(kk + 1) for kk in k]))
    return np.where(k % 2 == 0, mag, -mag)


def _chebyshev_exp(n: int, hi: float, deg_max: int = 2048):
    """Chebyshev interpolant of ``exp(-n x)`` on ``[0, hi]`` (coefficients, degree)."""
    deg = 8
    while True:
        c = cheb.chebinterpolate(lambda y: np.exp(-n * 0.5 * hi * (y + 1)), deg)
        # converged once the tail sits at roundoff relative to the leading term
        if np.max(np.abs(c[-3:])) < 1e-15 * np.abs(c).max() or deg >= deg_max:
            return c
        deg *= 2


@dataclass
class WitnessReport:
    graph: dict
    radius: int
    beta: float
    method: str
    n_values: list
    relative_s_norm: list
    pairing: list
    pairing_bound: list
    f_pairing: float
    f_s_norm: float
    capped_at: int | None
    diagnostics: list
    tolerances: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return plain(d)

    def csv(self) -> str:
        lines = ["n,relative_s_norm,pairing,pairing_bound"]
        for row in zip(self.n_values, self.relative_s_norm, self.pairing, self.pairing_bound):
            lines.append(",".join(repr(float(x)) if i else str(x) for i, x in enumerate(row)))
        return "\n".join(lines) + "\n"


def discontinuity_witness(spec: GraphSpec, f=None, beta: float = 1.0, n_max: int = 60,
                          radius: int = 8, norm_estimate: float | None = None,
                          method: str = "taylor", n_values: Sequence[int] | None = None,
                          overflow_cap: float = 1e300) -> WitnessReport:
    """Sequence ``f_n = f - P_n(H) f`` with ``P_n(0) = 1`` exhibiting discontinuity of q.

    ``method="taylor"`` uses ``P_n = p_n``, the degree-n Taylor polynomial of
    ``exp(-n x)``, evaluated at the eigenvalues of ``H`` with compensated
    Horner on coefficients computed in log space.  ``method="minimax"``
    uses the Chebyshev interpolant of ``exp(-n x)`` on ``[0, 2N]``
    normalised to ``P_n(0) = 1``.

    Reported per ``n``: ``||f_n - f||_S / ||f||_S`` in the norm with weight
    ``(e^{beta H} + 1)(e^{beta H} - 1)^{-1}``, the pairing ``<v, f_n>`` and
    its truncation bound ``sum_y |(H v)(y)| |(R_n(H) f)(y)|`` where
    ``R_n(x) = (P_n(x) - 1) / x``; on the infinite graph the pairing is 0.
    """
    if method not in ("taylor", "minimax"):
        raise ValueError(f"unknown witness method {method!r}")
    if n_max < 3 and n_values is None:
        raise ValueError("n_max must be at least 3")
    g = build_truncation(spec, radius)
    if norm_estimate is None:
        norm_estimate = float(transience_test(spec).norm_extrapolated)
    calc = SpectralCalculus(g, norm_estimate)
    h, U = calc.eig
    if h[0] <= 0:
        raise RefusalError("H is not positive on this truncation")
    v = pf_weight(g, norm_estimate).values
    f = g.delta() if f is None else np.asarray(f, dtype=complex)
    fh = U.T @ f
    weight = 1.0 + 2.0 * bose_factor(h, beta)  # (e^{bh} + 1) / (e^{bh} - 1)
    f_norm = float(np.sqrt(np.sum(weight * np.abs(fh) ** 2)))
    Hv = calc.H_apply(v)
    f_pair = complex(v @ f)
    ns = list(range(0, n_max + 1)) if n_values is None else [int(n) for n in n_values]
    diags, rel, pair, bound = [], [], [], []
    capped = None
    kept = []
    for n in ns:
        if method == "taylor":
            c = taylor_coefficients(n)
            P = compensated_horner(c, h)
        else:
            c = _chebyshev_exp(n, 2.0 * calc.N)
            P = cheb.chebval(h / calc.N - 1.0, c)
            P = P / cheb.chebval(-1.0, c)
        if not np.all(np.isfinite(P)) or np.max(np.abs(P)) > overflow_cap:
            capped = n
            diags.append(f"P_n overflows the cap {overflow_cap:g} at n={n}; sequence stopped")
            break
        R = (P - 1.0) / h
        Pf = U @ (P * fh)
        fn = f - Pf
        kept.append(n)
        rel.append(float(np.sqrt(np.sum(weight * np.abs(P * fh) ** 2)) / f_norm))
        pair.append(abs(complex(v @ fn)))
        # plus a rounding allowance for the two inner products
        slack = 1e-13 * (np.linalg.norm(v) * (np.linalg.norm(f) + np.linalg.norm(Pf)))
        bound.append(float(np.sum(np.abs(Hv) * np.abs(U @ (R * fh))) + slack))
    if method == "taylor" and rel and rel[-1] > 1.0:
        diags.append("Taylor polynomial does not approximate exp(-n x) beyond x ~ 0.28: "
                     f"max |p_n| on the spectrum grows (last relative norm {rel[-1]:.3e})")
    return WitnessReport(
        graph=spec.to_dict(), radius=int(radius), beta=float(beta), method=method,
        n_values=kept, relative_s_norm=rel, pairing=pair, pairing_bound=bound,
        f_pairing=abs(f_pair), f_s_norm=f_norm, capped_at=capped, diagnostics=diags,
        tolerances={"overflow_cap": overflow_cap, "norm_estimate": float(norm_estimate)},
    )


# ---------------------------------------------------------------------------
# h2 vectors


def _gauss_moments(kmax: int, shift: complex) -> np.ndarray:
    """``int y^k exp(-y^2 + 2 shift y - shift^2) dy / sqrt(pi)`` for ``k <= kmax``."""
    # y = z + shift with z ~ N(0, 1/2): E[(z + shift)^k] by recurrence
    m = np.zeros(kmax + 1, dtype=complex)
    m[0] = 1.0
    if kmax >= 1:
        m[1] = shift
    for k in range(2, kmax + 1):
        m[k] = shift * m[k - 1] + 0.5 * (k - 1) * m[k - 2]
    return m


def gauss_fourier_symbol(coeffs, a: float, b: float, h) -> np.ndarray:
    """Closed form of ``int p(t) exp(-(t - a)^2 / b) exp(i t h) dt``.

    With ``t = a + sqrt(b) y`` the integral is ``sqrt(b pi) exp(i a h - b h^2 / 4)``
    times Gaussian moments of ``p(a + sqrt(b) y)`` around ``i sqrt(b) h / 2``.

    >>> bool(abs(gauss_fourier_symbol([1.0], 0.0, 1.0, 0.0)[0] - np.sqrt(np.pi)) < 1e-14)
    True
    """
    if b <= 0:
        raise ValueError("b must be positive")
    coeffs = np.asarray(coeffs, dtype=complex)
    h = np.atleast_1d(np.asarray(h, dtype=float))
    deg = coeffs.size - 1
    sb = np.sqrt(b)
    # p(a + sqrt(b) y) = sum_j d_j y^j
    d = np.zeros(deg + 1, dtype=complex)
    for k, ck in enumerate(coeffs):
        for j in range(k + 1):
            d[j] += ck * np.exp(lgamma(k + 1) - lgamma(j + 1) - lgamma(k - j + 1)) * a ** (k - j) * sb**j
    out = np.empty(h.size, dtype=complex)
    for i, hh in enumerate(h):
        mom = _gauss_moments(deg, 0.5j * sb * hh)
        out[i] = np.sqrt(b * np.pi) * np.exp(1j * a * hh - 0.25 * b * hh * hh) * (d @ mom)
    return out


def _required_order(coeffs, a, b, hmax, tol=1e-12, max_order=400):
    """Smallest Gauss-Hermite order reproducing the symbol on ``[0, hmax]``."""
    hs = np.linspace(0.0, hmax, 33)
    ref = gauss_fourier_symbol(coeffs, a, b, hs)
    scale = max(np.abs(ref).max(), 1e-300)
    order = 8
    while order <= max_order:
        if np.max(np.abs(_gh_symbol(coeffs, a, b, hs, order) - ref)) <= tol * scale + 1e-15:
            return order
        order += 8
    return None


def _gh_symbol(coeffs, a, b, h, order):
    y, w = hermgauss(order)
    t = a + np.sqrt(b) * y
    p = np.polynomial.polynomial.polyval(t, np.asarray(coeffs, dtype=complex))
    return np.sqrt(b) * (np.exp(1j * np.outer(h, t)) @ (w * p))


@dataclass
class H2Vector:
    vector: np.ndarray
    oracle: np.ndarray | None
    oracle_error: float | None
    quad_order: int
    required_order: int

    def to_dict(self) -> dict:
        return plain({"schema_version": SCHEMA_VERSION, "quad_order": self.quad_order,
                      "required_order": self.required_order, "oracle_error": self.oracle_error,
                      "vector": {"re": self.vector.real, "im": self.vector.imag}})


def h2_vector(g: FiniteGraph, poly_coeffs, a: float, b: float, x=None,
              norm_estimate: float | None = None, quad_order: int | None = None,
              calculus: SpectralCalculus | None = None, with_oracle: bool = True) -> H2Vector:
    """``int p(t) exp(-(t - a)^2 / b) e^{itH} delta_x dt`` by Gauss-Hermite quadrature.

    Each node applies ``exp_itH`` through the spectral calculus.  The
    quadrature must resolve the oscillation ``e^{i sqrt(b) y h}`` up to
    ``h = 2N``; a requested order below the one needed raises.
    """
    if b <= 0:
        raise ValueError("b must be positive")
    if calculus is None:
        if norm_estimate is None:
            norm_estimate = spectral_norm(g).value
        calculus = SpectralCalculus(g, norm_estimate)
    hmax = 2.0 * calculus.N
    need = _required_order(poly_coeffs, a, b, hmax)
    if need is None:
        raise DecompositionError("oscillation not resolved below order 400; reduce b")
    if quad_order is None:
        quad_order = need
    elif quad_order < need:
        raise DecompositionError(
            f"quadrature order {quad_order} does not resolve exp(i t H) up to ||H|| = {hmax:g}; "
            f"order >= {need} required"
        )
    e = g.delta(x)
    y, w = hermgauss(quad_order)
    t = a + np.sqrt(b) * y
    p = np.polynomial.polynomial.polyval(t, np.asarray(poly_coeffs, dtype=complex))
    out = np.zeros(g.n, dtype=complex)
    for tj, wj, pj in zip(t, w, p):
        out += (np.sqrt(b) * wj * pj) * calculus.apply(exp_itH(tj), e)
    oracle = err = None
    if with_oracle and calculus.dense:
        h, U = calculus.eig
        oracle = U @ (gauss_fourier_symbol(poly_coeffs, a, b, h) * (U.T @ e))
        err = float(np.max(np.abs(out - oracle)))
    return H2Vector(out, oracle, err, int(quad_order), int(need))


def h2_membership(spec: GraphSpec, poly_coeffs, a: float, b: float, beta: float,
                  radii: Sequence[int] = (4, 6, 8), norm_estimate: float | None = None,
                  offsets: Sequence[float] = (1e-1, 1e-2, 1e-3)) -> dict:
    """Residuals of the membership conditions for an h2 generator at the root.

    Per radius: ``|<e^{beta H} u, v> - <u, v>|`` and the resolvent values
    ``<(lambda - A)^{-1} e^{beta H} u, e^{beta H} u>`` at
    ``lambda = N + offset``; the latter should stay bounded as the offset
    shrinks.
    """
    if norm_estimate is None:
        norm_estimate = float(transience_test(spec).norm_extrapolated)
    rows = []
    for r in radii:
        g = build_truncation(spec, r)
        calc = SpectralCalculus(g, norm_estimate)
        h, U = calc.eig
        u = h2_vector(g, poly_coeffs, a, b, calculus=calc, with_oracle=False).vector
        v = pf_weight(g, norm_estimate).values
        eu = U @ (np.exp(beta * h) * (U.T @ u))
        a_vals = norm_estimate - h
        res = []
        for eps in offsets:
            lam = norm_estimate + eps
            uh = U.T @ eu
            res.append(float(np.real(np.sum(np.abs(uh) ** 2 / (lam - a_vals)))))
        rows.append({"radius": int(r), "invariance_residual": abs(complex(v @ eu - v @ u)),
                     "pairing": abs(complex(v @ u)), "resolvent_values": res})
    return plain({"schema_version": SCHEMA_VERSION, "offsets": list(offsets), "rows": rows})


# ---------------------------------------------------------------------------
# KMS


@dataclass
class KMSReport:
    graph: dict
    beta: float
    radii: list
    t_grid: list
    mode_residual: list
    two_point_residual: list
    invariance_residual: list
    invariance_decreasing: bool
    regularization_triggered: list
    tolerances: dict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return plain(d)


def kms_residual(spec: GraphSpec, beta: float, f=None, g=None, t_grid=None,
                 radii: Sequence[int] = (6, 10, 14), norm_estimate: float | None = None,
                 seed: int = 0) -> KMSReport:
    """KMS checks for the thermal two-point function on balls.

    Per radius:

    * ``max_j |e^{beta h_j} n_j - (n_j + 1)| / (n_j + 1)`` over the spectrum;
    * ``max_t |<(n+1) e^{itH} g, f> - <n e^{itH} e^{beta H} g, f>|`` relative
      to ``|<(n+1) e^{itH} g, f>|`` (vectors applied through the calculus);
    * ``max_t |<v, e^{itH} f> - <v, f>|``, the invariance of the condensate
      part, which should decrease as the ball grows.

    ``f`` and ``g`` are vertex-indexed arrays on the smallest ball (zero
    padded on larger ones); random unit vectors from ``seed`` by default.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if t_grid is None:
        t_grid = np.linspace(0.0, 3.0, 16)
    t_grid = np.asarray(t_grid, dtype=float)
    if norm_estimate is None:
        norm_estimate = float(transience_test(spec).norm_extrapolated)
    rng = np.random.default_rng(seed)
    mode, two, inv, reg = [], [], [], []
    n0 = build_truncation(spec, radii[0]).n
    if f is None:
        f = rng.normal(size=n0) + 1j * rng.normal(size=n0)
        f /= np.linalg.norm(f)
    if g is None:
        g = rng.normal(size=n0) + 1j * rng.normal(size=n0)
        g /= np.linalg.norm(g)
    for r in radii:
        gr = build_truncation(spec, r)
        calc = SpectralCalculus(gr, norm_estimate)
        h, U = calc.eig
        floor = calc.default_regularization()
        reg.append(bool(np.any(h < floor)))
        ok = h >= floor
        n = bose_factor(h[ok], beta)
        mode.append(float(np.max(np.abs(np.exp(beta * h[ok]) * n - (n + 1)) / (n + 1))))
        fr = np.zeros(gr.n, dtype=complex)
        gg = np.zeros(gr.n, dtype=complex)
        fr[: f.size] = f
        gg[: g.size] = g
        fh, gh = U.T @ fr, U.T @ gg
        nfull = np.where(ok, 1.0 / np.expm1(beta * np.where(ok, h, 1.0)), 0.0)
        worst = 0.0
        for t in t_grid:
            evo = np.exp(1j * t * h) * gh
            lhs = np.vdot((nfull + 1) * evo, fh)
            rhs = np.vdot(nfull * np.exp(beta * h) * evo, fh)
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        two.append(float(worst))
        v = pf_weight(gr, norm_estimate).values
        vh = U.T @ v
        base = np.vdot(vh, fh)
        inv.append(float(max(abs(np.vdot(vh, np.exp(1j * t * h) * fh) - base) for t in t_grid)))
    dec = bool(all(b < a for a, b in zip(inv, inv[1:])))
    return KMSReport(
        graph=spec.to_dict(), beta=float(beta), radii=[int(r) for r in radii],
        t_grid=t_grid.tolist(), mode_residual=mode, two_point_residual=two,
        invariance_residual=inv, invariance_decreasing=dec, regularization_triggered=reg,
        tolerances={"norm_estimate": float(norm_estimate)},
    )

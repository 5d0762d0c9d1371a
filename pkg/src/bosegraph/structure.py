"""Faithful / factor / pure classification and BEC detection.

A property of the infinite-dimensional covariance operator is read off a
filtration of finite models.  An eigenvalue at a target ``t`` (0, 1/2 or 1)
is *present in the limit* when either the distance of the spectrum to ``t``
is below ``tol_eig`` over the trend window, or the distances strictly
decrease over the window and the nearest eigenvalue behaves like a point
eigenvalue rather than the edge of continuous spectrum accumulating at
``t``.  Two signatures are accepted:

* convergence: the eigenvectors nearest ``t`` keep an overlap of at least
  ``overlap_threshold`` with the one at the first filtration index;
* isolation: the ratio of the nearest distance to the next distinct
  distance strictly decreases and ends below ``isolation_threshold``.

For continuous spectrum the eigenvectors drift away and consecutive
distances shrink at a common rate, so neither signature appears.
"""
from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from ._io import SCHEMA_VERSION, plain
from .ccr import CCRError, DoubledSpace, StateModel, delta_subspace, s_operator
from .graphs import GraphSpec, build_truncation, embed
from .spectral import SpectralCalculus, bose_occupation, pf_weight, spectral_norm, transience_test

__all__ = [
    "RefusalError",
    "Snapshot",
    "ClassificationReport",
    "spectral_snapshot",
    "classify",
    "graph_state",
    "bec_detect",
]

TARGETS = {"0": 0.0, "half": 0.5, "1": 1.0}


class RefusalError(RuntimeError):
    """The requested construction does not apply (e.g. recurrent graph)."""


@dataclass
class Snapshot:
    """Spectral data of one filtration index."""

    state: StateModel = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    gaps: dict
    vectors: dict = field(repr=False)
    purity_defect: float
    route: str
    isolation: dict = field(default_factory=dict)

    @property
    def radius(self):
        sub = self.state.space.subspace
        return None if sub is None else sub.ambient.radius


def _kform(state: StateModel, x, y) -> np.ndarray:
    """``x^* K y`` in the doubled inner product of ``state``."""
    x = np.asarray(x)
    y = np.asarray(y)
    if state.derived:
        n = state.n
        M = state.space.M
        return x[:n].conj().T @ (M @ y[:n]) + x[n:].conj().T @ (M @ y[n:])
    return x.conj().T @ state.gram() @ y


def spectral_snapshot(state: StateModel) -> Snapshot:
    """Spectrum of ``S`` with the eigenvectors nearest 0, 1/2 and 1.

    States whose covariance is induced by their space use the ``n x n``
    pencil ``(G_h / 2, M)``; others use the full ``2n x 2n`` operator.
    Vectors are doubled coefficient columns, orthonormal in the doubled
    inner product.
    """
    n = state.n
    if state.derived:
        sp_ = state.space
        a, Y = sla.eigh(0.5 * sp_.gram_h, sp_.M)
        ev = np.sort(np.concatenate([0.5 * (1 + a), 0.5 * (1 - a)]))
        z = np.zeros_like(Y[:, 0])
        i0 = int(np.argmin(np.abs(a)))
        imax = int(np.argmax(a))
        y0, ym = Y[:, i0], Y[:, imax]
        vectors = {
            "half": np.column_stack([np.concatenate([y0, z]), np.concatenate([z, y0])]),
            "0": np.concatenate([z, ym])[:, None],
            "1": np.concatenate([ym, z])[:, None],
        }
        route = "pencil"
        absa = np.sort(np.abs(a))
        desc = np.sort(a)[::-1]
        isolation = {"half": _ratio(absa), "0": _ratio(0.5 * (1 - desc)),
                     "1": _ratio(0.5 * (1 - desc))}
    else:
        S_op, W = s_operator(state, return_basis=True)
        ev, U = np.linalg.eigh(S_op)
        V = W @ U
        order_half = np.argsort(np.abs(ev - 0.5), kind="stable")[:2]
        vectors = {
            "half": V[:, np.sort(order_half)],
            "0": V[:, [0]],
            "1": V[:, [-1]],
        }
        route = "full"
        isolation = {k: _ratio(np.sort(np.abs(ev - t))) for k, t in TARGETS.items()}
    gaps = {k: float(np.min(np.abs(ev - t))) if ev.size else float("inf")
            for k, t in TARGETS.items()}
    defect = float(np.max(ev * (1 - ev))) if ev.size else 0.0
    return Snapshot(state, ev, gaps, vectors, abs(defect), route, isolation)


def _ratio(d) -> float:
    """Nearest distance over the next distinct one (pairs count once)."""
    d = np.asarray(d)
    if d.size == 0:
        return 1.0
    nxt = d[d > d[0] * (1 + 1e-9) + 1e-15]
    if nxt.size == 0:
        return 1.0
    return float(d[0] / nxt[0])


def _transfer(c, src: StateModel, dst: StateModel) -> np.ndarray:
    """Doubled coefficients of the ``src`` vector ``c`` in the ``dst`` basis."""
    s_sub, d_sub = src.space.subspace, dst.space.subspace
    if s_sub is None or d_sub is None:
        if src.n != dst.n:
            raise CCRError("abstract states of different dimension cannot be compared")
        return np.asarray(c)
    n = src.n
    out = []
    for half in (c[:n], c[n:]):
        vec = s_sub.basis @ half
        vec = embed(np.asarray(vec), s_sub.ambient, d_sub.ambient)
        x, res = d_sub.coordinates(vec)
        if res > 1e-8:
            raise CCRError(f"filtration is not nested (residual {res:.2e})")
        out.append(x)
    return np.concatenate(out)


def _overlap(anchor: Snapshot, snap: Snapshot, key: str) -> float:
    a = _transfer(anchor.vectors[key][:, 0], anchor.state, snap.state)
    V = snap.vectors[key]
    na = float(np.real(_kform(snap.state, a, a)))
    if na <= 0:
        return 0.0
    proj = _kform(snap.state, V, a)
    return float(np.sqrt(np.sum(np.abs(proj) ** 2) / na))


def _check_nested(states: Sequence[StateModel]):
    for s, t in zip(states, states[1:]):
        a, b = s.space.subspace, t.space.subspace
        if a is None or b is None:
            if s.n != t.n:
                raise CCRError("abstract filtration states must share the dimension")
            continue
        if a.is_full_delta and b.is_full_delta:
            if b.ambient.n < a.ambient.n or b.ambient.vertices[: a.ambient.n] != a.ambient.vertices:
                raise CCRError("filtration is not nested")
            continue
        B = a.basis.toarray() if a.is_full_delta else a.basis
        _, res = b.coordinates(embed(B, a.ambient, b.ambient))
        if res > 1e-8:
            raise CCRError(f"filtration is not nested (residual {res:.2e})")


def _monotone(x, rel=1e-12):
    d = np.diff(x)
    scale = rel * max(np.max(np.abs(x)), 1e-300)
    return bool(np.all(d <= scale) or np.all(d >= -scale))


def _strictly_decreasing(x):
    return bool(np.all(np.diff(x) < 0))


def _presence(gaps, overlaps, ratios, tol_eig, window, threshold, iso_threshold):
    w = np.asarray(gaps[-window:])
    if len(gaps) < window or not _monotone(w):
        return "inconclusive"
    if w[-1] < tol_eig:
        return "present"
    if _strictly_decreasing(w):
        if all(o >= threshold for o in overlaps[-window:]):
            return "present"
        iso = np.asarray(ratios[-window:])
        if _strictly_decreasing(iso) and iso[-1] < iso_threshold:
            return "present"
    return "absent"


@dataclass
class ClassificationReport:
    state: dict
    eigenvalues: list
    gap_to_0: float
    gap_to_half: float
    gap_to_1: float
    verdicts: dict
    eigvec_half: dict | None
    filtration_trend: list
    tolerances: dict
    findings: dict = field(default_factory=dict)
    bec: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return plain(d)


def classify(filtration: StateModel | Sequence[StateModel], tol_eig: float = 1e-8,
             window: int = 3, overlap_threshold: float = 0.99,
             localization_threshold: float = 0.99,
             isolation_threshold: float = 0.25) -> ClassificationReport:
    """Classify a state from the spectra of ``S`` along a filtration.

    ``filtration`` lists the state restricted to nested test subspaces
    (coarsest first).  A single state is an exact finite-dimensional model
    and is treated as a constant filtration.

    Examples
    --------
    >>> from bosegraph.ccr import DoubledSpace, StateModel
    >>> fock = StateModel.from_space(DoubledSpace([[1.0]], [[0.0]], [0.0]))
    >>> classify(fock).verdicts
    {'faithful': 'no', 'factor': 'yes', 'pure': 'yes'}
    """
    exact = isinstance(filtration, StateModel)
    states = [filtration] * window if exact else list(filtration)
    if not states:
        raise ValueError("empty filtration")
    if not exact:
        _check_nested(states)
    snaps = [spectral_snapshot(states[0])] * window if exact else [spectral_snapshot(s) for s in states]
    anchor = snaps[0]

    trend, presence, overlaps = [], {}, {k: [] for k in TARGETS}
    for k, snap in enumerate(snaps):
        entry = {"index": k, "radius": snap.radius, "dim": int(snap.state.n),
                 "route": snap.route, "purity_defect": snap.purity_defect}
        for key in TARGETS:
            entry[f"gap_to_{key}"] = snap.gaps[key]
            ov = 1.0 if (exact or k == 0) else _overlap(anchor, snap, key)
            overlaps[key].append(ov)
            entry[f"anchored_overlap_{key}"] = ov
            entry[f"isolation_{key}"] = snap.isolation[key]
        trend.append(entry)
    for key in TARGETS:
        presence[key] = _presence([s.gaps[key] for s in snaps], overlaps[key],
                                  [s.isolation[key] for s in snaps], tol_eig, window,
                                  overlap_threshold, isolation_threshold)

    def verdict(p, yes_when_absent=True):
        if p == "inconclusive":
            return "inconclusive"
        return "yes" if (p == "absent") == yes_when_absent else "no"

    faithful = verdict(presence["0"])
    factor = verdict(presence["half"])
    defects = [s.purity_defect for s in snaps]
    if len(defects) < window or not _monotone(defects[-window:]):
        pure = "inconclusive"
    else:
        pure = "yes" if defects[-1] < tol_eig else "no"
    if pure == "yes" and factor != "yes":
        pure = "inconclusive"

    final = snaps[-1]
    eig_half = None
    st = final.state
    if factor == "no":
        x = final.vectors["half"][:, 0]
        eig_half = _vector_diagnostics(st, x)
        eig_half["anchored_overlap"] = overlaps["half"][-1]
        eig_half["localized"] = bool(eig_half["q_localization"] > localization_threshold)

    space = st.space
    return ClassificationReport(
        state={"label": st.label, "kind": st.kind, "D": space.D, "dim": st.n,
               "derived_covariance": st.derived, "metadata": space.metadata},
        eigenvalues=[float(e) for e in final.eigenvalues],
        gap_to_0=final.gaps["0"],
        gap_to_half=final.gaps["half"],
        gap_to_1=final.gaps["1"],
        verdicts={"faithful": faithful, "factor": factor, "pure": pure},
        eigvec_half=eig_half,
        filtration_trend=trend,
        tolerances={"tol_eig": tol_eig, "window": window,
                    "overlap_threshold": overlap_threshold,
                    "localization_threshold": localization_threshold,
                    "isolation_threshold": isolation_threshold},
        findings={"eigenvalue_0": presence["0"], "eigenvalue_half": presence["half"],
                  "eigenvalue_1": presence["1"], "exact_model": exact},
    )


def _vector_diagnostics(state: StateModel, x) -> dict:
    n = state.n
    space = state.space
    kx = float(np.real(_kform(state, x, x)))
    q = space.q_values
    qx = np.abs(q @ x[:n]) ** 2 + np.abs(q @ x[n:]) ** 2
    out = {"q_localization": float(space.D * qx / kx) if kx > 0 else 0.0,
           "k_norm": kx}
    sub = space.subspace
    if sub is not None:
        vec = sub.basis @ x[:n]
        vec = np.asarray(vec).reshape(-1)
        mass = np.abs(vec) ** 2
        bnd = sorted(sub.ambient.boundary)
        out["boundary_weight"] = float(mass[bnd].sum() / mass.sum()) if mass.sum() else 0.0
        if sub.is_full_delta:
            out["vector"] = vec / np.linalg.norm(vec)
    return out


# ---------------------------------------------------------------------------
# graph states


@functools.lru_cache(maxsize=2)
def _thermal_data(spec: GraphSpec, radius: int, N: float, beta: float):
    g = build_truncation(spec, radius)
    own = spectral_norm(g).value
    if own >= N:
        raise RefusalError(
            f"truncation norm {own:.12g} at radius {radius} is not below the edge estimate {N:.12g}"
        )
    calc = SpectralCalculus(g, N)
    v = pf_weight(g, N).values
    base = DoubledSpace.from_graph(delta_subspace(g), calc, beta, v, 0.0)
    return g, calc, v, base


def graph_state(spec: GraphSpec, radius: int, beta: float, D: float, norm_estimate: float,
                offset=None, label: str | None = None) -> StateModel:
    """The thermal state with condensate weight ``D`` on the delta subspace of a ball."""
    _, _, _, base = _thermal_data(spec, int(radius), float(norm_estimate), float(beta))
    space = base.with_D(D)
    label = label or f"{spec.label} r={radius} beta={beta:g} D={D:g}"
    return StateModel.from_space(space, offset, label)


def bec_detect(spec: GraphSpec, beta: float, D: float, radii: Sequence[int] = (6, 8, 10, 12),
               transience=None, tol_eig: float = 1e-8, window: int = 3,
               overlap_threshold: float = 0.99, localization_threshold: float = 0.99,
               isolation_threshold: float = 0.25,
               transience_kwargs: dict | None = None) -> ClassificationReport:
    """Build the thermal state with condensate ``D`` along balls and classify it.

    ``transience`` may be a precomputed :class:`TransienceReport`; otherwise
    it is computed.  Only transient graphs are accepted.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if D < 0:
        raise ValueError("D must be nonnegative")
    if transience is None:
        transience = transience_test(spec, **(transience_kwargs or {}))
    if transience.verdict != "transient":
        raise RefusalError(
            f"graph is {transience.verdict}; the condensate construction needs a transient "
            f"adjacency operator ({'; '.join(transience.diagnostics) or 'no diagnostics'})"
        )
    N = float(transience.norm_extrapolated)
    states = [graph_state(spec, r, beta, D, N) for r in radii]
    report = classify(states, tol_eig, window, overlap_threshold, localization_threshold,
                      isolation_threshold)
    loc = report.eigvec_half["q_localization"] if report.eigvec_half else None
    report.bec = {
        "bec": "yes" if (D > 0 and report.verdicts["factor"] == "no") else "no",
        "D": float(D),
        "beta": float(beta),
        "radii": [int(r) for r in radii],
        "norm_estimate": N,
        "transience_verdict": transience.verdict,
        "edge_green_value": transience.extrapolated_edge_value,
        "q_localization": loc,
        "regularization": states[-1].space.metadata.get("regularization"),
        "pf_normalization": "v(root) = 1",
    }
    return report

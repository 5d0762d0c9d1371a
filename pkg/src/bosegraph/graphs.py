"""Finite truncations (balls around a root) of infinite graphs.

Three families are supported: the hypercubic lattice Z^d, the d-regular
tree, and an explicit edge list read from a text file.  Every truncation is
built by a breadth-first search from the root in which the neighbours of a
vertex are visited in lexicographic order, so the vertex ordering (and every
spectrum computed downstream) is reproducible, and the ball of radius r is a
prefix of the ball of radius r + 1.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GraphError",
    "GraphSpec",
    "FiniteGraph",
    "lattice",
    "regular_tree",
    "edge_list",
    "read_edge_file",
    "build_truncation",
    "adjacency_apply",
    "embed",
]


class GraphError(ValueError):
    """Invalid graph specification or truncation request."""


@dataclass(frozen=True)
class GraphSpec:
    """A graph family together with the root used for balls.

    ``family`` is one of ``"lattice"``, ``"regular_tree"`` or ``"edge_list"``.
    For the first two ``degree`` is the lattice dimension or the tree degree.
    For edge lists ``edges`` holds ``(u, v, multiplicity)`` triples and
    ``max_degree`` is the declared degree bound of the infinite graph the
    list presents (``None`` means the list is the whole graph).
    """

    family: str
    degree: int = 1
    root: Hashable = None
    edges: tuple = ()
    max_degree: int | None = None

    def __post_init__(self):
        if self.family == "lattice":
            if self.degree < 1:
                raise GraphError("lattice dimension must be >= 1")
            if self.root is None:
                object.__setattr__(self, "root", (0,) * self.degree)
        elif self.family == "regular_tree":
            if self.degree < 2:
                raise GraphError("tree degree must be >= 2")
            if self.root is None:
                object.__setattr__(self, "root", ())
        elif self.family == "edge_list":
            if not self.edges:
                raise GraphError("edge_list family needs at least one edge")
            if self.root is None:
                object.__setattr__(self, "root", self.edges[0][0])
        else:
            raise GraphError(f"unknown graph family {self.family!r}")

    @property
    def label(self) -> str:
        if self.family == "edge_list":
            return f"edge_list({len(self.edges)} edges)"
        return f"{self.family}({self.degree})"

    def to_dict(self) -> dict:
        out = {"family": self.family, "degree": self.degree, "root": _jsonable(self.root)}
        if self.family == "edge_list":
            out["edges"] = [[_jsonable(u), _jsonable(v), int(m)] for u, v, m in self.edges]
            out["max_degree"] = self.max_degree
        return out


def _jsonable(x):
    if isinstance(x, tuple):
        return [_jsonable(y) for y in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def lattice(d: int) -> GraphSpec:
    return GraphSpec("lattice", d)


def regular_tree(d: int) -> GraphSpec:
    return GraphSpec("regular_tree", d)


def edge_list(edges: Iterable[Sequence], root=None, max_degree: int | None = None) -> GraphSpec:
    """Edge-list family; each edge is ``(u, v)`` or ``(u, v, multiplicity)``."""
    triples = []
    for e in edges:
        if len(e) == 2:
            u, v, m = e[0], e[1], 1
        elif len(e) == 3:
            u, v, m = e
        else:
            raise GraphError(f"bad edge {e!r}")
        if int(m) < 1:
            raise GraphError(f"edge multiplicity must be positive: {e!r}")
        triples.append((u, v, int(m)))
    return GraphSpec("edge_list", root=root, edges=tuple(triples), max_degree=max_degree)


def read_edge_file(path, root=None, max_degree: int | None = None) -> GraphSpec:
    """Parse ``u v [multiplicity]`` lines; ``#`` starts a comment."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphError(f"{path}:{lineno}: expected 'u v [multiplicity]'")
        u, v = (_parse_vertex(p) for p in parts[:2])
        m = int(parts[2]) if len(parts) == 3 else 1
        edges.append((u, v, m))
    return edge_list(edges, root=root, max_degree=max_degree)


def _parse_vertex(token: str):
    try:
        return int(token)
    except ValueError:
        return token


@dataclass(frozen=True, eq=False)
class FiniteGraph:
    """Ball of a given radius around the root, with open (truncated) boundary.

    ``adjacency[i, j]`` is the number of edges between vertices i and j;
    ``boundary`` lists the vertex indices having a neighbour outside the
    ball in the infinite graph; ``max_degree`` is the degree bound of the
    infinite graph.
    """

    spec: GraphSpec
    radius: int
    vertices: tuple
    adjacency: sp.csr_matrix
    boundary: frozenset
    depth: np.ndarray
    max_degree: int
    index: dict = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def root_index(self) -> int:
        return 0

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        if self.boundary:
            mask[sorted(self.boundary)] = False
        return np.flatnonzero(mask)

    def delta(self, x=None) -> np.ndarray:
        """Unit vector at vertex ``x`` (the root by default)."""
        e = np.zeros(self.n)
        e[self.root_index if x is None else self.index[x]] = 1.0
        return e


def _lattice_neighbours(x):
    out = []
    for i in range(len(x)):
        for s in (-1, 1):
            y = list(x)
            y[i] += s
            out.append(tuple(y))
    out.sort()
    return [(y, 1) for y in out]


def _tree_neighbours(d):
    def nbrs(x):
        out = []
        if x:
            out.append(x[:-1])
        nchild = d if not x else d - 1
        out.extend(x + (k,) for k in range(nchild))
        out.sort()
        return [(y, 1) for y in out]

    return nbrs


def _edge_neighbours(spec: GraphSpec):
    table: dict = {}
    for u, v, m in spec.edges:
        table.setdefault(u, {})
        table.setdefault(v, {})
        table[u][v] = table[u].get(v, 0) + m
        if u != v:
            table[v][u] = table[v].get(u, 0) + m
    if spec.max_degree is not None:
        for u, nb in table.items():
            deg = sum(m for w, m in nb.items())
            if deg > spec.max_degree:
                raise GraphError(
                    f"vertex {u!r} has degree {deg} > declared bound {spec.max_degree}"
                )
    keyed = {u: sorted(nb.items(), key=lambda t: _sort_key(t[0])) for u, nb in table.items()}
    return keyed


def _sort_key(x):
    return (0, x, "") if isinstance(x, (int, np.integer)) else (1, 0, str(x))


def build_truncation(spec: GraphSpec, radius: int) -> FiniteGraph:
    """Ball of ``radius`` around ``spec.root`` in BFS order.

    Examples
    --------
    >>> build_truncation(lattice(1), 3).n
    7
    >>> build_truncation(regular_tree(3), 2).n
    10
    """
    if int(radius) != radius or radius < 1:
        raise GraphError("radius must be a positive integer")
    radius = int(radius)
    if spec.family == "lattice":
        nbrs = _lattice_neighbours
        max_degree = 2 * spec.degree
    elif spec.family == "regular_tree":
        nbrs = _tree_neighbours(spec.degree)
        max_degree = spec.degree
    else:
        table = _edge_neighbours(spec)
        if spec.root not in table:
            raise GraphError(f"root {spec.root!r} is not a vertex of the edge list")
        nbrs = table.__getitem__
        max_degree = max(sum(m for _, m in nb) for nb in table.values())
        if spec.max_degree is not None:
            max_degree = max(max_degree, spec.max_degree)

    index = {spec.root: 0}
    order = [spec.root]
    depth = [0]
    queue = deque([spec.root])
    while queue:
        x = queue.popleft()
        dx = depth[index[x]]
        if dx == radius:
            continue
        for y, _ in nbrs(x):
            if y not in index:
                index[y] = len(order)
                order.append(y)
                depth.append(dx + 1)
                queue.append(y)

    rows, cols, vals = [], [], []
    boundary = set()
    for i, x in enumerate(order):
        for y, m in nbrs(x):
            j = index.get(y)
            if j is None:
                boundary.add(i)
                continue
            rows.append(i)
            cols.append(j)
            vals.append(m)
    n = len(order)
    adj = sp.csr_matrix(
        (np.asarray(vals, dtype=np.int64), (np.asarray(rows), np.asarray(cols))), shape=(n, n)
    )
    adj.sum_duplicates()
    adj.sort_indices()
    return FiniteGraph(
        spec=spec,
        radius=radius,
        vertices=tuple(order),
        adjacency=adj,
        boundary=frozenset(boundary),
        depth=np.asarray(depth, dtype=np.int64),
        max_degree=int(max_degree),
        index=index,
    )


def adjacency_apply(g: FiniteGraph, v) -> np.ndarray:
    """Return ``A v`` for the truncated adjacency matrix."""
    v = np.asarray(v)
    if v.shape[0] != g.n:
        raise GraphError(f"vector length {v.shape[0]} != vertex count {g.n}")
    if np.issubdtype(v.dtype, np.integer):
        return g.adjacency @ v
    return g.adjacency @ v.astype(np.result_type(v.dtype, np.float64))


def embed(v, small: FiniteGraph, big: FiniteGraph) -> np.ndarray:
    """Zero-pad a vector on ``small`` to ``big`` (requires nested BFS prefix)."""
    if big.n < small.n or big.vertices[: small.n] != small.vertices:
        raise GraphError("truncations are not nested")
    v = np.asarray(v)
    out = np.zeros((big.n,) + v.shape[1:], dtype=v.dtype)
    out[: small.n] = v
    return out

"""Random but consistent model data shared by several test modules."""
import numpy as np

from bosegraph.ccr import DoubledSpace, StateModel, TestSubspace
from bosegraph.graphs import build_truncation, lattice


def real_space(rng, n, D=None):
    """Real symmetric Gram data with a real condensate functional."""
    A = rng.normal(size=(n, n))
    Gh = A @ A.T / n + 0.05 * np.eye(n)
    B = rng.normal(size=(n, n))
    G0 = B @ B.T / n * rng.uniform(0, 3)
    q = rng.normal(size=n)
    D = rng.uniform(0, 2) if D is None else D
    return DoubledSpace(Gh, G0, q, D)


def complex_space(rng, k, D=None):
    """Vectors on a small ball closed under conjugation; real occupation operator."""
    g = build_truncation(lattice(1), 6)
    V = rng.normal(size=(g.n, k)) + 1j * rng.normal(size=(g.n, k))
    sub = TestSubspace.from_vectors(g, V, [f"u{j}" for j in range(k)])
    B = sub.basis
    X = rng.normal(size=(g.n, g.n))
    T = X @ X.T / g.n * rng.uniform(0, 3)  # real symmetric PSD "occupation"
    v = np.abs(rng.normal(size=g.n))
    D = rng.uniform(0, 2) if D is None else D
    return DoubledSpace(B.conj().T @ B, B.conj().T @ T @ B, v @ B, D, subspace=sub)


def random_space(rng, max_dim=12):
    if rng.random() < 0.5:
        return real_space(rng, int(rng.integers(1, max_dim + 1)))
    return complex_space(rng, int(rng.integers(1, max_dim // 2 + 1)))


def random_state(rng, coherent=False, **kw):
    sp = random_space(rng, **kw)
    off = rng.normal(size=2 * sp.n) if coherent else None
    return StateModel.from_space(sp, off, label="random")


def random_vectors(rng, n, k, scale=1.0):
    return [scale * (rng.normal(size=n) + 1j * rng.normal(size=n)) / np.sqrt(2 * n)
            for _ in range(k)]


def state_families():
    """Generators for the state families used by positivity checks."""
    return {
        "fock": lambda rng: StateModel.from_space(
            DoubledSpace(np.eye(4), np.zeros((4, 4)), np.zeros(4)), label="fock"),
        "thermal": lambda rng: StateModel.from_space(
            DoubledSpace(np.eye(3), np.diag([0.1, 1.0, 4.0]), np.zeros(3)), label="thermal"),
        "random": lambda rng: random_state(rng),
        "coherent": lambda rng: random_state(rng, coherent=True),
    }

"""Deterministic numerical substrate: seeded RNG, cosine similarity, softmax, sampling.

All matrices are dense row-major ``numpy.float64`` arrays. Every public
operation validates finiteness on entry so NaN/Inf never propagates silently.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NonFiniteError, ZeroNormError

DISTRIBUTIONS = ("gaussian", "uniform", "laplace")


class Rng:
    """Seeded random source with a frozen, documented algorithm (PCG64).

    The same 64-bit seed reproduces the same draw sequence across runs and
    platforms. Never share one instance across threads; derive children with
    :meth:`derive` instead.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def derive(self, *tags: int) -> "Rng":
        """Deterministic child stream keyed by integer tags (epoch, purpose, ...)."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, *map(int, tags)]))
        )
        return child

    def normal(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.standard_normal((rows, cols))

    def uniform(self, rows: int, cols: int, low: float = -1.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=(rows, cols))

    def laplace(self, rows: int, cols: int) -> np.ndarray:
        return self._gen.laplace(0.0, 1.0, size=(rows, cols))

    def integers(self, low: int, high: int, size: int | None = None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array; raise on NaN/Inf."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D array, got ndim={m.ndim}")
    require_finite(m, name)
    return m


def require_finite(a: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name}: contains NaN or Inf")


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def unit_rows(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Scale each row to unit L2 norm. Zero rows are a hard error, not a clamp."""
    norms = row_norms(m)
    if np.any(norms == 0.0):
        raise ZeroNormError(f"{name}: zero-norm row at index {int(np.argmin(norms))}")
    return m / norms[:, None]


def cosine_sim_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarity: out[i][j] = cos(a_i, b_j).

    Args:
        a: B x D matrix, no zero rows.
        b: N x D matrix, no zero rows.

    Returns:
        B x N matrix with entries in [-1, 1].
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    sims = unit_rows(a, "a") @ unit_rows(b, "b").T
    # guard rounding drift past the mathematical range
    return np.clip(sims, -1.0, 1.0)


def row_softmax(m, tau: float = 1.0) -> np.ndarray:
    """Temperature softmax per row, stabilized by per-row max subtraction.

    Every output row is nonnegative and sums to 1 within 1e-12.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    m = as_matrix(m, "softmax input")
    z = m / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sample_matrix(rng: Rng, rows: int, cols: int, dist: str = "gaussian") -> np.ndarray:
    """I.i.d. draws: gaussian = N(0,1), uniform on [-1,1], laplace(0,1)."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"sample_matrix: rows={rows}, cols={cols} must be >= 1")
    if dist == "gaussian":
        return rng.normal(rows, cols)
    if dist == "uniform":
        return rng.uniform(rows, cols)
    if dist == "laplace":
        return rng.laplace(rows, cols)
    raise ValueError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")

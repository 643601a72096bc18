"""Dense numeric primitives shared by the rest of the package.

Matrices are plain 2-D ``float64`` numpy arrays. :func:`as_matrix` is the
single entry point that validates shape and finiteness.
"""

from dataclasses import dataclass

import numpy as np

from tlsattn import kernels
from tlsattn.errors import DimensionError


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Return ``x`` as a C-contiguous finite float64 matrix."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D array, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name}: contains NaN or Inf")
    return a


def as_vector(x, name: str = "vector") -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionError(f"{name}: expected 1-D array, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(x) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.size == 0:
        raise DimensionError("softmax_rows: empty input")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class TopKResult:
    """Selected positions, best first, with their scores."""

    indices: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.indices)


def top_k(scores, k: int) -> TopKResult:
    """The ``k`` largest scores. Equal scores rank the lower index first."""
    if k < 0:
        raise ValueError("top_k: k must be non-negative")
    s = as_vector(scores, "scores")
    idx = kernels.top_k(s, int(k))
    return TopKResult(indices=idx, values=s[idx])


def colwise_max_min(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError("colwise_max_min: need at least one row")
    return x.max(axis=0), x.min(axis=0)

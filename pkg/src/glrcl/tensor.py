"""Dense float64 linear algebra and the deterministic random stream.

Matrices are plain ``numpy.ndarray`` objects (row-major, 64-bit floats).
This module owns the few kernels everything else builds on: Cholesky
factorization, multivariate-normal log-densities and sampling, and a
splittable reproducible random stream.

Determinism contract
--------------------
``Rng`` wraps numpy's PCG64 bit generator keyed through ``SeedSequence`` by
``(seed, path)``.  ``split(label)`` derives a child whose output depends only
on the parent's identity and the label, never on how much of the parent
stream has been consumed, so split results are independent of call order.
Normal variates come from an explicit Box-Muller transform over PCG64
uniforms (documented below) rather than a library sampler, which pins the
output sequence to the raw bit stream.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)


def _label_to_int(label) -> int:
    """Map a split label (non-negative int or str) to a SeedSequence key."""
    if isinstance(label, (bool,)):
        raise TypeError("bool is not a valid split label")
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("split labels must be non-negative")
        return int(label)
    if isinstance(label, str):
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"split label must be int or str, got {type(label).__name__}")


class Rng:
    """Deterministic random stream with independent splitting.

    A stream is identified by ``(seed, path)``; the root stream has an empty
    path and ``split(*labels)`` appends to it.  Two streams with different
    paths are statistically independent (SeedSequence entropy pooling).
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(_path)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.path))
        )

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"

    def split(self, *labels) -> "Rng":
        """Derive an independent child stream; stateless w.r.t. consumption."""
        if not labels:
            raise ValueError("split needs at least one label")
        return Rng(self.seed, self.path + tuple(_label_to_int(l) for l in labels))

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), from PCG64 via (next_uint64 >> 11) * 2**-53."""
        return self._gen.random(int(n))

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(int(n))

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct indices drawn from range(n)."""
        return self._gen.choice(int(n), size=int(k), replace=False)


def standard_normal(rng: Rng, n: int) -> np.ndarray:
    """n i.i.d. standard-normal variates via the Box-Muller transform.

    For each pair of uniforms (u1, u2) in [0, 1):
        r     = sqrt(-2 ln(1 - u1))        # 1-u1 in (0, 1] keeps the log finite
        z_2i   = r cos(2 pi u2)
        z_2i+1 = r sin(2 pi u2)
    and the first n variates are returned.
    """
    n = int(n)
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.zeros(0)
    m = (n + 1) // 2
    u1 = rng.uniform(m)
    u2 = rng.uniform(m)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = (2.0 * math.pi) * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
    return z[:n]


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = a for symmetric positive-definite a.

    Raises NotPositiveDefinite when a pivot is non-positive (callers that
    want regularization apply it themselves and retry).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    scale = 1.0 + float(np.max(np.abs(a)))
    if float(np.max(np.abs(a - a.T))) > 1e-9 * scale:
        raise ValueError("matrix is not symmetric within 1e-9 relative tolerance")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> float:
    """log N(x | mean, L L^T) evaluated through the Cholesky factor L."""
    x = np.asarray(x, dtype=np.float64).ravel()
    mean = np.asarray(mean, dtype=np.float64).ravel()
    chol = np.asarray(chol, dtype=np.float64)
    d = x.size
    if mean.size != d or chol.shape != (d, d):
        raise DimensionMismatch(
            f"x has {d} entries, mean {mean.size}, chol shape {chol.shape}"
        )
    y = solve_triangular(chol, x - mean, lower=True)
    return float(
        -0.5 * d * LOG_2PI - np.sum(np.log(np.diag(chol))) - 0.5 * np.dot(y, y)
    )


def mvn_logpdf_rows(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Row-wise log N(x_i | mean, L L^T) for an (n, d) matrix of points."""
    x = np.asarray(x, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64).ravel()
    chol = np.asarray(chol, dtype=np.float64)
    d = x.shape[1]
    if mean.size != d or chol.shape != (d, d):
        raise DimensionMismatch(
            f"rows have {d} entries, mean {mean.size}, chol shape {chol.shape}"
        )
    y = solve_triangular(chol, (x - mean).T, lower=True)
    quad = np.einsum("dn,dn->n", y, y)
    return -0.5 * d * LOG_2PI - np.sum(np.log(np.diag(chol))) - 0.5 * quad


def mvn_sample(mean: np.ndarray, chol: np.ndarray, n: int, rng: Rng) -> np.ndarray:
    """n rows of mean + L z with z i.i.d. standard normal from rng."""
    mean = np.asarray(mean, dtype=np.float64).ravel()
    chol = np.asarray(chol, dtype=np.float64)
    d = mean.size
    if chol.shape != (d, d):
        raise DimensionMismatch(f"mean has {d} entries but chol shape is {chol.shape}")
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    z = standard_normal(rng, n * d).reshape(n, d)
    return mean + z @ chol.T

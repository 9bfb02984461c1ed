"""Dense linear-algebra helpers shared by the GP and neural-net code.

Everything here operates on plain numpy arrays (row-major, float64).
Problem sizes stay small (at most a few thousand training points), so a
dense Cholesky plus triangular solves is all we ever need.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla


class NotPositiveDefinite(Exception):
    """Factorization failed even after jitter escalation."""


class DimensionMismatch(Exception):
    pass


class NonFiniteEvaluation(Exception):
    """A function evaluation returned nan/inf during finite differencing."""


# Jitter escalation schedule: base 1e-8, x10 at most 4 times (cap 1e-4).
BASE_JITTER = 1e-8
MAX_JITTER = 1e-4


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T == A + jitter * I."""

    lower: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def log_det(self) -> float:
        """log |A + jitter I| of the factored matrix."""
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def cholesky(a: np.ndarray, jitter: float = 0.0) -> CholeskyFactor:
    """Cholesky-factor a symmetric positive-definite matrix.

    If the factorization fails, the diagonal jitter is escalated by
    factors of 10 (starting from 1e-8) up to 1e-4 before giving up with
    NotPositiveDefinite.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got shape {a.shape}")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    if a.size and not np.allclose(a, a.T, atol=1e-9, rtol=0.0):
        raise ValueError("matrix is not symmetric within 1e-9")

    j = jitter
    eye = np.eye(a.shape[0])
    while True:
        try:
            m = a if j == 0.0 else a + j * eye
            return CholeskyFactor(lower=np.linalg.cholesky(m), jitter=j)
        except np.linalg.LinAlgError:
            nxt = BASE_JITTER if j < BASE_JITTER else j * 10.0
            if nxt > MAX_JITTER * (1 + 1e-12):
                raise NotPositiveDefinite(
                    f"cholesky failed with jitter up to {j:g}"
                ) from None
            j = nxt


def solve_spd(f: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve (A + jitter I) x = b given the Cholesky factor of A."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.dim:
        raise DimensionMismatch(f"factor dim {f.dim} vs rhs len {b.shape[0]}")
    return sla.cho_solve((f.lower, True), b)


def solve_lower(f: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve L x = b (forward substitution on the lower factor)."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.dim:
        raise DimensionMismatch(f"factor dim {f.dim} vs rhs len {b.shape[0]}")
    return sla.solve_triangular(f.lower, b, lower=True)


def spd_inverse(f: CholeskyFactor) -> np.ndarray:
    """Explicit inverse of the factored matrix (used for LML gradients)."""
    inv, info = sla.lapack.dpotri(f.lower, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"dpotri failed with info={info}")
    # dpotri fills only the lower triangle.
    inv = np.tril(inv) + np.tril(inv, -1).T
    return inv


def fd_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for d in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[d] += h
        xm.flat[d] -= h
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"non-finite evaluation at coordinate {d}")
        grad.flat[d] = (fp - fm) / (2.0 * h)
    return grad

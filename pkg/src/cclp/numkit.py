"""Dense double-precision matrix kernel.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Products
and LU factorisation are compiled loops with a fixed summation order
(left to right over the inner index), so results are bit-reproducible and
match a naive triple loop exactly.

Random numbers come from ``numpy.random.Generator`` driven by the PCG64
bit generator (a 128-bit-state permuted congruential generator whose output
stream is fixed by its published algorithm, not by the platform).
"""

from __future__ import annotations

import numba
import numpy as np

__all__ = [
    "NumericalError",
    "SingularMatrixError",
    "as_mat",
    "check_finite",
    "matmul",
    "hadamard",
    "row_softmax",
    "lu_factor",
    "lu_solve",
    "make_rng",
]

PIVOT_RTOL = 1e-14
MATMUL_TILE = 64


class NumericalError(ArithmeticError):
    """A kernel produced or received a non-finite value."""


class SingularMatrixError(NumericalError):
    """LU elimination hit a pivot that is zero to working precision."""


def as_mat(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def check_finite(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{what} contains non-finite entries")
    return a


@numba.njit(cache=True)
def _matmul_ikj(a, b):
    # Slabs of MATMUL_TILE rows of b stay in cache across all rows of a, and
    # four inner steps are fused into one left-to-right expression. Every
    # out[i, j] still accumulates a[i, p] * b[p, j] in increasing p.
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for p0 in range(0, k, MATMUL_TILE):
        p1 = min(p0 + MATMUL_TILE, k)
        for i in range(n):
            p = p0
            while p + 4 <= p1:
                a0, a1, a2, a3 = a[i, p], a[i, p + 1], a[i, p + 2], a[i, p + 3]
                for j in range(m):
                    out[i, j] = (((out[i, j] + a0 * b[p, j]) + a1 * b[p + 1, j])
                                 + a2 * b[p + 2, j]) + a3 * b[p + 3, j]
                p += 4
            while p < p1:
                aip = a[i, p]
                for j in range(m):
                    out[i, j] += aip * b[p, j]
                p += 1
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product with left-to-right accumulation over the inner index."""
    a, b = as_mat(a), as_mat(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = _matmul_ikj(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return check_finite(out, "matmul result")


def hadamard(a, b) -> np.ndarray:
    a, b = as_mat(a), as_mat(b)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return check_finite(a * b, "hadamard result")


def row_softmax(s, mask=None) -> np.ndarray:
    """Row-wise softmax with max subtraction.

    ``mask`` is an optional boolean matrix; masked-out entries (False) get
    probability exactly zero and do not take part in the row maximum.
    """
    s = check_finite(as_mat(s), "softmax input")
    if mask is None:
        shifted = s - s.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != s.shape:
            raise ValueError("mask shape must match scores")
        if s.shape[1] and not mask.any(axis=1).all():
            raise ValueError("softmax row has no unmasked entries")
        masked = np.where(mask, s, -np.inf)
        shifted = masked - masked.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


@numba.njit(cache=True)
def _lu_inplace(lu, piv, tol):
    n = lu.shape[0]
    for k in range(n):
        p = k
        best = abs(lu[k, k])
        for i in range(k + 1, n):
            v = abs(lu[i, k])
            if v > best:
                best = v
                p = i
        if best < tol:
            return k
        piv[k] = p
        if p != k:
            for j in range(n):
                tmp = lu[k, j]
                lu[k, j] = lu[p, j]
                lu[p, j] = tmp
        inv = 1.0 / lu[k, k]
        for i in range(k + 1, n):
            lu[i, k] *= inv
            f = lu[i, k]
            if f != 0.0:
                for j in range(k + 1, n):
                    lu[i, j] -= f * lu[k, j]
    return -1


@numba.njit(cache=True)
def _lu_substitute(lu, piv, b):
    n = lu.shape[0]
    x = b.copy()
    for k in range(n):
        p = piv[k]
        if p != k:
            for j in range(x.shape[1]):
                tmp = x[k, j]
                x[k, j] = x[p, j]
                x[p, j] = tmp
    # forward: unit lower triangle
    for i in range(n):
        for k in range(i):
            f = lu[i, k]
            for j in range(x.shape[1]):
                x[i, j] -= f * x[k, j]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            f = lu[i, k]
            for j in range(x.shape[1]):
                x[i, j] -= f * x[k, j]
        inv = 1.0 / lu[i, i]
        for j in range(x.shape[1]):
            x[i, j] *= inv
    return x


def lu_factor(a) -> tuple[np.ndarray, np.ndarray]:
    """LU factorisation with partial pivoting, ``P a = L U``.

    Returns the packed factors and the row-swap sequence. Raises
    :class:`SingularMatrixError` when a pivot falls below ``1e-14`` times the
    largest absolute entry of ``a``.
    """
    a = check_finite(as_mat(a), "lu input")
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"lu_factor needs a square matrix, got {a.shape}")
    lu = np.array(a, dtype=np.float64, order="C", copy=True)
    piv = np.arange(n, dtype=np.int64)
    scale = float(np.abs(a).max()) if n else 0.0
    tol = PIVOT_RTOL * max(scale, np.finfo(np.float64).tiny)
    bad = _lu_inplace(lu, piv, tol)
    if bad >= 0:
        raise SingularMatrixError(f"pivot {bad} below {tol:.3g}; matrix is singular to working precision")
    return lu, piv


def lu_solve(a, b) -> np.ndarray:
    """Solve ``a X = b`` for square ``a`` and ``n x k`` right-hand side ``b``."""
    a, b = as_mat(a), check_finite(as_mat(b), "rhs")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"lu_solve dimension mismatch: {a.shape} vs {b.shape}")
    lu, piv = lu_factor(a)
    x = _lu_substitute(lu, piv, np.ascontiguousarray(b))
    return check_finite(x, "solution")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))

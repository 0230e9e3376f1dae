"""Small dense linear algebra.

Everything here works on float64 numpy arrays.  The LU routines accept a
stack of square matrices with arbitrary leading batch axes, which is how the
k x k capacitance matrices of a whole minibatch are factored in one pass.
The same routines double as brute-force oracles for n x n checks in tests.
"""

from __future__ import annotations

import numpy as np

# Pivots at or below this fraction of the largest absolute entry count as zero.
SINGULAR_RTOL = 1e-12


class ContractError(ValueError):
    """Raised when an argument violates an operation's shape or value contract."""


class SingularMatrixError(ArithmeticError):
    def __init__(self, message: str, pivot: int | None = None, det_estimate: float | None = None):
        super().__init__(message)
        self.pivot = pivot
        self.det_estimate = det_estimate


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2:
        raise ContractError(f"{name} must be at least 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    return a


def as_vector(a, name: str = "vector") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 1:
        raise ContractError(f"{name} must be at least 1-D, got a scalar")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    return a


def _require_square(m: np.ndarray, op: str) -> None:
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ContractError(f"{op} needs square matrices, got shape {m.shape}")


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def trace(m) -> np.ndarray | float:
    m = as_matrix(m)
    _require_square(m, "trace")
    t = np.trace(m, axis1=-2, axis2=-1)
    return float(t) if m.ndim == 2 else t


def lu_factor(m) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Partial-pivot LU of one matrix or a stack of matrices.

    Returns ``(lu, perm, sign, singular)``.  ``lu`` packs the unit-lower L
    below the diagonal and U on and above it, ``perm`` is the row permutation
    (``m[..., perm, :] == L @ U``), ``sign`` is the permutation parity and
    ``singular`` flags matrices with a pivot under the relative threshold.
    Factoring continues past a tiny pivot so the rest of the batch is usable.
    """
    lu = np.array(as_matrix(m), dtype=np.float64, copy=True)
    _require_square(lu, "lu_factor")
    batch = lu.shape[:-2]
    n = lu.shape[-1]
    lu = lu.reshape((-1, n, n))
    nb = lu.shape[0]
    rows = np.arange(nb)
    perm = np.tile(np.arange(n), (nb, 1))
    sign = np.ones(nb)
    scale = np.abs(lu).max(axis=(1, 2)) if n else np.zeros(nb)
    tol = SINGULAR_RTOL * scale
    singular = np.zeros(nb, dtype=bool)

    for j in range(n):
        p = j + np.argmax(np.abs(lu[:, j:, j]), axis=1)
        swap = p != j
        if np.any(swap):
            r = rows[swap]
            pj = p[swap]
            row_j = lu[r, j, :].copy()
            lu[r, j, :] = lu[r, pj, :]
            lu[r, pj, :] = row_j
            idx_j = perm[r, j].copy()
            perm[r, j] = perm[r, pj]
            perm[r, pj] = idx_j
            sign[swap] = -sign[swap]
        piv = lu[:, j, j]
        tiny = np.abs(piv) <= tol
        singular |= tiny
        safe = np.where(tiny, 1.0, piv)
        if j + 1 < n:
            lu[:, j + 1:, j] /= safe[:, None]
            lu[:, j + 1:, j + 1:] -= lu[:, j + 1:, j, None] * lu[:, j, None, j + 1:]

    return (lu.reshape(batch + (n, n)), perm.reshape(batch + (n,)),
            sign.reshape(batch), singular.reshape(batch))


def lu_logdet(m):
    """Sign and log-magnitude of the determinant.

    Singular matrices give ``(0, -inf)``.  For a single matrix the result is
    ``(int, float)``; for a stack it is a pair of arrays.
    """
    lu, _, sign, singular = lu_factor(m)
    diag = np.diagonal(lu, axis1=-2, axis2=-1)
    with np.errstate(divide="ignore"):
        logabs = np.sum(np.log(np.abs(diag)), axis=-1)
    sign = sign * np.prod(np.sign(diag), axis=-1)
    sign = np.where(singular, 0.0, sign)
    logabs = np.where(singular, -np.inf, logabs)
    if np.ndim(sign) == 0:
        return int(sign), float(logabs)
    return sign.astype(int), logabs


def lu_solve(lu: np.ndarray, perm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` given the factors of ``A``; rhs is ``(..., n, r)``."""
    n = lu.shape[-1]
    x = np.take_along_axis(rhs, perm[..., :, None], axis=-2).copy()
    for i in range(1, n):
        x[..., i, :] -= np.einsum("...j,...jr->...r", lu[..., i, :i], x[..., :i, :])
    for i in range(n - 1, -1, -1):
        x[..., i, :] -= np.einsum("...j,...jr->...r", lu[..., i, i + 1:], x[..., i + 1:, :])
        x[..., i, :] /= lu[..., i, i, None]
    return x


def dense_inverse(m) -> np.ndarray:
    m = as_matrix(m)
    lu, perm, _, singular = lu_factor(m)
    if np.any(singular):
        diag = np.abs(np.diagonal(lu, axis1=-2, axis2=-1)).reshape(-1, m.shape[-1])
        pivot = int(np.argmin(diag[np.argmax(singular.reshape(-1))]))
        raise SingularMatrixError(f"matrix is singular to working precision at pivot {pivot}", pivot=pivot)
    eye = np.broadcast_to(np.eye(m.shape[-1]), m.shape)
    return lu_solve(lu, perm, eye)


def cofactor_det(m) -> float:
    """Laplace expansion along the first row.  Exponential cost; oracle use only."""
    m = np.asarray(m, dtype=np.float64)
    _require_square(m, "cofactor_det")
    n = m.shape[0]
    if n == 0:
        return 1.0
    if n == 1:
        return float(m[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += (-1) ** j * m[0, j] * cofactor_det(minor)
    return total

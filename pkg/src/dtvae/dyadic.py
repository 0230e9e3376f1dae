"""The dyadic transform ``B = I + eps * U @ V`` held in factored form.

``U`` is ``n x k`` and ``V`` is ``k x n`` with ``k <= n``.  Nothing in the hot
path builds the ``n x n`` matrix; every quantity the KL term needs reduces to
``k x k`` work on the capacitance matrix ``C = I_k + eps * V @ U``.

Inverse.  Woodbury with ``A = I_n`` and a middle factor ``eps * I_k`` gives::

    (I + U (eps I) V)^-1 = I - U ((eps I)^-1 + V U)^-1 V
                         = I - U (I/eps + V U)^-1 V
                         = I - eps U (I + eps V U)^-1 V
                         = I - eps U C^-1 V

The last form has no ``1/eps`` so it stays valid at ``eps = 0``.

Determinant.  Sylvester's identity ``det(I_n + XY) = det(I_k + YX)`` with
``X = eps U`` and ``Y = V`` gives ``det(B) = det(C)``.

Every function broadcasts over leading batch axes: ``u`` may be
``(..., n, k)`` with matching ``(..., n)`` vectors, one transform per row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (ContractError, SingularMatrixError, as_matrix, as_vector,
                     dense_inverse, lu_factor, lu_logdet, lu_solve)

DIAGNOSTIC_MAX_N = 256


@dataclass(frozen=True)
class DyadicTransform:
    epsilon: float
    u: np.ndarray
    v: np.ndarray
    max_rank: int | None = None

    def __post_init__(self):
        u = as_matrix(self.u, "u")
        v = as_matrix(self.v, "v")
        if not np.isfinite(self.epsilon):
            raise ContractError("epsilon must be finite")
        n, k = u.shape[-2:]
        if v.shape[-2:] != (k, n):
            raise ContractError(f"v must be {k}x{n} to match u {n}x{k}, got {v.shape[-2:]}")
        if u.shape[:-2] != v.shape[:-2]:
            raise ContractError(f"batch shapes differ: {u.shape[:-2]} vs {v.shape[:-2]}")
        cap = n if self.max_rank is None else self.max_rank
        if not 1 <= k <= cap:
            raise ContractError(f"rank k={k} outside [1, {cap}]")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def n(self) -> int:
        return self.u.shape[-2]

    @property
    def k(self) -> int:
        return self.u.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.u.shape[:-2]


@dataclass(frozen=True)
class DyadicGrads:
    d_u: np.ndarray
    d_v: np.ndarray

    def __add__(self, other: "DyadicGrads") -> "DyadicGrads":
        return DyadicGrads(self.d_u + other.d_u, self.d_v + other.d_v)


def _check_vec(b: DyadicTransform, x, name: str) -> np.ndarray:
    x = as_vector(x, name)
    if x.shape[-1] != b.n:
        raise ContractError(f"{name} has length {x.shape[-1]}, transform has n={b.n}")
    return x


def _vu(b: DyadicTransform, x):  # V @ x for batched vectors
    return np.einsum("...kn,...n->...k", b.v, x)


def _uk(b: DyadicTransform, w):  # U @ w
    return np.einsum("...nk,...k->...n", b.u, w)


def densify(b: DyadicTransform) -> np.ndarray:
    """Materialize B.  Diagnostics and tests only."""
    return np.eye(b.n) + b.epsilon * (b.u @ b.v)


def capacitance(b: DyadicTransform) -> np.ndarray:
    return np.eye(b.k) + b.epsilon * (b.v @ b.u)


def apply(b: DyadicTransform, y) -> np.ndarray:
    y = _check_vec(b, y, "y")
    return y + b.epsilon * _uk(b, _vu(b, y))


def _factor_capacitance(b: DyadicTransform):
    c = capacitance(b)
    lu, perm, _, singular = lu_factor(c)
    if np.any(singular):
        sign, logabs = lu_logdet(c)
        est = float(np.min(np.abs(sign * np.exp(logabs))))
        raise SingularMatrixError(f"capacitance I + eps*V@U is singular (|det C| ~ {est:.3e})",
                                  det_estimate=est)
    return lu, perm


def apply_inverse(b: DyadicTransform, z) -> np.ndarray:
    z = _check_vec(b, z, "z")
    lu, perm = _factor_capacitance(b)
    w = lu_solve(lu, perm, _vu(b, z)[..., None])[..., 0]
    return z - b.epsilon * _uk(b, w)


def logdet(b: DyadicTransform):
    """``(sign, log|det B|)`` computed as the k x k determinant of C."""
    return lu_logdet(capacitance(b))


def _diag_uv(b: DyadicTransform) -> np.ndarray:
    return np.einsum("...ja,...aj->...j", b.u, b.v)


def trace_bdbt(b: DyadicTransform, var) -> np.ndarray | float:
    """``Tr(B diag(var) B^T)`` in O(n k^2)."""
    var = _check_vec(b, var, "var")
    if np.any(var <= 0):
        raise ContractError("variances must be positive")
    eps = b.epsilon
    gram_u = np.einsum("...na,...nb->...ab", b.u, b.u)
    v_d_vt = np.einsum("...an,...n,...bn->...ab", b.v, var, b.v)
    out = (var.sum(axis=-1)
           + 2.0 * eps * np.sum(var * _diag_uv(b), axis=-1)
           + eps * eps * np.sum(gram_u * v_d_vt, axis=(-2, -1)))
    return float(out) if np.ndim(out) == 0 else out


def transformed_mean_sqnorm(b: DyadicTransform, mu) -> np.ndarray | float:
    z = apply(b, mu)
    out = np.sum(z * z, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def first_order_diagnostics(b: DyadicTransform) -> tuple[float, float]:
    """Distance of det(B) and B^-1 from their first-order expansions in eps.

    Returns ``(|det B - (1 + eps Tr(UV))|, max|B^-1 - (I - eps UV)|)``; both
    should shrink like eps**2.
    """
    if b.batch_shape:
        raise ContractError("diagnostics take a single transform")
    if b.n > DIAGNOSTIC_MAX_N:
        raise ContractError(f"n={b.n} exceeds diagnostic cap {DIAGNOSTIC_MAX_N}")
    uv = b.u @ b.v
    dense = np.eye(b.n) + b.epsilon * uv
    sign, logabs = lu_logdet(dense)
    det = sign * np.exp(logabs) if sign else 0.0
    det_gap = abs(det - (1.0 + b.epsilon * np.trace(uv)))
    inv_gap = float(np.max(np.abs(dense_inverse(dense) - (np.eye(b.n) - b.epsilon * uv))))
    return float(det_gap), inv_gap


def apply_backward(b: DyadicTransform, y, d_z) -> tuple[np.ndarray, DyadicGrads]:
    """Pull ``d_z`` back through ``z = y + eps U (V y)``."""
    y = _check_vec(b, y, "y")
    d_z = _check_vec(b, d_z, "d_z")
    eps = b.epsilon
    ut_dz = np.einsum("...nk,...n->...k", b.u, d_z)
    vy = _vu(b, y)
    d_y = d_z + eps * np.einsum("...kn,...k->...n", b.v, ut_dz)
    d_u = eps * d_z[..., :, None] * vy[..., None, :]
    d_v = eps * ut_dz[..., :, None] * y[..., None, :]
    return d_y, DyadicGrads(d_u, d_v)


def kl_terms_backward(b: DyadicTransform, mu, var, weight=1.0):
    """Gradients of ``weight * (Tr(B D B^T) + |B mu|^2 - 2 log|det B|)``.

    ``D = diag(var)``.  Returns ``(d_mu, d_var, DyadicGrads)``.  The log-det
    gradient goes through C: ``d log|det C| = Tr(C^-1 dC)`` with
    ``dC = eps (dV U + V dU)``, so ``dU = eps V^T C^-T`` and
    ``dV = eps C^-T U^T``.
    """
    mu = _check_vec(b, mu, "mu")
    var = _check_vec(b, var, "var")
    if np.any(var <= 0):
        raise ContractError("variances must be positive")
    w = np.asarray(weight, dtype=np.float64)
    eps = b.epsilon
    u, v = b.u, b.v

    lu, perm = _factor_capacitance(b)
    eye = np.broadcast_to(np.eye(b.k), lu.shape)
    c_inv_t = np.swapaxes(lu_solve(lu, perm, eye), -1, -2)

    gram_u = np.einsum("...na,...nb->...ab", u, u)
    v_d_vt = np.einsum("...an,...n,...bn->...ab", v, var, v)
    g_v = gram_u @ v  # k x n

    # trace term
    d_var = 1.0 + 2.0 * eps * _diag_uv(b) + eps * eps * np.sum(v * g_v, axis=-2)
    du = 2.0 * eps * (var[..., :, None] * np.swapaxes(v, -1, -2) + eps * (u @ v_d_vt))
    dv = 2.0 * eps * (np.swapaxes(u, -1, -2) * var[..., None, :] + eps * g_v * var[..., None, :])

    # mean term
    z = apply(b, mu)
    ut_z = np.einsum("...nk,...n->...k", u, z)
    d_mu = 2.0 * (z + eps * np.einsum("...kn,...k->...n", v, ut_z))
    du = du + 2.0 * eps * z[..., :, None] * _vu(b, mu)[..., None, :]
    dv = dv + 2.0 * eps * ut_z[..., :, None] * mu[..., None, :]

    # -2 log|det C|
    du = du - 2.0 * eps * (np.swapaxes(v, -1, -2) @ c_inv_t)
    dv = dv - 2.0 * eps * (c_inv_t @ np.swapaxes(u, -1, -2))

    wv = w[..., None]
    wm = w[..., None, None]
    return wv * d_mu, wv * d_var, DyadicGrads(wm * du, wm * dv)

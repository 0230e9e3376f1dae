"""Diagonal Gaussians, reparameterized sampling and KL divergences.

All KL functions return a nonnegative divergence; the ELBO subtracts it.
The dyadic posterior is ``N(B mu, B diag(sigma^2) B^T)`` and its KL against
``N(0, I)`` is assembled from the factored pieces in :mod:`dtvae.dyadic`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dyadic
from .linalg import ContractError, as_matrix, as_vector, dense_inverse, lu_logdet

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0


class NonPDPosteriorError(ArithmeticError):
    """det(B) <= 0: the transform has left the near-identity regime."""

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class DiagGaussian:
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        mu = as_vector(self.mu, "mu")
        log_var = as_vector(self.log_var, "log_var")
        if mu.shape != log_var.shape:
            raise ContractError(f"mu {mu.shape} and log_var {log_var.shape} differ")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "log_var", np.clip(log_var, LOG_VAR_MIN, LOG_VAR_MAX))

    @property
    def n(self) -> int:
        return self.mu.shape[-1]

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)


@dataclass(frozen=True)
class ReparamSample:
    alpha: np.ndarray
    y: np.ndarray
    z: np.ndarray


def sample(g: DiagGaussian, alpha) -> np.ndarray:
    alpha = as_vector(alpha, "alpha")
    if alpha.shape[-1] != g.n:
        raise ContractError(f"alpha has length {alpha.shape[-1]}, expected {g.n}")
    return g.mu + alpha * g.std


def reparameterize(g: DiagGaussian, alpha, b: dyadic.DyadicTransform | None = None) -> ReparamSample:
    """Draw ``y = mu + alpha * sigma`` and push it through ``b`` when given."""
    y = sample(g, alpha)
    z = y if b is None else dyadic.apply(b, y)
    return ReparamSample(np.asarray(alpha, dtype=np.float64), y, z)


def kl_diag(g: DiagGaussian):
    out = -0.5 * np.sum(1.0 + g.log_var - g.mu ** 2 - g.var, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _require_spd(s: np.ndarray, name: str) -> np.ndarray:
    s = 0.5 * (s + s.T)
    a = s.copy()
    n = a.shape[0]
    for j in range(n):  # unpivoted elimination: all pivots positive iff SPD
        if a[j, j] <= 0:
            raise ContractError(f"{name} is not positive definite (pivot {j} = {a[j, j]:.3e})")
        a[j + 1:, j + 1:] -= np.outer(a[j + 1:, j], a[j, j + 1:]) / a[j, j]
    return s


def kl_dense_oracle(mu0, sigma0, mu1, sigma1) -> float:
    """KL(N(mu0, sigma0) || N(mu1, sigma1)) with dense n x n algebra."""
    mu0, mu1 = as_vector(mu0, "mu0"), as_vector(mu1, "mu1")
    sigma0 = _require_spd(as_matrix(sigma0, "sigma0"), "sigma0")
    sigma1 = _require_spd(as_matrix(sigma1, "sigma1"), "sigma1")
    n = mu0.shape[0]
    if sigma0.shape != (n, n) or sigma1.shape != (n, n) or mu1.shape != (n,):
        raise ContractError("inconsistent dimensions")
    inv1 = dense_inverse(sigma1)
    diff = mu1 - mu0
    _, ld0 = lu_logdet(sigma0)
    _, ld1 = lu_logdet(sigma1)
    return 0.5 * (np.trace(inv1 @ sigma0) + diff @ inv1 @ diff - n + ld1 - ld0)


def kl_dt(g: DiagGaussian, b: dyadic.DyadicTransform):
    """KL of ``N(B mu, B diag(var) B^T)`` from ``N(0, I)`` in O(n k^2 + k^3)."""
    if b.n != g.n:
        raise ContractError(f"transform n={b.n} but posterior n={g.n}")
    sign, logabs = dyadic.logdet(b)
    bad = np.asarray(sign) != 1
    if np.any(bad):
        idx = np.argwhere(bad)
        raise NonPDPosteriorError(f"det(B) <= 0 for {len(idx)} posterior(s); first at {tuple(idx[0])}",
                                  index=tuple(idx[0]))
    out = 0.5 * (dyadic.trace_bdbt(b, g.var) + dyadic.transformed_mean_sqnorm(b, g.mu)
                 - g.n - np.sum(g.log_var, axis=-1) - 2.0 * logabs)
    return float(out) if np.ndim(out) == 0 else out


def bernoulli_logprob(x, logits):
    """``sum_j x_j log s(l_j) + (1 - x_j) log(1 - s(l_j))`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    if x.shape != logits.shape:
        raise ContractError(f"x {x.shape} and logits {logits.shape} differ")
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    out = np.sum(x * logits - softplus, axis=-1)
    return float(out) if np.ndim(out) == 0 else out

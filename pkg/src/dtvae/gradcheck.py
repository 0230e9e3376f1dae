"""Central finite-difference check of the full-model ELBO gradient.

The check runs on a tiny network with frozen noise and a fixed binarized
input.  Error per parameter block is ``max|analytic - numeric| / max|numeric|``
over the probed entries, so entries that are zero in both routes do not
dominate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn, vae

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class BlockError:
    name: str
    rel_error: float
    max_grad: float
    probed: int


def tiny_setup(seed: int, latent: int = 4, rank: int = 2, hidden: int = 8, input_dim: int = 784,
               epsilon: float = 0.1, batch: int = 1, bounded_factors: bool = True):
    """Params, binarized inputs and noise for a gradient check.

    Biases and the factor heads get full-scale random values so every block
    carries a gradient well above finite-difference noise.
    """
    cfg = nn.ModelConfig(input_dim, hidden, latent, rank, epsilon, bounded_factors)
    p = nn.init_params(cfg, seed)
    rng = np.random.default_rng([seed, 99])
    for name, a in p.arrays.items():
        if name.endswith(".b"):
            a += rng.uniform(-0.1, 0.1, size=a.shape)
        elif name.split(".")[0] in ("u", "v"):
            a /= nn.FACTOR_HEAD_SCALE
    xs = (rng.random((batch, input_dim)) < rng.random((batch, input_dim))).astype(np.float64)
    alphas = rng.standard_normal((batch, latent))
    return p, xs, alphas


def _loss(p, xs, alphas) -> float:
    recon, kl = vae.elbo_per_datapoint(p, xs, alphas)
    return -float(np.mean(recon - kl))


def check_gradients(p: nn.ModelParams, xs, alphas, step: float = DEFAULT_STEP,
                    max_entries: int | None = 200, seed: int = 0,
                    grad_fn: Callable | None = None) -> list[BlockError]:
    """Compare analytic gradients of ``-elbo`` against central differences.

    ``max_entries`` caps how many entries per block are probed (chosen at
    random); ``None`` probes all of them.  ``grad_fn`` swaps in a different
    analytic route, which is how the check itself gets mutation-tested.
    """
    grad_fn = grad_fn or (lambda q, x, a: vae.elbo_minibatch(q, x, a)[1])
    analytic = grad_fn(p, xs, alphas)
    rng = np.random.default_rng(seed)
    results = []
    for name in p.config.param_names():
        arr = p.arrays[name]
        flat = arr.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = _loss(p, xs, alphas)
            flat[i] = orig - step
            down = _loss(p, xs, alphas)
            flat[i] = orig
            numeric[j] = (up - down) / (2 * step)
        ana = analytic[name].reshape(-1)[idx]
        scale = max(np.max(np.abs(numeric)), np.max(np.abs(ana)), 1e-12)
        results.append(BlockError(name, float(np.max(np.abs(ana - numeric)) / scale), float(scale), len(idx)))
    return results


def worst(results: list[BlockError]) -> BlockError:
    return max(results, key=lambda r: r.rel_error)

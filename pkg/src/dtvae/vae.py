"""ELBO, training loop and test-set evaluation.

Per datapoint: encode ``x`` to ``(mu, log_var, U, V)``, draw
``y = mu + alpha * sigma``, transform ``z = (I + eps U V) y``, decode ``z`` to
Bernoulli logits.  With ``rank == 0`` or ``epsilon == 0`` the transform and
its KL are skipped entirely and the model is the plain diagonal VAE.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import data as data_mod
from . import dyadic, gaussian, nn
from .gaussian import DiagGaussian, NonPDPosteriorError


@dataclass(frozen=True)
class ElboBreakdown:
    recon: float
    kl: float

    @property
    def elbo(self) -> float:
        return self.recon - self.kl


@dataclass(frozen=True)
class TrainConfig:
    latent: int = 50
    rank: int = 0
    epsilon: float = 0.001
    batch_size: int = 128
    epochs: int = 1
    lr: float = 1e-3
    seed: int = 0
    eval_samples: int = 1
    hidden: int = 500
    input_dim: int = 784
    validation: bool = False
    data_dir: str | None = None
    subset: int | None = None
    bounded_factors: bool = True

    def __post_init__(self):
        if self.latent < 1 or self.rank < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("need latent >= 1, rank >= 0, batch_size >= 1, epochs >= 0")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")

    def model_config(self) -> nn.ModelConfig:
        return nn.ModelConfig(self.input_dim, self.hidden, self.latent, self.rank, self.epsilon,
                              self.bounded_factors)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    split: str
    elbo: float
    recon: float
    kl: float
    wall_seconds: float


def uses_transform(cfg: nn.ModelConfig) -> bool:
    return cfg.rank > 0 and cfg.epsilon != 0.0


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(p: nn.ModelParams, xs: np.ndarray, alphas: np.ndarray):
    cfg = p.config
    dt = uses_transform(cfg)
    enc, enc_tape = nn.encoder_forward(p, xs, with_factors=dt)
    g = DiagGaussian(enc.mu, enc.log_var)
    y = gaussian.sample(g, alphas)
    b = None
    if dt:
        b = dyadic.DyadicTransform(cfg.epsilon, enc.u, enc.v)
        try:
            kl = gaussian.kl_dt(g, b)
        except NonPDPosteriorError as exc:
            raise NonPDPosteriorError(f"datapoint {exc.index[0]} in batch: {exc}",
                                      index=exc.index) from exc
        z = dyadic.apply(b, y)
    else:
        kl = gaussian.kl_diag(g)
        z = y
    logits, dec_tape = nn.decoder_forward(p, z)
    recon = gaussian.bernoulli_logprob(xs, logits)
    return recon, kl, (enc, enc_tape, dec_tape, g, b, y, logits)


def elbo_per_datapoint(p: nn.ModelParams, xs, alphas) -> tuple[np.ndarray, np.ndarray]:
    """``(recon, kl)`` arrays of shape ``(M,)``; no gradients."""
    recon, kl, _ = _forward(p, np.asarray(xs, dtype=np.float64), np.asarray(alphas, dtype=np.float64))
    return recon, kl


def elbo_minibatch(p: nn.ModelParams, xs, alphas) -> tuple[ElboBreakdown, dict]:
    """Batch-mean ELBO and exact gradients of ``-elbo`` for every parameter."""
    xs = np.asarray(xs, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if len(xs) == 0 or alphas.shape != (len(xs), p.config.latent):
        raise ValueError(f"need a nonempty batch with alphas of shape (M, {p.config.latent})")
    recon, kl, (enc, enc_tape, dec_tape, g, b, y, logits) = _forward(p, xs, alphas)
    m = len(xs)
    inv_m = 1.0 / m
    d_logits = (_sigmoid(logits) - xs) * inv_m
    std = g.std

    if b is None:
        d_mu = g.mu * inv_m
        d_lv = 0.5 * (g.var - 1.0) * inv_m

        def chain(d_z):
            return d_z, d_z * alphas * std * 0.5, None, None

        grads = nn.backward(p, enc_tape, dec_tape, d_logits, d_mu, d_lv, chain=chain)
    else:
        d_mu, d_var, kg = dyadic.kl_terms_backward(b, g.mu, g.var, 0.5 * inv_m)
        d_lv = d_var * g.var - 0.5 * inv_m

        def chain(d_z):
            d_y, ag = dyadic.apply_backward(b, y, d_z)
            return d_y, d_y * alphas * std * 0.5, ag.d_u, ag.d_v

        grads = nn.backward(p, enc_tape, dec_tape, d_logits, d_mu, d_lv, kg.d_u, kg.d_v, chain=chain)
    return ElboBreakdown(float(np.mean(recon)), float(np.mean(kl))), grads


def evaluate(p: nn.ModelParams, images: np.ndarray, samples: int = 1, seed: int = 0,
             batch_size: int = 500) -> float:
    """Mean over datapoints of the ``samples``-sample average single-sample ELBO.

    Each image is binarized once with a seed-determined draw; the noise
    ``alpha`` is redrawn for every sample.
    """
    return evaluate_breakdown(p, images, samples, seed, batch_size).elbo


def evaluate_breakdown(p: nn.ModelParams, images: np.ndarray, samples: int = 1, seed: int = 0,
                       batch_size: int = 500) -> ElboBreakdown:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = data_mod.epoch_rng(seed, 0, data_mod.STREAM_EVAL)
    n = p.config.latent
    recon_sum = kl_sum = 0.0
    for start in range(0, len(images), batch_size):
        xs = data_mod.dynamic_binarize(images[start:start + batch_size], rng)
        r_acc = np.zeros(len(xs))
        k_acc = np.zeros(len(xs))
        for _ in range(samples):
            recon, kl = elbo_per_datapoint(p, xs, rng.standard_normal((len(xs), n)))
            r_acc += recon
            k_acc += kl
        recon_sum += float(np.sum(r_acc / samples))
        kl_sum += float(np.sum(k_acc / samples))
    return ElboBreakdown(recon_sum / len(images), kl_sum / len(images))


@dataclass
class TrainState:
    params: nn.ModelParams
    adam: nn.AdamState
    epoch: int = 0  # completed epochs
    history: list[MetricsRow] = field(default_factory=list)


def init_state(config: TrainConfig, scheme: str = "glorot") -> TrainState:
    params = nn.init_params(config.model_config(), config.seed, scheme)
    return TrainState(params, nn.AdamState.zeros_like(params))


def train_epoch(state: TrainState, config: TrainConfig, train_set: data_mod.Dataset) -> ElboBreakdown:
    """One pass of shuffled, re-binarized minibatches with an Adam step each."""
    epoch = state.epoch
    noise = data_mod.epoch_rng(config.seed, epoch, data_mod.STREAM_NOISE)
    n = config.latent
    recon_sum = kl_sum = 0.0
    for batch in data_mod.minibatches(train_set, config.batch_size, config.seed, epoch):
        alphas = noise.standard_normal((len(batch.x), n))
        stats, grads = elbo_minibatch(state.params, batch.x, alphas)
        nn.adam_step(state.params, state.adam, grads, config.lr)
        recon_sum += stats.recon * len(batch.x)
        kl_sum += stats.kl * len(batch.x)
    state.epoch += 1
    return ElboBreakdown(recon_sum / len(train_set), kl_sum / len(train_set))


def train(config: TrainConfig, train_set: data_mod.Dataset, valid_set: data_mod.Dataset | None = None,
          state: TrainState | None = None, timing: bool = True,
          on_epoch_end: Callable[[TrainState, list[MetricsRow]], None] | None = None
          ) -> tuple[nn.ModelParams, list[MetricsRow]]:
    """Run epochs until ``config.epochs`` are complete.

    Passing a restored ``state`` resumes where it left off; since every random
    stream is keyed by ``(seed, epoch)``, the result matches an uninterrupted run.
    """
    state = state or init_state(config)
    while state.epoch < config.epochs:
        t0 = time.perf_counter()
        stats = train_epoch(state, config, train_set)
        wall = time.perf_counter() - t0 if timing else 0.0
        rows = [MetricsRow(state.epoch, "train", stats.elbo, stats.recon, stats.kl, wall)]
        if valid_set is not None:
            v = evaluate_breakdown(state.params, valid_set.images, config.eval_samples,
                                   seed=config.seed * 1000 + state.epoch)
            rows.append(MetricsRow(state.epoch, "valid", v.elbo, v.recon, v.kl, wall))
        state.history.extend(rows)
        if on_epoch_end is not None:
            on_epoch_end(state, rows)
    return state.params, state.history

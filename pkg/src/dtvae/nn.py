"""Feed-forward encoder/decoder with hand-written backprop, plus Adam.

Both networks are two tanh layers followed by linear heads.  The encoder has
four heads: mean, log-variance and, when ``rank > 0``, flat U and V factors
that are reshaped per datapoint to ``n x k`` and ``k x n``.

With ``bounded_factors`` (the default) U and V pass through tanh, so every
entry lies in (-1, 1) and ``||eps V U||_2 < eps * n * k``.  When that bound is
below 1, det(I + eps U V) stays positive for every input.  Adam takes
lr-sized steps on the factor heads however small their gradients are, so
linear heads leave the near-identity regime within a few dozen updates.

Weights follow the ``out x in`` convention and everything is batched along
axis 0, so a layer computes ``h @ w.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import LOG_VAR_MAX, LOG_VAR_MIN
from .linalg import ContractError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
FACTOR_HEAD_SCALE = 0.01

# Fixed seed-stream id per block, so adding the U/V heads leaves the other
# blocks' initial values untouched.
_BLOCK_STREAM = {"enc1": 0, "enc2": 1, "mu": 2, "logvar": 3, "u": 4, "v": 5,
                 "dec1": 6, "dec2": 7, "out": 8}


class PoisonedUpdateError(FloatingPointError):
    def __init__(self, message: str, bad_blocks: list[str]):
        super().__init__(message)
        self.bad_blocks = bad_blocks


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 784
    hidden: int = 500
    latent: int = 50
    rank: int = 0
    epsilon: float = 0.001
    bounded_factors: bool = True

    def __post_init__(self):
        if min(self.input_dim, self.hidden, self.latent) < 1:
            raise ContractError("input_dim, hidden and latent must be positive")
        if not 0 <= self.rank <= self.latent:
            raise ContractError(f"rank must lie in [0, latent], got {self.rank}")
        if not self.epsilon >= 0:
            raise ContractError("epsilon must be >= 0")

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        """``(out, in)`` for every dense block, in canonical order."""
        n, h, k = self.latent, self.hidden, self.rank
        shapes = {"enc1": (h, self.input_dim), "enc2": (h, h), "mu": (n, h), "logvar": (n, h)}
        if k:
            shapes["u"] = (n * k, h)
            shapes["v"] = (k * n, h)
        shapes.update({"dec1": (h, n), "dec2": (h, h), "out": (self.input_dim, h)})
        return shapes

    def param_names(self) -> list[str]:
        return [f"{blk}.{p}" for blk in self.layer_shapes() for p in ("w", "b")]


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: a.copy() for k, a in self.arrays.items()})


@dataclass(frozen=True)
class EncoderOutputs:
    mu: np.ndarray
    log_var: np.ndarray
    u: np.ndarray | None
    v: np.ndarray | None


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, p: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in p.arrays.items()},
                   {k: np.zeros_like(a) for k, a in p.arrays.items()})


def init_params(config: ModelConfig, seed: int, scheme: str = "glorot") -> ModelParams:
    """Glorot-uniform weights, zero biases; U/V heads scaled down by 0.01.

    ``scheme="zeros"`` gives the all-zero network used as an analytic anchor.
    """
    if scheme not in ("glorot", "zeros"):
        raise ContractError(f"unknown init scheme {scheme!r}")
    arrays = {}
    for blk, (fan_out, fan_in) in config.layer_shapes().items():
        if scheme == "zeros":
            w = np.zeros((fan_out, fan_in))
        else:
            rng = np.random.default_rng([seed, _BLOCK_STREAM[blk]])
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            if blk in ("u", "v"):
                w *= FACTOR_HEAD_SCALE
        arrays[f"{blk}.w"] = w
        arrays[f"{blk}.b"] = np.zeros(fan_out)
    return ModelParams(config, arrays)


def _dense(p: ModelParams, blk: str, h: np.ndarray) -> np.ndarray:
    return h @ p.arrays[f"{blk}.w"].T + p.arrays[f"{blk}.b"]


def _check_input(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise ContractError(f"{what} must be (batch, {width}), got {x.shape}")
    return x


def encoder_forward(p: ModelParams, x, with_factors: bool = True):
    """Encode a batch ``x`` of shape ``(M, input_dim)``.

    Returns ``(EncoderOutputs, tape)``.  ``with_factors=False`` skips the U/V
    heads, which is what the diagonal path uses.
    """
    cfg = p.config
    x = _check_input(x, cfg.input_dim, "encoder input")
    h1 = np.tanh(_dense(p, "enc1", x))
    h2 = np.tanh(_dense(p, "enc2", h1))
    mu = _dense(p, "mu", h2)
    lv_raw = _dense(p, "logvar", h2)
    u = v = None
    if cfg.rank and with_factors:
        m, n, k = x.shape[0], cfg.latent, cfg.rank
        u = _dense(p, "u", h2)
        v = _dense(p, "v", h2)
        if cfg.bounded_factors:
            u, v = np.tanh(u), np.tanh(v)
        u = u.reshape(m, n, k)
        v = v.reshape(m, k, n)
    out = EncoderOutputs(mu, np.clip(lv_raw, LOG_VAR_MIN, LOG_VAR_MAX), u, v)
    return out, {"x": x, "h1": h1, "h2": h2, "lv_raw": lv_raw, "u": u, "v": v}


def decoder_forward(p: ModelParams, z):
    """Map latents ``(M, latent)`` to Bernoulli logits ``(M, input_dim)``."""
    z = _check_input(z, p.config.latent, "decoder input")
    h1 = np.tanh(_dense(p, "dec1", z))
    h2 = np.tanh(_dense(p, "dec2", h1))
    return _dense(p, "out", h2), {"z": z, "h1": h1, "h2": h2}


def _dense_backward(p, blk, h_in, d_out, grads):
    grads[f"{blk}.w"] = d_out.T @ h_in
    grads[f"{blk}.b"] = d_out.sum(axis=0)
    return d_out @ p.arrays[f"{blk}.w"]


def decoder_backward(p: ModelParams, tape: dict, d_logits) -> tuple[dict, np.ndarray]:
    """Returns ``(grads for decoder blocks, d_z)``."""
    g: dict[str, np.ndarray] = {}
    d_h2 = _dense_backward(p, "out", tape["h2"], d_logits, g)
    d_h1 = _dense_backward(p, "dec2", tape["h1"], d_h2 * (1.0 - tape["h2"] ** 2), g)
    d_z = _dense_backward(p, "dec1", tape["z"], d_h1 * (1.0 - tape["h1"] ** 2), g)
    return g, d_z


def encoder_backward(p: ModelParams, tape: dict, d_mu, d_log_var, d_u=None, d_v=None) -> dict:
    cfg = p.config
    g: dict[str, np.ndarray] = {}
    h2 = tape["h2"]
    inside = (tape["lv_raw"] >= LOG_VAR_MIN) & (tape["lv_raw"] <= LOG_VAR_MAX)
    d_h2 = _dense_backward(p, "mu", h2, d_mu, g)
    d_h2 = d_h2 + _dense_backward(p, "logvar", h2, d_log_var * inside, g)
    if cfg.rank and d_u is None:
        # factor heads unused (diagonal path): zero grads, d_h2 untouched
        for blk in ("u", "v"):
            g[f"{blk}.w"] = np.zeros_like(p.arrays[f"{blk}.w"])
            g[f"{blk}.b"] = np.zeros_like(p.arrays[f"{blk}.b"])
    elif cfg.rank:
        m = h2.shape[0]
        if cfg.bounded_factors:
            d_u = d_u * (1.0 - tape["u"] ** 2)
            d_v = d_v * (1.0 - tape["v"] ** 2)
        d_h2 = d_h2 + _dense_backward(p, "u", h2, d_u.reshape(m, -1), g)
        d_h2 = d_h2 + _dense_backward(p, "v", h2, d_v.reshape(m, -1), g)
    d_h1 = _dense_backward(p, "enc2", tape["h1"], d_h2 * (1.0 - h2 ** 2), g)
    _dense_backward(p, "enc1", tape["x"], d_h1 * (1.0 - tape["h1"] ** 2), g)
    return g


def backward(p: ModelParams, enc_tape: dict, dec_tape: dict, d_logits,
             d_mu_direct, d_log_var_direct, d_u_direct=None, d_v_direct=None,
             chain=None) -> dict:
    """Full-model gradients from the two tapes.

    ``d_*_direct`` are gradients reaching the encoder heads without passing
    through the decoder (the KL term).  ``chain`` maps the decoder's ``d_z``
    to extra ``(d_mu, d_log_var, d_u, d_v)`` contributions through the
    sampling path; the caller owns that step because it knows the noise.
    """
    dec_g, d_z = decoder_backward(p, dec_tape, d_logits)
    d_mu, d_lv, d_u, d_v = d_mu_direct, d_log_var_direct, d_u_direct, d_v_direct
    if chain is not None:
        c_mu, c_lv, c_u, c_v = chain(d_z)
        d_mu, d_lv = d_mu + c_mu, d_lv + c_lv
        if c_u is not None:
            d_u = c_u if d_u is None else d_u + c_u
            d_v = c_v if d_v is None else d_v + c_v
    g = encoder_backward(p, enc_tape, d_mu, d_lv, d_u, d_v)
    g.update(dec_g)
    return {name: g[name] for name in p.config.param_names()}


def adam_step(p: ModelParams, s: AdamState, grads: dict, lr: float) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam step, in place.  Refuses non-finite gradients."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise PoisonedUpdateError(f"non-finite gradients in {', '.join(bad)}", bad)
    s.step += 1
    bc1 = 1.0 - ADAM_BETA1 ** s.step
    bc2 = 1.0 - ADAM_BETA2 ** s.step
    for k in p.config.param_names():
        g = grads[k]
        m, v = s.m[k], s.v[k]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        p.arrays[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return p, s

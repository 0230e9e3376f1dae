import numpy as np
import pytest

from dtvae import nn
from dtvae.linalg import ContractError
from dtvae.nn import AdamState, ModelConfig, PoisonedUpdateError


def small_config(**kw):
    base = dict(input_dim=12, hidden=6, latent=4, rank=2, epsilon=0.1)
    base.update(kw)
    return ModelConfig(**base)


class TestConfig:
    def test_default_head_widths(self):
        shapes = ModelConfig(rank=10).layer_shapes()
        assert shapes["mu"] == (50, 500) and shapes["logvar"] == (50, 500)
        assert shapes["u"] == (500, 500) and shapes["v"] == (500, 500)
        assert shapes["enc1"] == (500, 784) and shapes["out"] == (784, 500)

    def test_baseline_has_no_factor_heads(self):
        names = ModelConfig(rank=0).param_names()
        assert not any(n.startswith(("u.", "v.")) for n in names)
        assert len(names) == 14

    @pytest.mark.parametrize("kw", [dict(rank=-1), dict(rank=5, latent=4), dict(hidden=0), dict(epsilon=-1.0)])
    def test_rejects_bad_config(self, kw):
        with pytest.raises(ContractError):
            small_config(**kw)


class TestInit:
    def test_deterministic(self):
        a, b = nn.init_params(small_config(), 3), nn.init_params(small_config(), 3)
        for k in a.arrays:
            np.testing.assert_array_equal(a[k], b[k])

    def test_seed_changes_weights(self):
        a, b = nn.init_params(small_config(), 3), nn.init_params(small_config(), 4)
        assert not np.array_equal(a["enc1.w"], b["enc1.w"])

    def test_glorot_bounds_and_moments(self):
        p = nn.init_params(ModelConfig(), 0)
        w = p["enc1.w"]
        limit = np.sqrt(6.0 / (784 + 500))
        assert np.max(np.abs(w)) <= limit
        # uniform(-a, a) has variance a^2 / 3
        assert w.var() == pytest.approx(limit ** 2 / 3, rel=0.01)
        assert np.all(p["enc1.b"] == 0)

    def test_factor_heads_scaled(self):
        p = nn.init_params(ModelConfig(rank=10), 0)
        limit = np.sqrt(6.0 / 1000)
        assert np.max(np.abs(p["u.w"])) <= nn.FACTOR_HEAD_SCALE * limit

    def test_shared_blocks_independent_of_rank(self):
        a = nn.init_params(small_config(rank=0), 7)
        b = nn.init_params(small_config(rank=2), 7)
        for k in a.arrays:
            np.testing.assert_array_equal(a[k], b[k])

    def test_unknown_scheme(self):
        with pytest.raises(ContractError):
            nn.init_params(small_config(), 0, scheme="he")


class TestForward:
    def test_zero_network(self):
        p = nn.init_params(ModelConfig(rank=10), 0, scheme="zeros")
        enc, _ = nn.encoder_forward(p, np.ones((3, 784)))
        assert np.all(enc.mu == 0) and np.all(enc.log_var == 0)
        assert enc.u.shape == (3, 50, 10) and enc.v.shape == (3, 10, 50)
        logits, _ = nn.decoder_forward(p, np.ones((3, 50)))
        assert logits.shape == (3, 784) and np.all(logits == 0)

    def test_log_var_clipped(self):
        p = nn.init_params(small_config(), 0, scheme="zeros")
        p.arrays["logvar.b"][:] = [50.0, -50.0, 3.0, 0.0]
        enc, _ = nn.encoder_forward(p, np.zeros((1, 12)))
        np.testing.assert_array_equal(enc.log_var[0], [10.0, -10.0, 3.0, 0.0])

    def test_bounded_factors_in_unit_interval(self):
        p = nn.init_params(small_config(), 0)
        p.arrays["u.b"][:] = 100.0
        enc, _ = nn.encoder_forward(p, np.ones((2, 12)))
        assert np.all(np.abs(enc.u) <= 1.0)

    def test_batch_rows_independent(self):
        rng = np.random.default_rng(1)
        p = nn.init_params(small_config(), 0)
        x = rng.random((5, 12))
        enc_all, _ = nn.encoder_forward(p, x)
        enc_one, _ = nn.encoder_forward(p, x[2:3])
        np.testing.assert_allclose(enc_all.mu[2], enc_one.mu[0], atol=1e-15)

    def test_wrong_width(self):
        p = nn.init_params(small_config(), 0)
        with pytest.raises(ContractError):
            nn.encoder_forward(p, np.zeros((1, 11)))
        with pytest.raises(ContractError):
            nn.decoder_forward(p, np.zeros(4))


def _randomize(p, rng):
    for a in p.arrays.values():
        a[...] = rng.uniform(-0.5, 0.5, size=a.shape)
    return p


@pytest.mark.parametrize("bounded", [True, False])
def test_encoder_backward_finite_differences(bounded):
    # scalar loss L = sum(c_mu*mu) + sum(c_lv*log_var) + sum(c_u*U) + sum(c_v*V)
    rng = np.random.default_rng(2)
    p = _randomize(nn.init_params(small_config(bounded_factors=bounded), 0), rng)
    x = rng.random((3, 12))
    c = {name: rng.standard_normal(shape) for name, shape in
         (("mu", (3, 4)), ("lv", (3, 4)), ("u", (3, 4, 2)), ("v", (3, 2, 4)))}

    def loss():
        e, _ = nn.encoder_forward(p, x)
        return np.sum(c["mu"] * e.mu) + np.sum(c["lv"] * e.log_var) + np.sum(c["u"] * e.u) + np.sum(c["v"] * e.v)

    _, tape = nn.encoder_forward(p, x)
    g = nn.encoder_backward(p, tape, c["mu"], c["lv"], c["u"], c["v"])
    h = 1e-6
    for name in ("enc1.w", "enc2.b", "mu.w", "logvar.b", "u.w", "v.b"):
        flat = p.arrays[name].reshape(-1)
        for i in rng.choice(flat.size, size=min(10, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            assert g[name].reshape(-1)[i] == pytest.approx((up - down) / (2 * h), abs=1e-7), name


def test_decoder_backward_finite_differences():
    rng = np.random.default_rng(3)
    p = _randomize(nn.init_params(small_config(), 0), rng)
    z = rng.standard_normal((3, 4))
    c = rng.standard_normal((3, 12))
    logits, tape = nn.decoder_forward(p, z)
    g, d_z = nn.decoder_backward(p, tape, c)
    h = 1e-6
    for i in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        num = (np.sum(c * nn.decoder_forward(p, zp)[0]) - np.sum(c * nn.decoder_forward(p, zm)[0])) / (2 * h)
        assert d_z[i] == pytest.approx(num, abs=1e-7)
    # bias gradient of the output layer is the column sum of the upstream gradient
    np.testing.assert_allclose(g["out.b"], c.sum(axis=0), atol=1e-14)


def test_unused_factor_heads_get_zero_grads():
    rng = np.random.default_rng(4)
    p = nn.init_params(small_config(), 0)
    x = rng.random((2, 12))
    _, tape = nn.encoder_forward(p, x, with_factors=False)
    g = nn.encoder_backward(p, tape, rng.standard_normal((2, 4)), rng.standard_normal((2, 4)))
    assert np.all(g["u.w"] == 0) and np.all(g["v.b"] == 0)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = nn.init_params(small_config(), 0)
        before = p.copy()
        s = AdamState.zeros_like(p)
        nn.adam_step(p, s, {k: np.zeros_like(a) for k, a in p.arrays.items()}, 1e-3)
        for k in p.arrays:
            np.testing.assert_array_equal(p[k], before[k])
        assert s.step == 1

    def test_first_step_is_lr_times_sign(self):
        # after bias correction m/sqrt(v) = g/|g|, so the step is lr g / (|g| + eps)
        rng = np.random.default_rng(5)
        p = nn.init_params(small_config(), 0)
        before = p.copy()
        grads = {k: rng.standard_normal(a.shape) for k, a in p.arrays.items()}
        nn.adam_step(p, AdamState.zeros_like(p), grads, 1e-3)
        for k in p.arrays:
            np.testing.assert_allclose(before[k] - p[k], 1e-3 * grads[k] / (np.abs(grads[k]) + 1e-8),
                                       rtol=1e-9)

    def test_matches_textbook_over_steps(self):
        rng = np.random.default_rng(6)
        p = nn.init_params(small_config(rank=0), 0)
        s = AdamState.zeros_like(p)
        theta = p["mu.w"].copy()
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        for t in range(1, 6):
            grads = {k: rng.standard_normal(a.shape) for k, a in p.arrays.items()}
            g = grads["mu.w"]
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            theta = theta - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            nn.adam_step(p, s, grads, 0.01)
        np.testing.assert_allclose(p["mu.w"], theta, atol=1e-14)

    def test_poisoned_update_leaves_state(self):
        p = nn.init_params(small_config(), 0)
        before = p.copy()
        s = AdamState.zeros_like(p)
        grads = {k: np.zeros_like(a) for k, a in p.arrays.items()}
        grads["dec2.w"][0, 0] = np.nan
        with pytest.raises(PoisonedUpdateError) as info:
            nn.adam_step(p, s, grads, 1e-3)
        assert info.value.bad_blocks == ["dec2.w"]
        assert s.step == 0
        for k in p.arrays:
            np.testing.assert_array_equal(p[k], before[k])

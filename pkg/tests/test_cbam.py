"""Spatial/channel gating, adaptive fusion, token embedding."""

import numpy as np

from hsiformer import autodiff as ad
from hsiformer import cbam
from hsiformer.autodiff import Tape, Tensor

from helpers import central_difference, rel_error


def make_params(bands=3, d_embed=4, kernel=3, seed=0):
    return cbam.init_ecbam(np.random.default_rng(seed), bands, d_embed, spatial_kernel_size=kernel)


def zeroed(t: Tensor) -> Tensor:
    return Tensor(np.zeros(t.shape), requires_grad=True)


def test_zero_conv_gives_half_map():
    params = make_params()
    params.spatial_kernel = zeroed(params.spatial_kernel)
    params.spatial_bias = zeroed(params.spatial_bias)
    x = Tensor(np.random.default_rng(1).normal(size=(5, 5, 3)))
    out = cbam.spatial_attention(x, params).data
    np.testing.assert_array_equal(out, np.full((5, 5, 1), 0.5))


def test_constant_input_gives_spatially_constant_interior():
    params = make_params(kernel=3)
    x = Tensor(np.full((6, 6, 3), 0.7))
    out = cbam.spatial_attention(x, params).data[:, :, 0]
    interior = out[1:-1, 1:-1]
    assert np.allclose(interior, interior[0, 0], atol=1e-12)


def test_spatial_map_strictly_in_unit_interval():
    rng = np.random.default_rng(2)
    params = make_params()
    x = Tensor(rng.normal(size=(4, 4, 3)) * 10)
    out = cbam.spatial_attention(x, params).data
    assert np.all(out > 0) and np.all(out < 1)


def test_spatial_attention_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    params = make_params(kernel=3)
    x_np = rng.normal(size=(4, 4, 3))
    k0 = params.spatial_kernel.data.copy()

    def loss_given(kernel_values):
        params.spatial_kernel = Tensor(kernel_values, requires_grad=True)
        gate = ad.broadcast_to(cbam.spatial_attention(Tensor(x_np), params), (4, 4, 3))
        return ad.sum_(gate * Tensor(x_np))

    with Tape() as tape:
        loss = loss_given(k0)
    live = params.spatial_kernel
    tape.backward(loss)
    numeric = central_difference(lambda k: loss_given(k).item(), k0)
    assert rel_error(live.grad, numeric) < 1e-5


def test_zero_mlp_gives_half_channel_weights():
    params = make_params()
    params.channel_w0 = zeroed(params.channel_w0)
    params.channel_w1 = zeroed(params.channel_w1)
    x = Tensor(np.random.default_rng(4).normal(size=(4, 4, 3)))
    out = cbam.channel_attention(x, params).data
    np.testing.assert_array_equal(out, np.full((1, 1, 3), 0.5))


def test_constant_patch_makes_branches_identical():
    params = make_params()
    x = Tensor(np.full((3, 3, 3), 0.42))
    pooled_max = np.max(x.data, axis=(0, 1))
    pooled_avg = np.mean(x.data, axis=(0, 1))
    np.testing.assert_allclose(pooled_max, pooled_avg, atol=1e-15)
    # with identical pooled vectors the gate equals sigmoid(2 * mlp(v))
    v = pooled_max[None, :]
    h = np.maximum(v @ params.channel_w0.data, 0)  # silu > relu check below uses real op
    out = cbam.channel_attention(x, params).data.ravel()
    s = v @ params.channel_w0.data
    branch = (s * (1 / (1 + np.exp(-s)))) @ params.channel_w1.data
    np.testing.assert_allclose(out, 1 / (1 + np.exp(-2 * branch.ravel())), atol=1e-12)


def test_channel_weights_shape_and_range():
    rng = np.random.default_rng(5)
    params = make_params(bands=8, d_embed=4)
    x = Tensor(rng.normal(size=(5, 5, 8)) * 5)
    out = cbam.channel_attention(x, params).data
    assert out.shape == (1, 1, 8)
    assert np.all(out > 0) and np.all(out < 1)


def test_zero_gamma_disables_fusion():
    rng = np.random.default_rng(6)
    params = make_params(bands=3, d_embed=4)
    params.fusion_gamma = Tensor(np.asarray(0.0), requires_grad=True)
    x_np = rng.normal(size=(3, 3, 3))
    out = cbam.fuse_and_embed(Tensor(x_np), params).data

    ln = ad.layernorm(Tensor(x_np), params.norm_gamma, params.norm_beta).data
    proj = ln.reshape(9, 3) @ params.embed_weight.data + params.embed_bias.data
    np.testing.assert_allclose(out[1:], proj, atol=1e-12)
    np.testing.assert_array_equal(out[0], params.class_token.data)


def test_token_count_is_s_squared_plus_one():
    params = make_params(bands=2, d_embed=5)
    x = Tensor(np.random.default_rng(7).normal(size=(8, 8, 2)))
    out = cbam.fuse_and_embed(x, params)
    assert out.shape == (65, 5)


def test_full_block_parameter_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    x_np = rng.normal(size=(4, 4, 3))
    target = rng.normal(size=(17, 4))

    def build(seed_params):
        out = cbam.fuse_and_embed(Tensor(x_np), seed_params)
        diff = out - Tensor(target)
        return ad.sum_(diff * diff)

    params = make_params(bands=3, d_embed=4, kernel=3, seed=9)
    with Tape() as tape:
        loss = build(params)
    tape.backward(loss)

    checked = 0
    for name in vars(params):
        tensor = getattr(params, name)
        base = tensor.data.copy()

        def loss_at(values, _name=name):
            fresh = make_params(bands=3, d_embed=4, kernel=3, seed=9)
            setattr(fresh, _name, Tensor(values, requires_grad=True))
            return build(fresh).item()

        numeric = central_difference(loss_at, base)
        assert rel_error(tensor.grad, numeric) < 1e-5, name
        checked += 1
    assert checked == 12


def test_every_parameter_gets_nonzero_gradient():
    rng = np.random.default_rng(10)
    params = make_params(bands=4, d_embed=4, kernel=3, seed=11)
    x = Tensor(rng.normal(size=(3, 3, 4)))
    target = Tensor(rng.normal(size=(10, 4)))
    with Tape() as tape:
        out = cbam.fuse_and_embed(x, params)
        diff = out - target
        loss = ad.sum_(diff * diff)
    tape.backward(loss)
    for name in vars(params):
        grad = getattr(params, name).grad
        assert grad is not None and np.any(grad != 0), name

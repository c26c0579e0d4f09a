"""Convolutional block attention over a patch, with adaptive fusion and
projection to token space.

A patch (S, S, K) is gated twice: a spatial map from pooled-channel
statistics through a k x k convolution, and per-band weights from pooled
spatial statistics through a two-layer bottleneck MLP. The gated variants
are blended back into the input through learnable scalars, normalized per
pixel over the band axis, projected to the embedding width by a per-pixel
linear map (a 1 x 1 convolution), and flattened to S*S tokens behind a
learnable class token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SPATIAL_KERNEL_DEFAULT = 7
CHANNEL_REDUCTION_DEFAULT = 8


@dataclass
class EcbamParams:
    spatial_kernel: Tensor  # (k, k, 2, 1)
    spatial_bias: Tensor  # (1,)
    channel_w0: Tensor  # (K, K//r)
    channel_w1: Tensor  # (K//r, K)
    fusion_gamma: Tensor  # scalar, starts small so early training is LN-dominated
    fusion_alpha_c: Tensor  # scalar
    fusion_alpha_s: Tensor  # scalar
    norm_gamma: Tensor  # (K,)
    norm_beta: Tensor  # (K,)
    embed_weight: Tensor  # (K, d_embed): the 1x1 projection
    embed_bias: Tensor  # (d_embed,)
    class_token: Tensor  # (d_embed,)


def init_ecbam(
    rng: np.random.Generator,
    bands: int,
    d_embed: int,
    spatial_kernel_size: int = SPATIAL_KERNEL_DEFAULT,
    reduction: int = CHANNEL_REDUCTION_DEFAULT,
) -> EcbamParams:
    k = spatial_kernel_size
    hidden = max(1, bands // min(reduction, bands))
    return EcbamParams(
        spatial_kernel=Tensor(rng.normal(0.0, 1.0 / np.sqrt(k * k * 2), size=(k, k, 2, 1)), requires_grad=True),
        spatial_bias=Tensor(np.zeros(1), requires_grad=True),
        channel_w0=Tensor(rng.normal(0.0, 1.0 / np.sqrt(bands), size=(bands, hidden)), requires_grad=True),
        channel_w1=Tensor(rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, bands)), requires_grad=True),
        fusion_gamma=Tensor(np.asarray(0.1), requires_grad=True),
        fusion_alpha_c=Tensor(np.asarray(1.0), requires_grad=True),
        fusion_alpha_s=Tensor(np.asarray(1.0), requires_grad=True),
        norm_gamma=Tensor(np.ones(bands), requires_grad=True),
        norm_beta=Tensor(np.zeros(bands), requires_grad=True),
        embed_weight=Tensor(rng.normal(0.0, 1.0 / np.sqrt(bands), size=(bands, d_embed)), requires_grad=True),
        embed_bias=Tensor(np.zeros(d_embed), requires_grad=True),
        class_token=Tensor(rng.normal(0.0, 0.02, size=(d_embed,)), requires_grad=True),
    )


def spatial_attention(x: Tensor, params: EcbamParams) -> Tensor:
    """Sigmoid gate (S, S, 1) from [max-pool; mean-pool] over the band axis
    pushed through the k x k same-padded convolution."""
    s0, s1, _ = x.shape
    pooled_max = ad.max_reduce(x, axis=2, keepdims=True)
    pooled_avg = ad.mean(x, axis=2, keepdims=True)
    stacked = ad.concat([pooled_max, pooled_avg], axis=2)
    conv_in = ad.reshape(stacked, (1, s0, s1, 2))
    conv_out = ad.conv2d(conv_in, params.spatial_kernel, params.spatial_bias)
    return ad.sigmoid(ad.reshape(conv_out, (s0, s1, 1)))


def channel_attention(x: Tensor, params: EcbamParams) -> Tensor:
    """Sigmoid gate (1, 1, K) from the shared bottleneck MLP applied to the
    spatial max- and mean-pooled band vectors, summed before the sigmoid."""
    bands = x.shape[2]
    pooled_max = ad.reshape(ad.max_reduce(ad.max_reduce(x, axis=0), axis=0), (1, bands))
    pooled_avg = ad.reshape(ad.mean(ad.mean(x, axis=0), axis=0), (1, bands))

    def mlp(v: Tensor) -> Tensor:
        return ad.matmul(ad.silu(ad.matmul(v, params.channel_w0)), params.channel_w1)

    return ad.reshape(ad.sigmoid(mlp(pooled_max) + mlp(pooled_avg)), (1, 1, bands))


def fuse_and_embed(x: Tensor, params: EcbamParams) -> Tensor:
    """Adaptive fusion, per-pixel band normalization, projection, class token.

    Returns (S*S + 1, d_embed) with the class token at row 0. With
    fusion_gamma = 0 the gates drop out entirely and this reduces to
    normalize-then-project, the ablation path.
    """
    s0, s1, bands = x.shape
    gate_s = ad.broadcast_to(spatial_attention(x, params), x.shape)
    gate_c = ad.broadcast_to(channel_attention(x, params), x.shape)
    refined_s = gate_s * x
    refined_c = gate_c * x
    blend = params.fusion_alpha_c * refined_c + params.fusion_alpha_s * refined_s
    fused = ad.layernorm(x + params.fusion_gamma * blend, params.norm_gamma, params.norm_beta)

    pixels = ad.reshape(fused, (s0 * s1, bands))
    tokens = ad.matmul(pixels, params.embed_weight)
    d_embed = params.embed_bias.shape[0]
    tokens = tokens + ad.broadcast_to(ad.reshape(params.embed_bias, (1, d_embed)), tokens.shape)
    cls = ad.reshape(params.class_token, (1, d_embed))
    return ad.concat([cls, tokens], axis=0)

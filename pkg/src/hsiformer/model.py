"""Full classifier: gated patch embedding, encoder stack, class-token head."""

from __future__ import annotations

from dataclasses import dataclass, fields, is_dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cbam import EcbamParams, fuse_and_embed, init_ecbam
from .data import effective_patch_size
from .encoder import (
    ELN_EPS,
    EncoderParams,
    encoder_forward,
    init_encoder,
    init_standard,
    standard_forward,
)
from .errors import ConfigError
from .fourier_pos import FopeParams, PhaseField, build_phase, init_fope


@dataclass
class ModelConfig:
    """Every knob the architecture leaves open, with working defaults."""

    bands: int = 16
    classes: int = 4
    patch_size: int = 9  # nominal; realized window is 2*floor(S/2) + 1
    d_embed: int = 32
    heads: int = 4
    steps: int = 4  # descent steps per block
    step_size: float = 0.1
    beta: Optional[float] = None  # default 1/sqrt(head_dim)
    depth: int = 1
    hopfield_hidden: Optional[int] = None  # default 4 * d_embed
    fope_harmonics: int = 2
    fope_base: float = 10000.0
    fope_enabled: bool = True
    spatial_kernel: int = 7
    channel_reduction: int = 8
    block: str = "energy"  # or "standard" for the softmax-attention ablation

    @property
    def window(self) -> int:
        return effective_patch_size(self.patch_size)

    @property
    def tokens(self) -> int:
        return self.window * self.window + 1

    @property
    def head_dim(self) -> int:
        return self.d_embed // self.heads

    def validate(self) -> None:
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.d_embed % self.heads != 0:
            raise ConfigError(f"d_embed {self.d_embed} not divisible by heads {self.heads}")
        if self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim {self.head_dim} must be even for paired rotation")
        if self.block not in ("energy", "standard"):
            raise ConfigError(f"unknown block type {self.block!r}")
        if self.depth < 1 or self.steps < 1 or self.step_size <= 0:
            raise ConfigError("depth/steps must be >= 1 and step_size > 0")


@dataclass
class HeadParams:
    weight: Tensor  # (classes, d_embed)
    bias: Tensor  # (classes,)


@dataclass
class ClassifierParams:
    ecbam: EcbamParams
    fope: Optional[FopeParams]
    blocks: list  # EncoderParams or StandardParams, one per depth
    out_gamma: Tensor  # final normalization before the head
    out_beta: Tensor
    head: HeadParams


def init_model(config: ModelConfig, seed: int) -> ClassifierParams:
    config.validate()
    rng = np.random.default_rng(seed)
    ecbam = init_ecbam(
        rng,
        bands=config.bands,
        d_embed=config.d_embed,
        spatial_kernel_size=config.spatial_kernel,
        reduction=config.channel_reduction,
    )
    fope = (
        init_fope(
            config.head_dim,
            num_positions=config.window * config.window,
            harmonics=config.fope_harmonics,
            base=config.fope_base,
        )
        if config.fope_enabled
        else None
    )
    blocks = []
    for _ in range(config.depth):
        if config.block == "energy":
            blocks.append(
                init_encoder(
                    rng,
                    config.d_embed,
                    heads=config.heads,
                    d_hidden=config.hopfield_hidden,
                    beta=config.beta,
                    alpha=config.step_size,
                    steps=config.steps,
                )
            )
        else:
            blocks.append(init_standard(rng, config.d_embed, heads=config.heads, beta=config.beta))
    head = HeadParams(
        weight=Tensor(rng.normal(0.0, 1.0 / np.sqrt(config.d_embed), size=(config.classes, config.d_embed)), requires_grad=True),
        bias=Tensor(np.zeros(config.classes), requires_grad=True),
    )
    return ClassifierParams(
        ecbam=ecbam,
        fope=fope,
        blocks=blocks,
        out_gamma=Tensor(np.ones(config.d_embed), requires_grad=True),
        out_beta=Tensor(np.zeros(config.d_embed), requires_grad=True),
        head=head,
    )


def build_model_phase(params: ClassifierParams, config: ModelConfig) -> Optional[PhaseField]:
    """Phase field for the row-major pixel positions 0..window^2-1 with the
    class token left unrotated. Rebuild after fope coefficients change."""
    if params.fope is None:
        return None
    return build_phase(params.fope, list(range(config.window * config.window)))


def model_forward(
    patch: np.ndarray,
    params: ClassifierParams,
    config: ModelConfig,
    phase: Optional[PhaseField] = None,
    want_trace: bool = False,
):
    """Logits for one patch (window, window, bands); returns (logits, traces)."""
    if phase is None:
        phase = build_model_phase(params, config)
    x = Tensor(np.asarray(patch, dtype=params.ecbam.class_token.dtype))
    tokens = fuse_and_embed(x, params.ecbam)
    traces = []
    for block in params.blocks:
        if isinstance(block, EncoderParams):
            tokens, trace = encoder_forward(tokens, block, phase, want_trace=want_trace)
            traces.append(trace)
        else:
            tokens = standard_forward(tokens, block, phase)
    normalized = ad.layernorm(tokens, params.out_gamma, params.out_beta, eps=ELN_EPS)
    z_cls = ad.reshape(normalized[0], (config.d_embed, 1))
    logits = ad.reshape(ad.matmul(params.head.weight, z_cls), (config.classes,)) + params.head.bias
    return logits, traces


def classify(logits: Tensor) -> Tensor:
    """Class probabilities from logits; rows sum to 1."""
    return ad.softmax(logits, axis=-1)


# ---------------------------------------------------------------------------
# parameter traversal (checkpointing and the optimizer need stable names)


def named_parameters(obj, prefix: str = "") -> list:
    """Flat (name, Tensor) pairs in deterministic field order."""
    out = []
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            out.append((prefix, obj))
        return out
    if is_dataclass(obj):
        for f in fields(obj):
            value = getattr(obj, f.name)
            out.extend(named_parameters(value, f"{prefix}.{f.name}" if prefix else f.name))
        return out
    if isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            out.extend(named_parameters(value, f"{prefix}.{i}"))
        return out
    return out


def set_parameter(obj, name: str, tensor: Tensor) -> None:
    """Rebind the named parameter to a fresh tensor (tensors are immutable)."""
    parts = name.split(".")
    target = obj
    for part in parts[:-1]:
        target = target[int(part)] if isinstance(target, (list, tuple)) else getattr(target, part)
    last = parts[-1]
    if isinstance(target, (list, tuple)):
        target[int(last)] = tensor
    else:
        setattr(target, last, tensor)


def cast_parameters(params: ClassifierParams, dtype) -> None:
    """Rebind every parameter at the given precision (float32 inference mode)."""
    for name, tensor in named_parameters(params):
        set_parameter(params, name, Tensor(tensor.data.astype(dtype), requires_grad=tensor.requires_grad))

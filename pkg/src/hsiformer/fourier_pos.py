"""Fourier positional phases for query/key rotation.

Each consecutive feature pair is treated as a complex number and rotated
by a position-dependent multiplier: the base rotation at that pair's
dominant frequency plus learned coefficients on integer harmonics of it.
Pairs whose dominant frequency falls below the floor 2*pi/num_positions
are frozen to the identity multiplier, bit-exactly, and receive no
coefficient gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


@dataclass
class FopeParams:
    head_dim: int
    dominant: np.ndarray  # (head_dim/2,) strictly decreasing positive frequencies
    coeffs: Tensor  # (head_dim/2, harmonics) learnable, zero-initialized
    floor: float  # 2*pi / num_positions

    @property
    def harmonics(self) -> int:
        return self.coeffs.shape[1]

    @property
    def active(self) -> np.ndarray:
        return self.dominant >= self.floor


@dataclass
class PhaseField:
    """Per-(token, pair) complex multiplier plus the frozen-pair mask.

    Row 0 is the class token and is always the identity; rows 1..P carry
    positions 0..P-1.
    """

    real: Tensor  # (tokens, head_dim/2)
    imag: Tensor
    active_pairs: np.ndarray  # (head_dim/2,) bool
    identity_rows: np.ndarray  # (tokens,) bool


def init_fope(head_dim: int, num_positions: int, harmonics: int = 2, base: float = 10000.0) -> FopeParams:
    """Inverse-power frequency ladder with zeroed harmonic coefficients,
    so the initial behavior is exact single-frequency rotation."""
    if head_dim % 2 != 0:
        raise ConfigError(f"head_dim must be even for paired rotation, got {head_dim}")
    if num_positions < 1:
        raise ConfigError(f"num_positions must be positive, got {num_positions}")
    half = head_dim // 2
    dominant = base ** (-2.0 * np.arange(half) / head_dim)
    coeffs = Tensor(np.zeros((half, harmonics)), requires_grad=True)
    return FopeParams(head_dim=head_dim, dominant=dominant, coeffs=coeffs, floor=2.0 * np.pi / num_positions)


def build_phase(params: FopeParams, positions: Sequence[int], class_token_position: Optional[int] = None) -> PhaseField:
    """Complex multipliers for every position, prefixed by a class-token row.

    Active pairs get exp(i*w*n) + sum_r coeffs[m, r] * exp(i*(r+1)*w*n)
    over harmonic multiples (r+1)*w for r >= 1, i.e. 2w, 3w, ...; frozen
    pairs get exactly (1, 0). By default the class token is not rotated;
    passing ``class_token_position`` assigns it a position instead.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 1 or (positions < 0).any():
        raise ConfigError("positions must be a flat list of nonnegative integers")
    half = params.head_dim // 2
    active = params.active

    cls_identity = class_token_position is None
    cls_pos = 0.0 if cls_identity else float(class_token_position)
    all_pos = np.concatenate([[cls_pos], positions])  # row 0 = class token
    angles = all_pos[:, None] * params.dominant[None, :]  # (tokens, half)
    dtype = params.coeffs.dtype

    real = Tensor(np.cos(angles).astype(dtype))
    imag = Tensor(np.sin(angles).astype(dtype))
    tokens = len(all_pos)
    for r in range(params.harmonics):
        mult = float(r + 2)  # overtones at 2w, 3w, ... above the dominant w
        basis_cos = Tensor(np.cos(mult * angles).astype(dtype))
        basis_sin = Tensor(np.sin(mult * angles).astype(dtype))
        coeff_col = ad.broadcast_to(ad.reshape(params.coeffs[:, r], (1, half)), (tokens, half))
        real = real + coeff_col * basis_cos
        imag = imag + coeff_col * basis_sin

    frozen = ~np.broadcast_to(active, (tokens, half))
    real = ad.where(frozen, Tensor(np.ones((tokens, half), dtype=dtype)), real)
    imag = ad.where(frozen, Tensor(np.zeros((tokens, half), dtype=dtype)), imag)

    identity_rows = np.zeros(tokens, dtype=bool)
    if cls_identity:
        identity_rows[0] = True
    return PhaseField(real=real, imag=imag, active_pairs=active, identity_rows=identity_rows)


def apply_phase(x: Tensor, field: PhaseField, conjugate: bool = False) -> Tensor:
    """Rotate feature pairs of ``x`` (..., tokens, head_dim) by the field.

    Frozen pairs and identity rows are copied bit-exactly from the input.
    ``conjugate`` applies the conjugate multiplier, which is the transpose
    of the rotation as a linear map (used by closed-form gradients).
    """
    d = x.shape[-1]
    if d % 2 != 0:
        raise ConfigError(f"feature extent must be even for paired rotation, got {d}")
    half = d // 2
    tokens = x.shape[-2]
    if field.real.shape != (tokens, half):
        raise ConfigError(f"phase field shape {field.real.shape} does not match tokens/pairs {(tokens, half)}")

    xe = x[..., 0::2]
    xo = x[..., 1::2]
    target = xe.shape
    re = ad.broadcast_to(field.real, target)
    im = ad.broadcast_to(field.imag, target)
    if conjugate:
        out_e = xe * re + xo * im
        out_o = xo * re - xe * im
    else:
        out_e = xe * re - xo * im
        out_o = xe * im + xo * re
    paired_shape = target + (1,)
    rotated = ad.reshape(
        ad.concat([ad.reshape(out_e, paired_shape), ad.reshape(out_o, paired_shape)], axis=-1),
        x.shape,
    )

    rotate_mask = np.repeat(field.active_pairs, 2)[None, :] & ~field.identity_rows[:, None]
    rotate_mask = np.broadcast_to(rotate_mask, x.shape)
    return ad.where(rotate_mask, rotated, x)

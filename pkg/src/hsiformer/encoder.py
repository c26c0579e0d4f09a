"""Energy-based transformer block with unrolled gradient-descent dynamics.

The block assigns the token matrix a scalar energy: a multi-head
attention term, the negative log-sum-exp of pairwise key/query scores
with the self-pair excluded, plus a memory term, minus half the squared
norm of the rectified hidden projection. The forward pass runs T explicit
descent steps x <- x - alpha * dE/dx.

The descent direction is computed in closed form (softmax-weighted
contractions and a rectifier mask, wrapped in the normalization
Jacobian), not by differentiating the energy with the tape: the tape is
first-order only, so writing the gradient as a forward composition of
primitives is what makes the unrolled dynamics trainable with a single
reverse sweep.

Energies are evaluated on normalized tokens g = LN(x) while updates
apply to the raw x; the LN Jacobian is part of the closed form. Q and K
get the positional phase rotation inside every energy evaluation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DivergenceError
from .fourier_pos import PhaseField, apply_phase

ELN_EPS = 1e-5


@dataclass
class EncoderParams:
    w_q: Tensor  # (heads, d_model, d_head)
    w_k: Tensor  # (heads, d_model, d_head)
    w_h: Tensor  # (d_hidden, d_model) memory projection
    eln_gamma: Tensor  # (d_model,)
    eln_beta: Tensor  # (d_model,)
    beta: float  # score temperature, > 0
    alpha: float  # descent step size, > 0
    steps: int  # descent steps T >= 1

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]


@dataclass
class EnergyTrace:
    """Energy values per descent step, including the initial state."""

    attention: list = dc_field(default_factory=list)
    hopfield: list = dc_field(default_factory=list)
    total: list = dc_field(default_factory=list)

    def __len__(self) -> int:
        return len(self.total)

    def rows(self):
        for step, (a, h, t) in enumerate(zip(self.attention, self.hopfield, self.total)):
            yield step, a, h, t

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "e_att", "e_hopfield", "e_total"])
            for row in self.rows():
                writer.writerow(row)


def init_encoder(
    rng: np.random.Generator,
    d_model: int,
    heads: int = 4,
    d_hidden: Optional[int] = None,
    beta: Optional[float] = None,
    alpha: float = 0.1,
    steps: int = 4,
) -> EncoderParams:
    if d_model % heads != 0:
        raise ContractError(f"d_model {d_model} must be divisible by heads {heads}")
    d_head = d_model // heads
    d_hidden = d_hidden if d_hidden is not None else 4 * d_model
    scale = 1.0 / np.sqrt(d_model)
    return EncoderParams(
        w_q=Tensor(rng.normal(0.0, scale, size=(heads, d_model, d_head)), requires_grad=True),
        w_k=Tensor(rng.normal(0.0, scale, size=(heads, d_model, d_head)), requires_grad=True),
        w_h=Tensor(rng.normal(0.0, scale, size=(d_hidden, d_model)), requires_grad=True),
        eln_gamma=Tensor(np.ones(d_model), requires_grad=True),
        eln_beta=Tensor(np.zeros(d_model), requires_grad=True),
        beta=beta if beta is not None else 1.0 / np.sqrt(d_head),
        alpha=alpha,
        steps=steps,
    )


def normalize_tokens(x: Tensor, params: EncoderParams) -> Tensor:
    return ad.layernorm(x, params.eln_gamma, params.eln_beta, eps=ELN_EPS)


def _projected_qk(g: Tensor, params: EncoderParams, phase: Optional[PhaseField]):
    q = ad.matmul(g, params.w_q)  # (heads, tokens, d_head)
    k = ad.matmul(g, params.w_k)
    if phase is not None:
        q = apply_phase(q, phase)
        k = apply_phase(k, phase)
    return q, k


def attention_scores(g: Tensor, params: EncoderParams, head: int, phase: Optional[PhaseField] = None) -> Tensor:
    """Pairwise score matrix for one head: entry [B, C] = <K_B, Q_C>."""
    q, k = _projected_qk(g, params, phase)
    return ad.matmul(k[head], ad.transpose(q[head]))


def attention_energy(g: Tensor, params: EncoderParams, phase: Optional[PhaseField] = None):
    """Attention energy and its per-head components.

    Per head: -(1/beta) * sum_C log sum_{B != C} exp(beta * <K_B, Q_C>).
    """
    tokens = g.shape[-2]
    if tokens < 2:
        raise ContractError(f"attention energy needs >= 2 tokens (the B != C sum is empty), got {tokens}")
    q, k = _projected_qk(g, params, phase)
    scores = ad.matmul(k, ad.transpose(q))  # (heads, tokens, tokens)
    lse = ad.logsumexp(scores * params.beta, axis=-2, exclude_diagonal=True)  # (heads, tokens)
    per_head = ad.sum_(lse, axis=-1) * (-1.0 / params.beta)
    return ad.sum_(per_head), per_head


def hopfield_energy(g: Tensor, w_h: Tensor) -> Tensor:
    """Memory energy summed over tokens: -0.5 * ||relu(g @ w_h^T)||^2, always <= 0."""
    hidden = ad.relu(ad.matmul(g, ad.transpose(w_h)))
    return ad.sum_(hidden * hidden) * -0.5


def total_energy(x: Tensor, params: EncoderParams, phase: Optional[PhaseField] = None):
    """(total, attention, hopfield) energies of raw tokens ``x``."""
    g = normalize_tokens(x, params)
    e_att, _ = attention_energy(g, params, phase)
    e_hop = hopfield_energy(g, params.w_h)
    return e_att + e_hop, e_att, e_hop


def _layernorm_vjp(x: Tensor, upstream: Tensor, gamma: Tensor) -> Tensor:
    """Pull ``upstream`` (a gradient w.r.t. LN(x)) back through the
    normalization, expressed with primitives so it stays differentiable."""
    shape = x.shape
    mu = ad.broadcast_to(ad.mean(x, axis=-1, keepdims=True), shape)
    centered = x - mu
    var = ad.mean(centered * centered, axis=-1, keepdims=True)
    s = ad.broadcast_to(ad.sqrt(var + ELN_EPS), shape)
    xhat = centered / s
    w = upstream * ad.broadcast_to(ad.reshape(gamma, (1, shape[-1])), shape)
    w_mean = ad.broadcast_to(ad.mean(w, axis=-1, keepdims=True), shape)
    wx_mean = ad.broadcast_to(ad.mean(w * xhat, axis=-1, keepdims=True), shape)
    return (w - w_mean - xhat * wx_mean) / s


def energy_gradient(x: Tensor, params: EncoderParams, phase: Optional[PhaseField] = None) -> Tensor:
    """Closed-form dE_total/dx, itself a composition of primitives.

    Attention part: with sigma = softmax over keys of the beta-scaled
    scores (diagonal excluded), dE/dK = -sigma @ Q and dE/dQ =
    -sigma^T @ K; phases pull back by conjugate rotation, projections by
    their transposes. Memory part: -relu(g W_h^T) W_h. Both wrapped in
    the LN Jacobian.
    """
    g = normalize_tokens(x, params)

    q, k = _projected_qk(g, params, phase)
    scores = ad.matmul(k, ad.transpose(q))
    sigma = ad.softmax(scores * params.beta, axis=-2, exclude_diagonal=True)
    dk = -ad.matmul(sigma, q)
    dq = -ad.matmul(ad.transpose(sigma), k)
    if phase is not None:
        dk = apply_phase(dk, phase, conjugate=True)
        dq = apply_phase(dq, phase, conjugate=True)
    per_head = ad.matmul(dq, ad.transpose(params.w_q)) + ad.matmul(dk, ad.transpose(params.w_k))
    dg = ad.sum_(per_head, axis=0)  # over heads

    hidden = ad.matmul(g, ad.transpose(params.w_h))
    dg = dg - ad.matmul(ad.relu(hidden), params.w_h)

    return _layernorm_vjp(x, dg, params.eln_gamma)


def encoder_forward(
    x0: Tensor,
    params: EncoderParams,
    phase: Optional[PhaseField] = None,
    want_trace: bool = True,
):
    """Run T descent steps from ``x0``; returns (x_T, EnergyTrace).

    With ``want_trace`` the trace holds T+1 total-energy entries (initial
    state included) and a non-finite energy raises a divergence error
    carrying the step index and step size. Without it only state
    finiteness is checked, which avoids pricing the diagnostic energies
    into the training pass.
    """
    if params.steps < 1:
        raise ContractError(f"descent needs at least one step, got {params.steps}")
    trace = EnergyTrace()

    def record(step: int, x: Tensor) -> None:
        if want_trace:
            e_total, e_att, e_hop = total_energy(x, params, phase)
            if not np.isfinite(e_total.data):
                raise DivergenceError("encoder energy diverged", step=step, alpha=params.alpha)
            trace.attention.append(e_att.item())
            trace.hopfield.append(e_hop.item())
            trace.total.append(e_total.item())
        elif not np.all(np.isfinite(x.data)):
            raise DivergenceError("encoder state diverged", step=step, alpha=params.alpha)

    x = x0
    record(0, x)
    for step in range(1, params.steps + 1):
        x = x - energy_gradient(x, params, phase) * params.alpha
        record(step, x)
    return x, trace


# ---------------------------------------------------------------------------
# conventional softmax-attention block, the ablation counterpart


@dataclass
class StandardParams:
    w_q: Tensor  # (heads, d_model, d_head)
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor  # (heads * d_head, d_model)
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    ff_w1: Tensor  # (d_model, d_ff)
    ff_b1: Tensor
    ff_w2: Tensor  # (d_ff, d_model)
    ff_b2: Tensor
    beta: float

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]


def init_standard(
    rng: np.random.Generator,
    d_model: int,
    heads: int = 4,
    d_ff: Optional[int] = None,
    beta: Optional[float] = None,
) -> StandardParams:
    if d_model % heads != 0:
        raise ContractError(f"d_model {d_model} must be divisible by heads {heads}")
    d_head = d_model // heads
    d_ff = d_ff if d_ff is not None else 4 * d_model
    scale = 1.0 / np.sqrt(d_model)
    return StandardParams(
        w_q=Tensor(rng.normal(0.0, scale, size=(heads, d_model, d_head)), requires_grad=True),
        w_k=Tensor(rng.normal(0.0, scale, size=(heads, d_model, d_head)), requires_grad=True),
        w_v=Tensor(rng.normal(0.0, scale, size=(heads, d_model, d_head)), requires_grad=True),
        w_o=Tensor(rng.normal(0.0, scale, size=(heads * d_head, d_model)), requires_grad=True),
        ln1_gamma=Tensor(np.ones(d_model), requires_grad=True),
        ln1_beta=Tensor(np.zeros(d_model), requires_grad=True),
        ln2_gamma=Tensor(np.ones(d_model), requires_grad=True),
        ln2_beta=Tensor(np.zeros(d_model), requires_grad=True),
        ff_w1=Tensor(rng.normal(0.0, scale, size=(d_model, d_ff)), requires_grad=True),
        ff_b1=Tensor(np.zeros(d_ff), requires_grad=True),
        ff_w2=Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_ff), size=(d_ff, d_model)), requires_grad=True),
        ff_b2=Tensor(np.zeros(d_model), requires_grad=True),
        beta=beta if beta is not None else 1.0 / np.sqrt(d_head),
    )


def standard_forward(x: Tensor, params: StandardParams, phase: Optional[PhaseField] = None) -> Tensor:
    """Pre-norm softmax attention + feed-forward, both with residuals."""
    tokens, d_model = x.shape

    g = ad.layernorm(x, params.ln1_gamma, params.ln1_beta, eps=ELN_EPS)
    q = ad.matmul(g, params.w_q)
    k = ad.matmul(g, params.w_k)
    if phase is not None:
        q = apply_phase(q, phase)
        k = apply_phase(k, phase)
    v = ad.matmul(g, params.w_v)
    weights = ad.softmax(ad.matmul(q, ad.transpose(k)) * params.beta, axis=-1)
    context = ad.matmul(weights, v)  # (heads, tokens, d_head)
    merged = ad.reshape(ad.transpose(context, axes=(1, 0, 2)), (tokens, d_model))
    x = x + ad.matmul(merged, params.w_o)

    g2 = ad.layernorm(x, params.ln2_gamma, params.ln2_beta, eps=ELN_EPS)
    h = ad.matmul(g2, params.ff_w1)
    h = h + ad.broadcast_to(ad.reshape(params.ff_b1, (1, h.shape[-1])), h.shape)
    h = ad.matmul(ad.silu(h), params.ff_w2)
    h = h + ad.broadcast_to(ad.reshape(params.ff_b2, (1, d_model)), h.shape)
    return x + h

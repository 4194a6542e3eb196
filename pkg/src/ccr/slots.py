"""Multi-view semantic slots: learnable queries that aggregate description tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError, ShapeError
from .functional import AttentionParams, LayerNormParams, linear, multi_head_attention
from .tensor import Tensor, ensure_tensor

POOLINGS = ("cls", "mean", "all", "multi_view")


@dataclass
class SlotGenerator:
    """Query bank ``Q`` (``n_q x d``) with its cross-attention, projection and layer norm."""

    queries: Tensor
    attn: AttentionParams
    proj: Tensor
    ln: LayerNormParams

    @classmethod
    def init(cls, n_q: int, d: int, heads: int, rng: np.random.Generator) -> "SlotGenerator":
        if n_q < 1:
            raise ConfigError("need at least one slot")
        queries = T.parameter(rng.normal(0.0, 1.0 / math.sqrt(d), (n_q, d)), "Q")
        attn = AttentionParams.init(d, heads, rng, "slot_attn")
        proj = T.parameter(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d)), "phi_q")
        return cls(queries, attn, proj, LayerNormParams.init(d, "slot_ln"))

    @property
    def n_q(self) -> int:
        return self.queries.shape[0]

    def parameters(self) -> dict[str, Tensor]:
        out = {"Q": self.queries, "phi_q": self.proj}
        out.update({f"attn.{k}": v for k, v in self.attn.parameters().items()})
        out.update({f"ln.{k}": v for k, v in self.ln.parameters().items()})
        return out


def generate_slots(z_c, gen: SlotGenerator) -> tuple[Tensor, Tensor]:
    """Slots ``M = LN(phi_q(Qbar)) + Qbar`` with ``Qbar = MHCA(Q, Z_c, Z_c)``.

    ``z_c`` is the already projected description sequence, ``(..., N_c, d)``.
    Returns the ``(..., n_q, d)`` slots and the attention weights.
    """
    z_c = ensure_tensor(z_c)
    if z_c.ndim < 2 or z_c.shape[-2] < 1:
        raise InputError("description sequence is empty")
    if z_c.shape[-1] != gen.queries.shape[-1]:
        raise ShapeError(f"description dim {z_c.shape[-1]} != slot dim {gen.queries.shape[-1]}")
    q = gen.queries
    if z_c.ndim > 2:
        # broadcast the shared queries over the batch dims
        q = q + T.Tensor(np.zeros(z_c.shape[:-2] + q.shape))
    q_bar, weights = multi_head_attention(q, z_c, z_c, gen.attn)
    return gen.ln(linear(q_bar, gen.proj)) + q_bar, weights


def pool_descriptions(z_c, pooling: str, gen: SlotGenerator | None = None) -> Tensor:
    """Turn a description sequence into the slot set used downstream.

    ``cls`` keeps token 0, ``mean`` averages all tokens, ``all`` keeps every
    token and ``multi_view`` runs :func:`generate_slots`.
    """
    z_c = ensure_tensor(z_c)
    if pooling == "cls":
        return z_c[..., 0:1, :]
    if pooling == "mean":
        return z_c.mean(axis=-2, keepdims=True)
    if pooling == "all":
        return z_c
    if pooling == "multi_view":
        if gen is None:
            raise ConfigError("multi_view pooling needs a slot generator")
        return generate_slots(z_c, gen)[0]
    raise ConfigError(f"unknown description pooling {pooling!r}; expected one of {POOLINGS}")


def regularization_loss(slots) -> Tensor:
    """Diversity loss: mean over samples and views of ``-log p``, where ``p`` is the
    softmax over raw slot dot products evaluated at the slot itself."""
    slots = ensure_tensor(slots)
    if slots.ndim == 2:
        slots = slots.reshape(1, *slots.shape)
    gram = T.matmul(slots, slots.swapaxes(-1, -2))
    logp = T.log_softmax(gram, axis=-1)
    n_q = slots.shape[-2]
    diag = logp[..., np.arange(n_q), np.arange(n_q)]
    return -diag.mean()

"""Visual/slot interaction: dual cross-attention or co-attention over ``[Z_v; M]``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .functional import AttentionParams, LayerNormParams, linear, multi_head_attention
from .tensor import Tensor, ensure_tensor

MODES = ("dual_cross", "co_attention")
DIRECTIONS = ("dual", "v2c", "c2v")


@dataclass
class InteractionLayer:
    """Parameters of one interaction layer.

    ``dual_cross`` uses ``c2v`` (visual queries over slots) and ``v2c`` (slot
    queries over visual tokens); ``co_attention`` uses a single self-attention
    block ``co``.
    """

    mode: str
    attn: dict
    proj_z: Tensor
    proj_m: Tensor
    ln_z: LayerNormParams
    ln_m: LayerNormParams

    @classmethod
    def init(cls, mode: str, d: int, heads: int, rng: np.random.Generator, name: str = "inter") -> "InteractionLayer":
        if mode not in MODES:
            raise ConfigError(f"unknown interaction mode {mode!r}; expected one of {MODES}")
        blocks = ("c2v", "v2c") if mode == "dual_cross" else ("co",)
        attn = {b: AttentionParams.init(d, heads, rng, f"{name}.{b}") for b in blocks}
        std = 1.0 / math.sqrt(d)
        proj_z = T.parameter(rng.normal(0.0, std, (d, d)), f"{name}.phi_z")
        proj_m = T.parameter(rng.normal(0.0, std, (d, d)), f"{name}.phi_m")
        return cls(mode, attn, proj_z, proj_m, LayerNormParams.init(d, f"{name}.ln_z"),
                   LayerNormParams.init(d, f"{name}.ln_m"))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for b, a in self.attn.items():
            out.update({f"{b}.{k}": v for k, v in a.parameters().items()})
        out["phi_z"], out["phi_m"] = self.proj_z, self.proj_m
        out.update({f"ln_z.{k}": v for k, v in self.ln_z.parameters().items()})
        out.update({f"ln_m.{k}": v for k, v in self.ln_m.parameters().items()})
        return out


@dataclass
class InteractionOutput:
    z_v: Tensor          # semantic-enhanced visual features, shape of Z_v
    slots: Tensor        # local contextual visual semantics, shape of M
    v2c_attention: np.ndarray  # (..., heads, n_q, n_v), rows sum to one


def interact(z_v, slots, layer: InteractionLayer, direction: str = "dual") -> InteractionOutput:
    """Fuse visual tokens ``z_v`` (``..., N_v, d``) with slots (``..., N_q, d``).

    ``direction`` ``v2c`` updates only the slots and ``c2v`` only the visual
    stream; the other stream passes through unchanged.
    """
    z_v, slots = ensure_tensor(z_v), ensure_tensor(slots)
    if direction not in DIRECTIONS:
        raise ConfigError(f"unknown interaction direction {direction!r}; expected one of {DIRECTIONS}")
    if z_v.shape[-1] != slots.shape[-1] or z_v.shape[:-2] != slots.shape[:-2]:
        raise ShapeError(f"visual features {z_v.shape} and slots {slots.shape} are incompatible")
    n_v = z_v.shape[-2]
    if layer.mode == "dual_cross":
        z_bar, _ = multi_head_attention(z_v, slots, slots, layer.attn["c2v"])
        m_bar, w = multi_head_attention(slots, z_v, z_v, layer.attn["v2c"])
        v2c = w.data
    elif layer.mode == "co_attention":
        joint = T.concat([z_v, slots], axis=-2)
        out, w = multi_head_attention(joint, joint, joint, layer.attn["co"])
        z_bar, m_bar = out[..., :n_v, :], out[..., n_v:, :]
        # slot rows restricted to the visual columns, renormalised for export
        block = w.data[..., n_v:, :n_v]
        v2c = block / block.sum(axis=-1, keepdims=True)
    else:
        raise ConfigError(f"unknown interaction mode {layer.mode!r}")
    z_hat = layer.ln_z(linear(z_bar, layer.proj_z)) + z_bar if direction != "v2c" else z_v
    m_hat = layer.ln_m(linear(m_bar, layer.proj_m)) + m_bar if direction != "c2v" else slots
    return InteractionOutput(z_hat, m_hat, v2c)


def dump_attention(v2c: np.ndarray, out_dir, ids) -> list[Path]:
    """Write one CSV per sample and head: ``<id>_head<h>.csv`` with ``n_q`` rows of ``n_v`` weights."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for item, maps in zip(ids, v2c):
        for h, grid in enumerate(maps):
            path = out_dir / f"{item}_head{h}.csv"
            np.savetxt(path, grid, delimiter=",", fmt="%.8f")
            written.append(path)
    return written

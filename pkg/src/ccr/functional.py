"""Differentiable building blocks composed from :mod:`ccr.tensor` primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import InputError, ParameterError, ShapeError
from .tensor import Tensor, ensure_tensor

LN_EPS = 1e-5
DEFAULT_HEADS = 4


def _check_finite(x: Tensor, what: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise InputError(f"{what} contains non-finite entries")


def softmax(x, axis: int = -1, temperature: float = 1.0) -> Tensor:
    """Softmax of ``x / temperature`` along ``axis``."""
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    x = ensure_tensor(x)
    _check_finite(x, "softmax input")
    if temperature != 1.0:
        x = x * (1.0 / temperature)
    return T.softmax(x, axis=axis)


def log_softmax(x, axis: int = -1, temperature: float = 1.0) -> Tensor:
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    x = ensure_tensor(x)
    _check_finite(x, "log_softmax input")
    if temperature != 1.0:
        x = x * (1.0 / temperature)
    return T.log_softmax(x, axis=axis)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    if not eps > 0:
        raise ParameterError("layer norm eps must be positive")
    x, gain, bias = ensure_tensor(x), ensure_tensor(gain), ensure_tensor(bias)
    if gain.shape[-1] != x.shape[-1] or bias.shape[-1] != x.shape[-1]:
        raise ShapeError(f"layer norm parameters {gain.shape}/{bias.shape} do not match {x.shape}")
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + bias


def linear(x, weight) -> Tensor:
    """Bias-free projection ``x @ weight`` over the last axis."""
    return T.matmul(x, weight)


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Unit-normalise along ``axis``; zero-norm rows are an input error."""
    x = ensure_tensor(x)
    norms = np.linalg.norm(x.data, axis=axis)
    if np.any(norms == 0):
        raise InputError("cannot normalise a zero-norm vector")
    return x / (x * x).sum(axis=axis, keepdims=True).sqrt()


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor

    @classmethod
    def init(cls, d: int, name: str = "ln") -> "LayerNormParams":
        return cls(T.parameter(np.ones(d), f"{name}.gain"), T.parameter(np.zeros(d), f"{name}.bias"))

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gain, self.bias)

    def parameters(self) -> dict[str, Tensor]:
        return {"gain": self.gain, "bias": self.bias}


@dataclass
class AttentionParams:
    """Projections of a multi-head attention block.

    All four matrices are ``d x d``; head ``h`` uses columns
    ``h*d/H:(h+1)*d/H`` of the query/key/value projections.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int = DEFAULT_HEADS

    def __post_init__(self):
        d = self.d
        if self.heads < 1 or d % self.heads:
            raise ParameterError(f"model dim {d} is not divisible by head count {self.heads}")
        for w in (self.wq, self.wk, self.wv, self.wo):
            if w.shape != (d, d):
                raise ShapeError(f"attention projection has shape {w.shape}, expected {(d, d)}")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def init(cls, d: int, heads: int, rng: np.random.Generator, name: str = "attn") -> "AttentionParams":
        std = 1.0 / math.sqrt(d)
        mats = [T.parameter(rng.normal(0.0, std, (d, d)), f"{name}.{k}") for k in ("wq", "wk", "wv", "wo")]
        return cls(*mats, heads=heads)

    def parameters(self) -> dict[str, Tensor]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo}


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (..., n, d) -> (..., heads, n, d/heads)
    *lead, n, d = x.shape
    return x.reshape(*lead, n, heads, d // heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, h * dh)


def multi_head_attention(q_in, k_in, v_in, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention with ``params.heads`` heads, no residual.

    Inputs are ``(..., n, d)`` with shared leading batch dims.  Returns the
    ``(..., n_q, d)`` output and the ``(..., heads, n_q, n_k)`` weights.
    """
    q_in, k_in, v_in = ensure_tensor(q_in), ensure_tensor(k_in), ensure_tensor(v_in)
    d = params.d
    for what, x in (("query", q_in), ("key", k_in), ("value", v_in)):
        if x.ndim < 2 or x.shape[-1] != d:
            raise ShapeError(f"{what} input of shape {x.shape} does not match model dim {d}")
    if k_in.shape[-2] != v_in.shape[-2]:
        raise ShapeError(f"key length {k_in.shape[-2]} differs from value length {v_in.shape[-2]}")
    h = params.heads
    q = _split_heads(linear(q_in, params.wq), h)
    k = _split_heads(linear(k_in, params.wk), h)
    v = _split_heads(linear(v_in, params.wv), h)
    scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // h))
    weights = T.softmax(scores, axis=-1)
    out = linear(_merge_heads(T.matmul(weights, v)), params.wo)
    return out, weights

"""Similarity functions and the global/local matching losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import InputError, ParameterError, ShapeError
from .functional import l2_normalize
from .tensor import Tensor, ensure_tensor

DEFAULT_TAU = 0.05
DEFAULT_LAMBDA1 = 0.4


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")


def global_similarity(a, c) -> Tensor:
    """``B_a x B_c`` cosine similarity matrix between two sets of vectors."""
    a, c = ensure_tensor(a), ensure_tensor(c)
    if a.ndim != 2 or c.ndim != 2 or a.shape[1] != c.shape[1]:
        raise ShapeError(f"expected two (B, d) matrices with equal d, got {a.shape} and {c.shape}")
    return T.matmul(l2_normalize(a), l2_normalize(c).T)


def contrastive_loss(sim, tau: float) -> Tensor:
    """Symmetric InfoNCE over rows and columns of ``sim``; diagonal entries are positives."""
    _check_tau(tau)
    sim = ensure_tensor(sim)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ShapeError(f"contrastive loss needs a square matrix, got {sim.shape}")
    b = sim.shape[0]
    if b == 0:
        raise InputError("empty batch")
    logits = sim * (1.0 / tau)
    idx = np.arange(b)
    rows = T.log_softmax(logits, axis=1)[idx, idx]
    cols = T.log_softmax(logits, axis=0)[idx, idx]
    return -(rows + cols).sum() * (0.5 / b)


def caption_slot_similarity(h, slots) -> float:
    """Best cosine between one caption vector and any slot of one item."""
    h, slots = np.asarray(h, dtype=float), np.asarray(slots, dtype=float)
    if slots.ndim != 2 or h.shape != slots.shape[1:]:
        raise ShapeError(f"caption {h.shape} and slots {slots.shape} are incompatible")
    hn, sn = np.linalg.norm(h), np.linalg.norm(slots, axis=1)
    if hn == 0 or np.any(sn == 0):
        raise InputError("zero-norm caption or slot")
    # row-wise products keep each slot's cosine independent of how many slots are stacked
    return float(((slots * h).sum(axis=1) / (sn * hn)).max())


def best_slot(h, slots) -> int:
    """Index of the slot achieving :func:`caption_slot_similarity` (lowest index on ties)."""
    h, slots = np.asarray(h, dtype=float), np.asarray(slots, dtype=float)
    cos = (slots * h).sum(axis=1) / (np.linalg.norm(slots, axis=1) * np.linalg.norm(h))
    return int(np.argmax(cos))


def slot_similarity(h, slots) -> Tensor:
    """``B_h x B_m`` matrix of caption-to-slot-set similarities (max over slots)."""
    h, slots = ensure_tensor(h), ensure_tensor(slots)
    if h.ndim != 2 or slots.ndim != 3 or h.shape[1] != slots.shape[2]:
        raise ShapeError(f"expected (B, d) captions and (B, N_q, d) slots, got {h.shape}, {slots.shape}")
    b_m, n_q, d = slots.shape
    flat = l2_normalize(slots).reshape(b_m * n_q, d)
    cos = T.matmul(l2_normalize(h), flat.T).reshape(h.shape[0], b_m, n_q)
    return cos.max(axis=-1)


def caption_slot_loss(sim, tau: float) -> Tensor:
    """One-directional InfoNCE: each caption row against all slot sets."""
    _check_tau(tau)
    sim = ensure_tensor(sim)
    b = sim.shape[0]
    if b == 0:
        raise InputError("empty batch")
    idx = np.arange(b)
    return -T.log_softmax(sim * (1.0 / tau), axis=1)[idx, idx].mean()


@dataclass
class LossBundle:
    """Named loss terms; unused terms stay ``None``."""

    terms: dict = field(default_factory=dict)
    lambda1: float = DEFAULT_LAMBDA1

    def __getitem__(self, key: str) -> Tensor:
        return self.terms[key]

    def __contains__(self, key: str) -> bool:
        return key in self.terms

    def values(self) -> dict[str, float]:
        return {k: float(v.data) for k, v in self.terms.items()}


def multi_level_loss(h_s, h_t, hv_hat, slots, tau: float = DEFAULT_TAU,
                     lambda1: float = DEFAULT_LAMBDA1, vt_override=None) -> LossBundle:
    """Caption-vision plus caption-slot matching, ``L_ml = L_v + lambda1 * L_c``.

    ``slots`` may be ``None`` when no slot branch exists, in which case
    ``lambda1`` must be zero.  ``vt_override`` replaces the visual/non-English
    term inside ``L_v``.
    """
    if not 0 <= lambda1 <= 1:
        raise ParameterError("lambda1 must lie in [0, 1]")
    terms = {}
    terms["L_vs"] = contrastive_loss(global_similarity(hv_hat, h_s), tau)
    terms["L_vt"] = contrastive_loss(global_similarity(hv_hat, h_t), tau)
    vt = terms["L_vt"] if vt_override is None else ensure_tensor(vt_override)
    terms["L_v"] = (terms["L_vs"] + vt) * 0.5
    if slots is not None:
        terms["L_sc"] = caption_slot_loss(slot_similarity(h_s, slots), tau)
        terms["L_tc"] = caption_slot_loss(slot_similarity(h_t, slots), tau)
        terms["L_c"] = (terms["L_sc"] + terms["L_tc"]) * 0.5
        terms["L_ml"] = terms["L_v"] + terms["L_c"] * lambda1
    else:
        if lambda1:
            raise ParameterError("caption-slot matching needs slots")
        terms["L_ml"] = terms["L_v"]
    return LossBundle(terms, lambda1)

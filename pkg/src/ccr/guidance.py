"""Soft targets from the English branch, distilled into visual/non-English matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, InputError, ParameterError
from .matching import global_similarity, slot_similarity
from .tensor import Tensor, ensure_tensor

DEFAULT_ALPHA = 0.5
DEFAULT_LAMBDA2 = 0.6


@dataclass
class SoftTargets:
    """Row-stochastic teacher distribution ``Y`` and the similarities it came from.

    All arrays are plain numpy: the targets are constants for backprop.
    """

    Y: np.ndarray
    s_global: np.ndarray
    s_local: np.ndarray | None
    alpha: float
    tau: float

    @property
    def s_soft(self) -> np.ndarray:
        if self.s_local is None:
            return self.s_global
        return self.alpha * self.s_global + (1.0 - self.alpha) * self.s_local


def soften_targets(h_s, hv_hat, slots, alpha: float = DEFAULT_ALPHA, tau: float = 0.05) -> SoftTargets:
    """``Y = softmax((alpha * S_g(h_s, hv) + (1 - alpha) * S_l(h_s, M)) / tau)`` row-wise.

    ``slots`` may be ``None`` only when ``alpha == 1``.
    """
    if not 0 <= alpha <= 1:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if not tau > 0:
        raise ParameterError("temperature must be positive")
    s_g = global_similarity(ensure_tensor(h_s).detach(), ensure_tensor(hv_hat).detach()).data
    if slots is None:
        if alpha != 1:
            raise ConfigError("local guidance needs slots")
        s_l = None
        s_soft = s_g
    else:
        s_l = slot_similarity(ensure_tensor(h_s).detach(), ensure_tensor(slots).detach()).data
        s_soft = alpha * s_g + (1.0 - alpha) * s_l
    y = T.softmax(T.Tensor(s_soft / tau), axis=1).data
    return SoftTargets(y, s_g, s_l, alpha, tau)


def kl_rows(y: np.ndarray, log_q: Tensor) -> Tensor:
    """Mean over rows of ``KL(y_i || q_i)`` with ``q`` given as log-probabilities."""
    y = np.asarray(y)
    plogp = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0)), 0.0).sum()
    b = y.shape[0]
    return (T.Tensor(plogp) - (log_q * y).sum()) * (1.0 / b)


def guided_vt_loss(h_t, hv_hat, targets: SoftTargets, tau: float, lambda2: float,
                   l_vt) -> tuple[Tensor, Tensor]:
    """Blend ``lambda2 * L_vt + (1 - lambda2) * L_rkt``.

    ``L_rkt`` is the mean KL divergence from the teacher rows to the student
    rows ``softmax(S_g(h_t, hv_hat) / tau)``.  Returns ``(L_vt_hat, L_rkt)``.
    """
    if not 0 <= lambda2 <= 1:
        raise ConfigError(f"lambda2 must lie in [0, 1], got {lambda2}")
    if not tau > 0:
        raise ParameterError("temperature must be positive")
    y = np.asarray(targets.Y)
    if np.any(y < 0) or not np.allclose(y.sum(axis=1), 1.0, atol=1e-6):
        raise InputError("soft target rows must be probability vectors")
    log_q = T.log_softmax(global_similarity(h_t, hv_hat) * (1.0 / tau), axis=1)
    l_rkt = kl_rows(y, log_q)
    return ensure_tensor(l_vt) * lambda2 + l_rkt * (1.0 - lambda2), l_rkt

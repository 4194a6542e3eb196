"""Finite-difference checks of every loss and of the full composed objective."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import HyperParams
from .features import MODALITIES
from .gradcheck import GradCheckReport, finite_difference_check
from .guidance import guided_vt_loss, soften_targets
from .matching import (caption_slot_loss, contrastive_loss, global_similarity, multi_level_loss,
                       slot_similarity)
from .model import RetrievalModel
from .slots import regularization_loss
from .trainer import total_loss

SMALL = dict(B=4, d=8, n_q=3, heads=2, tau=0.5)


def _leaf(rng, *shape, name=None):
    return T.parameter(rng.normal(size=shape), name)


def loss_cases(seed: int) -> dict:
    """Named ``(loss_fn, params)`` pairs on small random inputs."""
    rng = np.random.default_rng(seed)
    B, d, n_q, tau = SMALL["B"], SMALL["d"], SMALL["n_q"], SMALL["tau"]
    a, b, c = _leaf(rng, B, d), _leaf(rng, B, d), _leaf(rng, B, d)
    slots = _leaf(rng, B, n_q, d)
    sim = _leaf(rng, B, B)
    cases = {
        "contrastive_loss": (lambda: contrastive_loss(sim, tau), {"S": sim}),
        "contrastive_cosine": (lambda: contrastive_loss(global_similarity(a, b), tau), {"a": a, "b": b}),
        "caption_slot_loss": (lambda: caption_slot_loss(slot_similarity(a, slots), tau),
                              {"h": a, "slots": slots}),
        "regularization_loss": (lambda: regularization_loss(slots), {"slots": slots}),
        "multi_level_loss": (lambda: multi_level_loss(a, b, c, slots, tau, 0.4)["L_ml"],
                             {"h_s": a, "h_t": b, "hv_hat": c, "slots": slots}),
    }

    # the teacher is a constant for backprop, so it is frozen for differencing too
    targets = soften_targets(a, c, slots, 0.5, tau)

    def guided():
        l_vt = contrastive_loss(global_similarity(c, b), tau)
        return guided_vt_loss(b, c, targets, tau, 0.6, l_vt)[0]

    cases["guided_vt_loss"] = (guided, {"h_t": b, "hv_hat": c})
    return cases


def small_model(seed: int, mode: str = "dual_cross", **overrides) -> tuple[RetrievalModel, dict, HyperParams]:
    hp = HyperParams(d=SMALL["d"], n_q=SMALL["n_q"], heads=SMALL["heads"], tau=SMALL["tau"],
                     batch_size=SMALL["B"], interaction_mode=mode, seed=seed, **overrides)
    rng = np.random.default_rng(seed + 1000)
    dims = {m: 6 for m in MODALITIES}
    lengths = {"visual": 3, "english": 2, "non_english": 2, "description": 4}
    batch = {m: rng.normal(size=(SMALL["B"], lengths[m], dims[m])) for m in MODALITIES}
    return RetrievalModel(hp, dims, seed=seed), batch, hp


def objective_case(seed: int, mode: str = "dual_cross"):
    model, batch, hp = small_model(seed, mode)
    out = model.forward(batch)
    targets = soften_targets(out.h_s, out.hv_hat, out.slots_hat, hp.alpha, hp.tau)
    return (lambda: total_loss(model.forward(batch), hp, targets)[0]), model.trainable()


def run_suite(seed: int, tolerance: float = 1e-4, modes=("dual_cross", "co_attention"),
              max_per_block: int | None = 12) -> dict[str, GradCheckReport]:
    reports = {}
    for name, (fn, params) in loss_cases(seed).items():
        reports[name] = finite_difference_check(fn, params, tolerance=tolerance)
    for mode in modes:
        fn, params = objective_case(seed, mode)
        reports[f"total_loss[{mode}]"] = finite_difference_check(
            fn, params, tolerance=tolerance, max_per_block=max_per_block, seed=seed)
    return reports

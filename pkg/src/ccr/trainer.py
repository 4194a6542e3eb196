"""Total objective, cosine learning-rate schedule and the training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import HyperParams
from .errors import ConfigError, InputError, NumericFailure
from .features import MODALITIES, TripletDataset
from .guidance import SoftTargets, guided_vt_loss, soften_targets
from .matching import LossBundle, contrastive_loss, global_similarity, multi_level_loss
from .model import ForwardOutput, RetrievalModel
from .slots import regularization_loss
from .tensor import Tensor

LOG_TERMS = ("L_total", "L_ts", "L_v", "L_c", "L_rkt", "L_reg")


def total_loss(out: ForwardOutput, hp: HyperParams,
               targets: SoftTargets | None = None) -> tuple[Tensor, LossBundle]:
    """``L = L_ts + L_ml + mu * L_reg`` with the guided visual/non-English term inside ``L_ml``.

    ``targets`` supplies a precomputed teacher; by default it is built from
    the English branch of ``out``.
    """
    tau = hp.tau
    l_ts = contrastive_loss(global_similarity(out.h_t, out.h_s), tau)
    override = None
    l_rkt = None
    if hp.lambda2 < 1:
        if targets is None:
            targets = soften_targets(out.h_s, out.hv_hat, out.slots_hat, hp.alpha, tau)
        l_vt = contrastive_loss(global_similarity(out.hv_hat, out.h_t), tau)
        override, l_rkt = guided_vt_loss(out.h_t, out.hv_hat, targets, tau, hp.lambda2, l_vt)
    slots = out.slots_hat if hp.lambda1 > 0 else None
    bundle = multi_level_loss(out.h_s, out.h_t, out.hv_hat, slots, tau, hp.lambda1, override)
    bundle.terms["L_ts"] = l_ts
    if l_rkt is not None:
        bundle.terms["L_rkt"] = l_rkt
        bundle.terms["L_vt_hat"] = override
    total = l_ts + bundle["L_ml"]
    if out.slots_hat is not None:
        l_reg = regularization_loss(out.slots_hat)
        bundle.terms["L_reg"] = l_reg
        if hp.mu:
            total = total + l_reg * hp.mu
    bundle.terms["L_total"] = total
    bad = [k for k, v in bundle.terms.items() if not np.all(np.isfinite(v.data))]
    if bad:
        raise NumericFailure(f"non-finite loss terms: {bad}")
    return total, bundle


def lr_schedule(step: int, total_steps: int, lr0: float) -> float:
    """Cosine decay from ``lr0`` at step 0 to 0 at ``total_steps``."""
    if total_steps < 1:
        raise InputError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise InputError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class Optimizer:
    """Plain gradient descent, heavy-ball momentum or Adam over named tensors."""

    def __init__(self, params: dict[str, Tensor], kind: str = "sgd", momentum: float = 0.9,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        if kind not in ("sgd", "momentum", "adam"):
            raise ConfigError(f"unknown optimizer {kind!r}")
        self.params, self.kind, self.momentum = params, kind, momentum
        self.betas, self.eps, self.t = betas, eps, 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.betas
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if self.kind == "sgd":
                p.data = p.data - lr * g
            elif self.kind == "momentum":
                self.m[k] = self.momentum * self.m[k] + g
                p.data = p.data - lr * self.m[k]
            else:
                self.m[k] = b1 * self.m[k] + (1 - b1) * g
                self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
                m_hat = self.m[k] / (1 - b1 ** self.t)
                v_hat = self.v[k] / (1 - b2 ** self.t)
                p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainLog:
    """Append-only per-step records; absent loss terms are logged as 0.0."""

    records: list = field(default_factory=list)

    def append(self, step: int, epoch: int, lr: float, bundle: LossBundle) -> None:
        vals = bundle.values()
        rec = {"step": step, "epoch": epoch, "lr": lr}
        rec.update({k: vals.get(k, 0.0) for k in LOG_TERMS})
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records])

    def epoch_means(self, key: str = "L_total") -> np.ndarray:
        epochs = self.column("epoch")
        vals = self.column(key)
        return np.array([vals[epochs == e].mean() for e in np.unique(epochs)])


def _steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def fit(dataset: TripletDataset, hp: HyperParams, seed: int | None = None,
        model: RetrievalModel | None = None, callback=None) -> tuple[RetrievalModel, TrainLog]:
    """Mini-batch training with seeded shuffling and a per-step cosine learning rate.

    On a non-finite loss or gradient the parameters are left at the last good
    state and :class:`NumericFailure` is raised carrying that state and the log.
    """
    if not len(dataset):
        raise InputError("cannot train on an empty dataset")
    seed = hp.seed if seed is None else seed
    if model is None:
        dims = {m: dataset.shape(m)[1] for m in MODALITIES}
        model = RetrievalModel(hp, dims, seed=seed)
    params = model.trainable()
    opt = Optimizer(params, hp.optimizer, hp.momentum)
    arrays = dataset.batch()
    n = len(dataset)
    per_epoch = _steps_per_epoch(n, hp.batch_size)
    total_steps = hp.epochs * per_epoch
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    log = TrainLog()
    step = 0
    good = model.state()
    for epoch in range(hp.epochs):
        order = shuffle_rng.permutation(n)
        for b in range(per_epoch):
            idx = order[b * hp.batch_size:(b + 1) * hp.batch_size]
            batch = {m: arrays[m][idx] for m in MODALITIES}
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                try:
                    loss, bundle = total_loss(model.forward(batch), hp)
                except NumericFailure as exc:
                    raise NumericFailure(f"{exc} at step {step}", good, log) from None
                loss.backward()
            if any(p.grad is not None and not np.all(np.isfinite(p.grad)) for p in params.values()):
                raise NumericFailure(f"non-finite gradient at step {step}", model.state(), log)
            good = model.state()
            lr = lr_schedule(step, total_steps, hp.lr0)
            log.append(step, epoch, lr, bundle)
            opt.step(lr)
            if callback is not None:
                callback(step, log.records[-1])
            step += 1
    return model, log

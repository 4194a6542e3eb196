"""Fused inference scores, recall metrics and the ablation harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import HyperParams, baseline
from .errors import ConfigError, DataError, InputError, ShapeError
from .features import MODALITIES, TripletDataset
from .matching import caption_slot_similarity
from .model import RetrievalModel
from .tensor import no_grad

KS = (1, 5, 10)
AXES = ("components", "interaction", "guidance_source", "n_views", "description_pooling", "beta")
CSV_COLUMNS = ("config_id", "axis_value", "t2v_r1", "t2v_r5", "t2v_r10",
               "v2t_r1", "v2t_r5", "v2t_r10", "sumr", "seed")


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na, nb = np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise InputError("zero-norm embedding")
    return (a / na[..., None]) @ (b / nb[..., None]).T


def final_similarity(h_t, hv_hat, slots, beta: float = 0.8) -> float:
    """``beta * S_g(h_t, hv_hat) + (1 - beta) * S_l(h_t, slots)`` for one pair."""
    if not 0 <= beta <= 1:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    h_t, hv_hat = np.asarray(h_t, dtype=float), np.asarray(hv_hat, dtype=float)
    s_g = float(_cosine(h_t[None], hv_hat[None])[0, 0])
    if beta == 1:
        return s_g
    return beta * s_g + (1.0 - beta) * caption_slot_similarity(h_t, slots)


def score_matrix(h_t: np.ndarray, hv_hat: np.ndarray, slots: np.ndarray | None,
                 beta: float = 0.8) -> np.ndarray:
    """Queries (rows, non-English captions) by gallery (columns, visual items)."""
    if not 0 <= beta <= 1:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    s = _cosine(h_t, hv_hat)
    if beta == 1:
        return s
    if slots is None:
        raise ConfigError("beta < 1 needs slots")
    g, n_q, d = slots.shape
    local = _cosine(h_t, slots.reshape(g * n_q, d)).reshape(h_t.shape[0], g, n_q).max(axis=-1)
    return beta * s + (1.0 - beta) * local


@dataclass(frozen=True)
class RecallReport:
    direction: str
    recalls: dict

    def __getitem__(self, k: int) -> float:
        return self.recalls[k]

    @property
    def r1(self) -> float:
        return self.recalls[1]


def ranks_of(scores: np.ndarray, ground_truth: Sequence[int]) -> np.ndarray:
    """Zero-based rank of each query's ground-truth item.

    Candidates are ordered by descending score, ties by ascending index.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ShapeError("score matrix must be 2-D")
    gt = np.asarray(ground_truth)
    if gt.shape != (scores.shape[0],):
        raise DataError("need exactly one ground-truth item per query")
    if np.any(gt < 0) or np.any(gt >= scores.shape[1]):
        raise DataError("ground-truth item not in gallery")
    target = scores[np.arange(len(gt)), gt][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    ahead = (scores > target) | ((scores == target) & (cols < gt[:, None]))
    return ahead.sum(axis=1)


def recall_metrics(scores, ground_truth=None, ks: Iterable[int] = KS, direction: str = "t2v") -> RecallReport:
    """Fraction of queries whose ground truth lands in the top ``k`` for each ``k``."""
    scores = np.asarray(scores, dtype=float)
    if ground_truth is None:
        ground_truth = np.arange(scores.shape[0])
    ranks = ranks_of(scores, ground_truth)
    return RecallReport(direction, {int(k): float(np.mean(ranks < k)) for k in ks})


def sum_recall(t2v: RecallReport, v2t: RecallReport, ks: Iterable[int] = KS) -> float:
    return 100.0 * sum(r[k] for r in (t2v, v2t) for k in ks)


@dataclass
class Evaluation:
    t2v: RecallReport
    v2t: RecallReport
    scores: np.ndarray
    v2c_attention: np.ndarray | None

    @property
    def sumr(self) -> float:
        return sum_recall(self.t2v, self.v2t)

    def row(self, config_id: str, axis_value, seed=None) -> dict:
        row = {"config_id": config_id, "axis_value": axis_value}
        for rep in (self.t2v, self.v2t):
            for k in KS:
                row[f"{rep.direction}_r{k}"] = rep[k]
        row["sumr"] = self.sumr
        row["seed"] = seed if seed is not None else ""
        return row


def embed(model: RetrievalModel, dataset: TripletDataset, chunk: int = 256) -> dict:
    """Common-space vectors and slots for every item, computed once without a graph."""
    arrays = dataset.batch()
    parts = {"h_t": [], "hv_hat": [], "slots_hat": [], "v2c": []}
    with no_grad():
        for start in range(0, len(dataset), chunk):
            out = model.forward({m: arrays[m][start:start + chunk] for m in MODALITIES})
            parts["h_t"].append(out.h_t.data)
            parts["hv_hat"].append(out.hv_hat.data)
            if out.slots_hat is not None:
                parts["slots_hat"].append(out.slots_hat.data)
            if out.v2c_attention is not None:
                parts["v2c"].append(out.v2c_attention)
    return {k: (np.concatenate(v) if v else None) for k, v in parts.items()}


def evaluate_dataset(model: RetrievalModel, dataset: TripletDataset, beta: float | None = None) -> Evaluation:
    """Both retrieval directions over the full gallery; item ``i`` matches caption ``i``.

    Visual-to-text ranking uses the same fused score matrix transposed, so the
    slot term is scored against the caption being retrieved.
    """
    beta = model.hp.beta if beta is None else beta
    emb = embed(model, dataset)
    scores = score_matrix(emb["h_t"], emb["hv_hat"], emb["slots_hat"], beta)
    t2v = recall_metrics(scores, direction="t2v")
    v2t = recall_metrics(scores.T, direction="v2t")
    return Evaluation(t2v, v2t, scores, emb["v2c"])


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

def ablation_config(base: HyperParams, axis: str, value) -> HyperParams:
    """Hyper-parameters for one point of an ablation axis, derived from the full model ``base``."""
    if axis == "components":
        stages = {
            "baseline": baseline(base),
            "+mvss": base.replace(lambda1=0.0, lambda2=1.0, beta=1.0),
            "+mm": base.replace(lambda2=1.0),
            "+smeg": base,
        }
        key = str(value).lower()
        if key not in stages:
            raise ConfigError(f"components value must be one of {list(stages)}")
        return stages[key]
    if axis == "interaction":
        table = {
            "dual_cross": dict(interaction_mode="dual_cross", interaction_direction="dual"),
            "co_attention": dict(interaction_mode="co_attention", interaction_direction="dual"),
            "v2c": dict(interaction_mode="dual_cross", interaction_direction="v2c"),
            "c2v": dict(interaction_mode="dual_cross", interaction_direction="c2v"),
        }
        if value not in table:
            raise ConfigError(f"interaction value must be one of {list(table)}")
        return base.replace(**table[value])
    if axis == "guidance_source":
        table = {"none": dict(lambda2=1.0), "S_g": dict(alpha=1.0), "S_l": dict(alpha=0.0),
                 "both": {}}
        if value not in table:
            raise ConfigError(f"guidance_source value must be one of {list(table)}")
        if value in ("S_g", "S_l", "both") and base.lambda2 == 1:
            raise ConfigError("guidance ablation needs lambda2 < 1 in the base config")
        return base.replace(**table[value])
    if axis == "n_views":
        try:
            n = int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"n_views value {value!r} is not an integer") from None
        if n < 1:
            raise ConfigError("n_views must be positive")
        return base.replace(n_q=n)
    if axis == "description_pooling":
        if value not in ("cls", "mean", "all", "multi_view"):
            raise ConfigError("description_pooling value must be cls, mean, all or multi_view")
        return base.replace(description_pooling=value)
    if axis == "beta":
        try:
            b = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"beta value {value!r} is not a number") from None
        return base.replace(beta=b)
    raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def ablation_sweep(base: HyperParams, axis: str, values: Sequence, train: TripletDataset,
                   test: TripletDataset, seeds: Sequence[int] = (0,), progress=None) -> list[dict]:
    """Train and evaluate one run per (value, seed); returns CSV-ready rows.

    The ``beta`` axis only changes inference, so one model per seed is
    trained and scored at every value.
    """
    from .trainer import fit

    configs = [(v, ablation_config(base, axis, v)) for v in values]
    rows = []
    for seed in seeds:
        trained = None
        for value, hp in configs:
            hp = hp.replace(seed=seed)
            if axis == "beta":
                if trained is None:
                    trained, _ = fit(train, hp.replace(beta=base.beta), seed=seed)
                model = trained
            else:
                model, _ = fit(train, hp, seed=seed)
            ev = evaluate_dataset(model, test, beta=hp.beta)
            rows.append(ev.row(f"{axis}={value}", value, seed))
            if progress is not None:
                progress(rows[-1])
    return rows


def write_report(path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

"""Hyper-parameters shared by the model, trainer, evaluation and CLI."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .interaction import DIRECTIONS, MODES
from .slots import POOLINGS

OPTIMIZERS = ("sgd", "momentum", "adam")
# initial rate used for full-scale training with pretrained backbones; the toy
# encoders here train with the much larger default ``lr0``
REFERENCE_LR0 = 1e-5


@dataclass(frozen=True)
class HyperParams:
    """Every scalar the model and training loop use.

    ``use_slots`` and ``use_interaction`` switch the description branch and the
    interaction module off for baseline runs.
    """

    tau: float = 0.05
    alpha: float = 0.5
    beta: float = 0.8
    lambda1: float = 0.4
    lambda2: float = 0.6
    mu: float = 0.1
    n_q: int = 4
    d: int = 128
    batch_size: int = 32
    epochs: int = 40
    heads: int = 4
    lr0: float = 0.1
    optimizer: str = "sgd"
    momentum: float = 0.9
    interaction_mode: str = "dual_cross"
    interaction_direction: str = "dual"
    interaction_layers: int = 1
    use_slots: bool = True
    use_interaction: bool = True
    description_pooling: str = "multi_view"
    description_encoder: str = "share"
    share_text: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        for name in ("alpha", "beta", "lambda1", "lambda2"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.mu < 0:
            raise ConfigError("mu must be non-negative")
        for name in ("n_q", "d", "batch_size", "heads", "interaction_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if not self.lr0 >= 0:
            raise ConfigError("lr0 must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if self.interaction_mode not in MODES:
            raise ConfigError(f"interaction_mode must be one of {MODES}")
        if self.interaction_direction not in DIRECTIONS:
            raise ConfigError(f"interaction_direction must be one of {DIRECTIONS}")
        if self.description_pooling not in POOLINGS:
            raise ConfigError(f"description_pooling must be one of {POOLINGS}")
        if self.description_encoder not in ("share", "finetune", "frozen"):
            raise ConfigError("description_encoder must be share, finetune or frozen")
        if not self.use_slots:
            if self.use_interaction:
                raise ConfigError("interaction needs the slot branch")
            if self.lambda1 or self.mu:
                raise ConfigError("lambda1 and mu need the slot branch; set them to 0")
            if self.lambda2 < 1 and self.alpha < 1:
                raise ConfigError("slot-based guidance needs the slot branch; set alpha=1 or lambda2=1")
            if self.beta < 1:
                raise ConfigError("slot scoring needs the slot branch; set beta=1")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "HyperParams":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(fields))
        if unknown:
            raise ConfigError(f"unknown hyper-parameter keys: {unknown}")
        kwargs = {}
        for key, value in data.items():
            default = fields[key].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{key} must be a boolean")
            elif isinstance(default, int):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{key} must be an integer")
            elif isinstance(default, float):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{key} must be a number")
                value = float(value)
            elif isinstance(default, str) and not isinstance(value, str):
                raise ConfigError(f"{key} must be a string")
            kwargs[key] = value
        return cls(**kwargs)


def baseline(hp: HyperParams) -> HyperParams:
    """The caption/vision contrastive baseline: no slots, interaction or guidance."""
    return hp.replace(use_slots=False, use_interaction=False, mu=0.0, lambda1=0.0,
                      lambda2=1.0, beta=1.0)


def load_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a flat JSON object")
    return data

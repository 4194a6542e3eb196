"""The dual-stream retrieval model: encoders, slot branch and interaction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .config import HyperParams
from .errors import ManifestError
from .features import MODALITIES, EncoderParams, encode_and_project, read_container, write_container
from .functional import linear
from .interaction import InteractionLayer, interact
from .slots import SlotGenerator, pool_descriptions
from .tensor import Tensor


@dataclass
class ForwardOutput:
    h_s: Tensor
    h_t: Tensor
    h_v: Tensor
    hv_hat: Tensor                  # visual vector after interaction (h_v when disabled)
    slots: Tensor | None            # M, before interaction
    slots_hat: Tensor | None        # M-hat, after interaction
    v2c_attention: np.ndarray | None


class RetrievalModel:
    def __init__(self, hp: HyperParams, dims: Mapping[str, int], seed: int | None = None):
        self.hp = hp
        self.dims = dict(dims)
        rng = np.random.default_rng(hp.seed if seed is None else seed)
        self.encoder = EncoderParams.init(self.dims, hp.d, rng, share_text=hp.share_text,
                                          description=hp.description_encoder)
        self.slot_gen = None
        if hp.use_slots and hp.description_pooling == "multi_view":
            self.slot_gen = SlotGenerator.init(hp.n_q, hp.d, hp.heads, rng)
        self.layers = []
        if hp.use_interaction:
            self.layers = [InteractionLayer.init(hp.interaction_mode, hp.d, hp.heads, rng, f"inter{i}")
                           for i in range(hp.interaction_layers)]

    # -- parameters ---------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        """Unique named parameter tensors (shared tensors listed once)."""
        out = {f"enc.{k}": v for k, v in self.encoder.parameters().items()}
        if self.slot_gen is not None:
            out.update({f"slots.{k}": v for k, v in self.slot_gen.parameters().items()})
        for i, layer in enumerate(self.layers):
            out.update({f"inter{i}.{k}": v for k, v in layer.parameters().items()})
        return out

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if v.requires_grad}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            missing, extra = set(params) - set(state), set(state) - set(params)
            raise KeyError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, v in params.items():
            arr = np.asarray(state[k], dtype=v.data.dtype)
            if arr.shape != v.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {v.shape}")
            v.data = arr.copy()

    # -- forward ------------------------------------------------------------
    def forward(self, batch: Mapping[str, np.ndarray]) -> ForwardOutput:
        hp = self.hp
        enc = encode_and_project({m: batch[m] for m in MODALITIES}, self.encoder)
        h_v = enc.h["v"]
        slots = slots_hat = v2c = None
        hv_hat = h_v
        if hp.use_slots:
            slots = pool_descriptions(enc.Z["c"], hp.description_pooling, self.slot_gen)
            slots_hat, z_v = slots, enc.Z["v"]
            for layer in self.layers:
                out = interact(z_v, slots_hat, layer, hp.interaction_direction)
                z_v, slots_hat, v2c = out.z_v, out.slots, out.v2c_attention
            if self.layers:
                cls = linear(z_v[..., 0:1, :], self.encoder.proj["visual"])
                hv_hat = cls.reshape(cls.shape[0], cls.shape[-1])
        return ForwardOutput(enc.h["s"], enc.h["t"], h_v, hv_hat, slots, slots_hat, v2c)


def save_checkpoint(path, model: RetrievalModel, extra: Mapping | None = None) -> None:
    """Write parameters into the feature container with a ``params`` manifest (64-bit payload)."""
    state = model.state()
    names = sorted(state)
    manifest = {"kind": "params", "hyperparams": model.hp.to_dict(), "dims": model.dims,
                "params": [{"name": k, "shape": list(state[k].shape)} for k in names]}
    if extra:
        manifest["extra"] = dict(extra)
    write_container(path, manifest, [state[k] for k in names], dtype="f64")


def load_checkpoint(path) -> RetrievalModel:
    manifest, payload = read_container(path)
    if manifest.get("kind") != "params":
        raise ManifestError(f"{path}: not a checkpoint (kind={manifest.get('kind')!r})")
    try:
        hp = HyperParams.from_dict(manifest["hyperparams"])
        entries = manifest["params"]
        dims = manifest["dims"]
    except KeyError as exc:
        raise ManifestError(f"{path}: manifest lacks {exc}") from None
    dt = np.dtype("<f8") if manifest["dtype"] == "f64" else np.dtype("<f4")
    flat = np.frombuffer(payload, dtype=dt)
    expected = sum(int(np.prod(e["shape"])) for e in entries)
    if expected != flat.size:
        raise ManifestError(f"{path}: manifest shapes need {expected} values, payload has {flat.size}")
    state, off = {}, 0
    for e in entries:
        n = int(np.prod(e["shape"]))
        state[e["name"]] = flat[off:off + n].reshape(e["shape"]).astype(np.float64)
        off += n
    model = RetrievalModel(hp, dims)
    try:
        model.load_state(state)
    except (KeyError, ValueError) as exc:
        raise ManifestError(f"{path}: {exc}") from None
    return model

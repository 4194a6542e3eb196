"""Feature sequences, synthetic triplet data, the binary feature container and
the per-modality encoders that map raw features into the common space."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, FormatError, InputError, IntegrityError, ManifestError, ShapeError
from .functional import linear
from .tensor import Tensor

MODALITIES = ("visual", "english", "non_english", "description")
SHORT = {"visual": "v", "english": "s", "non_english": "t", "description": "c"}
TEXT_MODALITIES = ("english", "non_english", "description")

MAGIC = b"LECR"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass(frozen=True)
class FeatureSequence:
    """Encoder output for one item: an ``N x d`` token matrix with [CLS] at ``cls_index``."""

    tokens: np.ndarray
    modality: str
    cls_index: int = 0

    def __post_init__(self):
        tokens = np.asarray(self.tokens)
        if tokens.ndim != 2 or tokens.shape[0] < 1:
            raise ShapeError(f"feature sequence must be a non-empty matrix, got shape {tokens.shape}")
        if self.modality not in MODALITIES:
            raise InputError(f"unknown modality {self.modality!r}")
        if not np.all(np.isfinite(tokens)):
            raise InputError("feature sequence contains non-finite entries")
        if not 0 <= self.cls_index < tokens.shape[0]:
            raise InputError(f"cls_index {self.cls_index} outside sequence of length {tokens.shape[0]}")
        tokens.flags.writeable = False
        object.__setattr__(self, "tokens", tokens)

    @property
    def cls(self) -> np.ndarray:
        return self.tokens[self.cls_index]


@dataclass(frozen=True)
class TripletExample:
    id: str
    visual: FeatureSequence
    english: FeatureSequence
    non_english: FeatureSequence
    description: FeatureSequence

    def sequence(self, modality: str) -> FeatureSequence:
        return getattr(self, modality)


@dataclass(frozen=True)
class TripletDataset:
    """An immutable list of triplet examples plus optional named splits of item ids."""

    examples: tuple
    splits: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        object.__setattr__(self, "splits", {k: tuple(v) for k, v in self.splits.items()})
        if self.examples:
            for m in MODALITIES:
                shapes = {ex.sequence(m).tokens.shape for ex in self.examples}
                if len(shapes) != 1:
                    raise ShapeError(f"{m} sequences have differing shapes {sorted(shapes)}")
        ids = [ex.id for ex in self.examples]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate item ids")
        known = set(ids)
        for name, members in self.splits.items():
            if not known.issuperset(members):
                raise InputError(f"split {name!r} names unknown item ids")

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i) -> TripletExample:
        return self.examples[i]

    @property
    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    def shape(self, modality: str) -> tuple[int, int]:
        return self.examples[0].sequence(modality).tokens.shape

    def stacked(self, modality: str, indices: Sequence[int] | None = None) -> np.ndarray:
        """``(n, N, d)`` array of one modality for the given item positions."""
        idx = range(len(self)) if indices is None else indices
        return np.stack([self.examples[i].sequence(modality).tokens for i in idx])

    def batch(self, indices: Sequence[int] | None = None) -> dict[str, np.ndarray]:
        return {m: self.stacked(m, indices) for m in MODALITIES}

    def subset(self, split: str) -> "TripletDataset":
        """Dataset restricted to a named split; the whole dataset if the split is absent."""
        if split not in self.splits:
            return self
        wanted = set(self.splits[split])
        return TripletDataset(tuple(ex for ex in self.examples if ex.id in wanted))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic world.

    Every item has a Gaussian latent vector split into ``n_facets`` disjoint
    coordinate blocks.  Visual tokens show single facets, English captions
    observe the whole latent with noise ``sigma_en``, non-English captions add
    further noise on top of the English ones so that their total noise is
    ``sigma_noneng``, and descriptions enumerate ``facets_per_description`` of
    the facets.
    """

    n_items: int = 1200
    n_test: int = 200
    latent_dim: int = 128
    dims: Mapping[str, int] = field(default_factory=lambda: {m: 128 for m in MODALITIES})
    n_tokens: Mapping[str, int] = field(default_factory=lambda: {
        "visual": 16, "english": 12, "non_english": 12, "description": 24})
    sigma_en: float = 0.1
    sigma_noneng: float = 0.2
    sigma_visual: float = 0.1
    sigma_description: float = 0.05
    n_facets: int = 4
    facets_per_description: int = 3

    def validate(self) -> None:
        if self.n_items < 1:
            raise ConfigError("synthetic spec needs at least one item")
        if not 0 <= self.n_test <= self.n_items:
            raise ConfigError("n_test must lie in [0, n_items]")
        for name in ("sigma_en", "sigma_noneng", "sigma_visual", "sigma_description"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.sigma_noneng < self.sigma_en:
            raise ConfigError("sigma_noneng must be at least sigma_en")
        if not 1 <= self.n_facets <= self.latent_dim:
            raise ConfigError("n_facets must lie in [1, latent_dim]")
        if not 1 <= self.facets_per_description <= self.n_facets:
            raise ConfigError("facets_per_description must lie in [1, n_facets]")
        for m in MODALITIES:
            if self.dims.get(m, 0) < 1 or self.n_tokens.get(m, 0) < 1:
                raise ConfigError(f"missing or invalid dims/n_tokens for {m}")

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["dims"], out["n_tokens"] = dict(self.dims), dict(self.n_tokens)
        return out


def _facet_tokens(facets: np.ndarray, chosen: Sequence[int], n: int) -> np.ndarray:
    # cycle through the chosen facets; rescaled so a facet token has the norm of a full latent
    scale = math.sqrt(facets.shape[0])
    return np.stack([scale * facets[chosen[t % len(chosen)]] for t in range(n)])


def generate_synthetic(spec: SynthSpec, seed: int) -> TripletDataset:
    """Deterministic synthetic triplet dataset; token 0 of every sequence is [CLS]."""
    spec.validate()
    rng = np.random.default_rng(seed)
    L, nf = spec.latent_dim, spec.n_facets
    blocks = np.array_split(np.arange(L), nf)
    maps = {}
    for m in MODALITIES:
        d = spec.dims[m]
        maps[m] = np.eye(L) if d == L else rng.normal(0.0, 1.0 / math.sqrt(L), (L, d))
    extra_t = math.sqrt(max(spec.sigma_noneng ** 2 - spec.sigma_en ** 2, 0.0))
    all_facets = list(range(nf))
    nv, ns, nc = spec.n_tokens["visual"], spec.n_tokens["english"], spec.n_tokens["description"]
    nt = spec.n_tokens["non_english"]

    examples = []
    for i in range(spec.n_items):
        u = rng.normal(0.0, 1.0, L)
        facets = np.zeros((nf, L))
        for f, b in enumerate(blocks):
            facets[f, b] = u[b]
        chosen = sorted(rng.choice(nf, size=spec.facets_per_description, replace=False).tolist())

        vis = np.vstack([u, _facet_tokens(facets, all_facets, nv - 1)]) if nv > 1 else u[None]
        vis = vis + spec.sigma_visual * rng.normal(size=vis.shape)

        eng = np.vstack([u, _facet_tokens(facets, all_facets, ns - 1)]) if ns > 1 else u[None]
        eng = eng + spec.sigma_en * rng.normal(size=eng.shape)
        # non-English: the English caption degraded by extra noise
        if nt <= ns:
            base = eng[:nt]
        else:
            base = np.vstack([eng, _facet_tokens(facets, all_facets, nt - ns)])
        non = base + extra_t * rng.normal(size=base.shape)

        summary = facets[chosen].sum(axis=0)
        desc = np.vstack([summary, _facet_tokens(facets, chosen, nc - 1)]) if nc > 1 else summary[None]
        desc = desc + spec.sigma_description * rng.normal(size=desc.shape)

        seqs = {}
        for m, raw in (("visual", vis), ("english", eng), ("non_english", non), ("description", desc)):
            seqs[m] = FeatureSequence((raw @ maps[m]).astype(np.float32), m)
        examples.append(TripletExample(str(i), **seqs))

    ids = [ex.id for ex in examples]
    n_train = spec.n_items - spec.n_test
    splits = {"train": ids[:n_train], "test": ids[n_train:]} if spec.n_test else {}
    return TripletDataset(tuple(examples), splits)


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------

def _dumps(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, manifest: dict, arrays: Sequence[np.ndarray], dtype: str = "f32") -> None:
    """Write ``MAGIC | version | u32 manifest length | manifest JSON | payload``."""
    if dtype not in _DTYPES:
        raise FormatError(f"unsupported dtype {dtype!r}")
    np_dtype = _DTYPES[dtype]
    payload = b"".join(np.ascontiguousarray(a, dtype=np_dtype).tobytes(order="C") for a in arrays)
    manifest = dict(manifest, dtype=dtype, byte_order="little", layout="row-major",
                    payload_bytes=len(payload), payload_sha256=hashlib.sha256(payload).hexdigest())
    head = _dumps(manifest)
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]) + struct.pack("<I", len(head)) + head + payload)


def read_container(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 9 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != VERSION:
        raise FormatError(f"{path}: unsupported version {raw[4]}")
    (n,) = struct.unpack("<I", raw[5:9])
    if len(raw) < 9 + n:
        raise IntegrityError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[9:9 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("dtype") not in _DTYPES or manifest.get("byte_order") != "little" \
            or manifest.get("layout") != "row-major":
        raise FormatError(f"{path}: unsupported dtype/byte order/layout")
    payload = raw[9 + n:]
    if len(payload) != manifest.get("payload_bytes"):
        raise IntegrityError(f"{path}: payload has {len(payload)} bytes, manifest says "
                             f"{manifest.get('payload_bytes')}")
    if hashlib.sha256(payload).hexdigest() != manifest.get("payload_sha256"):
        raise IntegrityError(f"{path}: payload checksum mismatch")
    return manifest, payload


def save_features(path, dataset: TripletDataset, extra: Mapping | None = None) -> None:
    if not len(dataset):
        raise InputError("refusing to write an empty dataset")
    n_tokens = {m: dataset.shape(m)[0] for m in MODALITIES}
    dims = {m: dataset.shape(m)[1] for m in MODALITIES}
    arrays = []
    for ex in dataset.examples:
        for m in MODALITIES:
            seq = ex.sequence(m)
            if seq.tokens.shape != (n_tokens[m], dims[m]):
                raise ManifestError(f"item {ex.id} {m} has shape {seq.tokens.shape}, "
                                    f"manifest expects {(n_tokens[m], dims[m])}")
            if seq.cls_index != 0:
                raise ManifestError("the feature format fixes [CLS] at token 0")
            arrays.append(seq.tokens)
    manifest = {"kind": "features", "item_ids": dataset.ids, "modalities": list(MODALITIES),
                "n_tokens": n_tokens, "dims": dims, "cls_index": 0,
                "splits": {k: list(v) for k, v in dataset.splits.items()}}
    if extra:
        manifest["extra"] = dict(extra)
    write_container(path, manifest, arrays, dtype="f32")


def load_features(path) -> TripletDataset:
    manifest, payload = read_container(path)
    if manifest.get("kind") != "features":
        raise ManifestError(f"{path}: not a feature file (kind={manifest.get('kind')!r})")
    try:
        ids, mods = manifest["item_ids"], manifest["modalities"]
        n_tokens, dims = manifest["n_tokens"], manifest["dims"]
    except KeyError as exc:
        raise ManifestError(f"{path}: manifest lacks {exc}") from None
    if list(mods) != list(MODALITIES):
        raise ManifestError(f"{path}: unexpected modality list {mods}")
    dt = _DTYPES[manifest["dtype"]]
    sizes = [n_tokens[m] * dims[m] for m in mods]
    expected = len(ids) * sum(sizes) * dt.itemsize
    if expected != len(payload):
        raise ManifestError(f"{path}: manifest dims imply {expected} bytes, payload has {len(payload)}")
    flat = np.frombuffer(payload, dtype=dt)
    examples, off = [], 0
    for item in ids:
        seqs = {}
        for m, size in zip(mods, sizes):
            seqs[m] = FeatureSequence(flat[off:off + size].reshape(n_tokens[m], dims[m]).copy(), m)
            off += size
        examples.append(TripletExample(str(item), **seqs))
    return TripletDataset(tuple(examples), manifest.get("splits", {}))


# ---------------------------------------------------------------------------
# Encoders and common-space projection
# ---------------------------------------------------------------------------

@dataclass
class EncoderParams:
    """Per-modality token transform ``F_x`` (``d_x -> d``) and projection ``phi_x`` (``d -> d``).

    With ``share_text`` the English and non-English encoders are one set of
    tensors.  ``description`` chooses how descriptions are encoded: ``share``
    reuses the caption encoder, ``finetune`` trains a separate copy and
    ``frozen`` keeps a separate token transform fixed at its initial value.
    A token transform of ``None`` is the identity.
    """

    token: dict
    proj: dict
    share_text: bool = True
    description: str = "share"

    @classmethod
    def init(cls, dims: Mapping[str, int], d: int, rng: np.random.Generator,
             share_text: bool = True, description: str = "share") -> "EncoderParams":
        if description not in ("share", "finetune", "frozen"):
            raise ConfigError(f"unknown description encoding {description!r}")
        if share_text and dims["english"] != dims["non_english"]:
            raise ConfigError("shared text encoders need equal English/non-English dims")
        if description == "share" and dims["description"] != dims["english"]:
            raise ConfigError("a shared description encoder needs the caption input dim")

        def make(m):
            d_in = dims[m]
            tok = T.parameter(rng.normal(0.0, 1.0 / math.sqrt(d_in), (d_in, d)), f"F_{SHORT[m]}")
            proj = T.parameter(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d)), f"phi_{SHORT[m]}")
            return tok, proj

        token, proj = {}, {}
        for m in MODALITIES:
            token[m], proj[m] = make(m)
        if share_text:
            token["non_english"], proj["non_english"] = token["english"], proj["english"]
        if description == "share":
            token["description"], proj["description"] = token["english"], proj["english"]
        elif description == "frozen":
            token["description"].requires_grad = False
        return cls(token, proj, share_text, description)

    def parameters(self) -> dict[str, Tensor]:
        """Named tensors; shared tensors appear once under their first owner's name."""
        out, seen = {}, set()
        for kind, table in (("token", self.token), ("proj", self.proj)):
            for m in MODALITIES:
                t = table[m]
                if t is None or id(t) in seen:
                    continue
                seen.add(id(t))
                out[f"{kind}.{m}"] = t
        return out


@dataclass
class Encoded:
    """Encoded sequences in model dim (``Z``) and their projected [CLS] vectors (``h``)."""

    Z: dict
    h: dict


def _project_cls(z: Tensor, proj: Tensor, cls_index: int) -> Tensor:
    row = z[..., cls_index:cls_index + 1, :]
    out = linear(row, proj)
    return out.reshape(*out.shape[:-2], out.shape[-1])


def encode_and_project(batch, params: EncoderParams, cls_index: int = 0) -> Encoded:
    """Encode each modality and project its [CLS] token into the common space.

    ``batch`` maps modality names to ``(..., N, d_x)`` arrays (or is a
    :class:`TripletExample`).  Returns ``Z`` for all four modalities and ``h``
    for visual, English and non-English.
    """
    if isinstance(batch, TripletExample):
        batch = {m: batch.sequence(m).tokens for m in MODALITIES}
    missing = [m for m in MODALITIES if m not in batch]
    if missing:
        raise InputError(f"batch lacks modalities {missing}")
    Z, h = {}, {}
    for m in MODALITIES:
        x = T.ensure_tensor(np.asarray(batch[m], dtype=np.float64)
                            if not isinstance(batch[m], Tensor) else batch[m])
        tok = params.token[m]
        if tok is not None and x.shape[-1] != tok.shape[0]:
            raise ShapeError(f"{m} features have dim {x.shape[-1]}, encoder expects {tok.shape[0]}")
        z = x if tok is None else linear(x, tok)
        Z[SHORT[m]] = z
        if m != "description":
            h[SHORT[m]] = _project_cls(z, params.proj[m], cls_index)
    # descriptions enter the slot generator projected by phi_c over every token
    Z["c"] = linear(Z["c"], params.proj["description"])
    return Encoded(Z, h)

"""Channel metadata: shared vocabulary, meta embedding and conditional batch norm.

Each channel is described by four discrete ids (body location, side, sensor
type, axis). Id 0 is the padding token in every field and stands for
"unknown". The embedded ids are mixed by a small MLP and layer-normalized into
a metadata vector, which then modulates every normalization layer of the
shared encoder.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from chanfree.autodiff import functional as F
from chanfree.autodiff.nn import BatchNorm1d, Embedding, LayerNorm, Linear, Module
from chanfree.autodiff.tensor import Tensor
from chanfree.errors import InputError, ParseError

log = logging.getLogger(__name__)

FIELDS = ("location", "side", "sensor", "axis")
UNKNOWN = "-"


@dataclass(frozen=True)
class ChannelMeta:
    location_id: int = 0
    side_id: int = 0
    sensor_id: int = 0
    axis_id: int = 0

    def __post_init__(self):
        if min(self.ids) < 0:
            raise InputError(f"metadata ids must be non-negative: {self.ids}")

    @property
    def ids(self) -> tuple[int, int, int, int]:
        return (self.location_id, self.side_id, self.sensor_id, self.axis_id)

    @classmethod
    def padding(cls) -> "ChannelMeta":
        return cls()

    @classmethod
    def from_ids(cls, ids: Sequence[int]) -> "ChannelMeta":
        return cls(*(int(i) for i in ids))


def meta_array(metas: Iterable[ChannelMeta]) -> np.ndarray:
    """Stack metadata into an ``(n, 4)`` integer array."""
    return np.array([m.ids for m in metas], dtype=np.int64).reshape(-1, 4)


@dataclass
class MetaVocab:
    """Global name-to-id maps, one per field, shared across datasets.

    Ids are assigned append-only starting at 1; 0 is never given to a name.
    ``enabled`` switches whole fields off (their ids become padding).
    """

    names: dict[str, dict[str, int]] = field(default_factory=lambda: {f: {} for f in FIELDS})
    enabled: tuple[bool, bool, bool, bool] = (True, True, True, True)

    def lookup(self, field_name: str, name: str | None, grow: bool = True) -> int:
        if name is None or name == UNKNOWN or name == "":
            return 0
        table = self.names[field_name]
        key = name.strip().lower()
        if key not in table:
            if not grow:
                raise InputError(f"unknown {field_name} {name!r} in frozen vocabulary")
            table[key] = len(table) + 1
        return table[key]

    def register(self, location=None, side=None, sensor=None, axis=None, grow: bool = True) -> ChannelMeta:
        values = (location, side, sensor, axis)
        return ChannelMeta(*(self.lookup(f, v, grow) for f, v in zip(FIELDS, values)))

    def sizes(self) -> tuple[int, int, int, int]:
        """Embedding rows needed per field (padding row included)."""
        return tuple(len(self.names[f]) + 1 for f in FIELDS)

    def mask_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.array(ids, dtype=np.int64, copy=True)
        for j, on in enumerate(self.enabled):
            if not on:
                ids[..., j] = 0
        return ids

    def validate(self, ids: np.ndarray):
        ids = np.asarray(ids)
        sizes = np.array(self.sizes())
        if ids.size and ((ids < 0).any() or (ids >= sizes).any()):
            raise InputError("metadata id outside the vocabulary")

    def is_compatible_with(self, other: "MetaVocab") -> bool:
        """True when no name or id of ``self`` means something else in ``other``."""
        for f in FIELDS:
            theirs = {idx: name for name, idx in other.names[f].items()}
            for name, idx in self.names[f].items():
                if other.names[f].get(name, idx) != idx or theirs.get(idx, name) != name:
                    return False
        return True

    def copy(self) -> "MetaVocab":
        return MetaVocab({f: dict(v) for f, v in self.names.items()}, tuple(self.enabled))

    def to_dict(self) -> dict:
        return {"names": {f: dict(v) for f, v in self.names.items()}, "enabled": list(self.enabled)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetaVocab":
        return cls({f: {k: int(i) for k, i in d["names"][f].items()} for f in FIELDS},
                   tuple(bool(e) for e in d.get("enabled", (True,) * 4)))


@dataclass(frozen=True)
class ChannelDescriptor:
    index: int
    location: str | None
    side: str | None
    sensor: str | None
    axis: str | None


def parse_descriptor(path: str | Path) -> tuple[list[ChannelDescriptor], dict[str, str]]:
    """Read a channel descriptor table.

    Rows are ``index, location, side, sensor, axis`` with ``-`` for an unknown
    field. Lines starting with ``#`` are comments, except ``# key: value``
    directives, which are returned as the second element.
    """
    rows: list[ChannelDescriptor] = []
    directives: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if ":" in body:
                key, _, value = body.partition(":")
                directives[key.strip()] = value.strip()
            continue
        parts = [p.strip() for p in line.split(",")]
        if parts[0].lower() == "index":
            continue
        if len(parts) != 5:
            raise ParseError(f"expected 5 fields, got {len(parts)}", lineno)
        try:
            idx = int(parts[0])
        except ValueError:
            raise ParseError(f"bad channel index {parts[0]!r}", lineno) from None
        vals = [None if p in (UNKNOWN, "") else p for p in parts[1:]]
        rows.append(ChannelDescriptor(idx, *vals))
    return rows, directives


def write_descriptor(path: str | Path, rows: Sequence[ChannelDescriptor], directives: dict | None = None):
    lines = [f"# {k}: {v}" for k, v in (directives or {}).items()]
    lines.append("index, location, side, sensor, axis")
    for r in rows:
        vals = [v if v else UNKNOWN for v in (r.location, r.side, r.sensor, r.axis)]
        lines.append(", ".join([str(r.index)] + vals))
    Path(path).write_text("\n".join(lines) + "\n")


def register_metadata(descriptor, vocab: MetaVocab) -> list[ChannelMeta]:
    """Map channel descriptions onto ``vocab``, extending it with new names.

    ``descriptor`` is a descriptor file path or a sequence of
    :class:`ChannelDescriptor` rows.
    """
    if isinstance(descriptor, (str, Path)):
        descriptor, _ = parse_descriptor(descriptor)
    rows = sorted(descriptor, key=lambda r: r.index)
    before = vocab.sizes()
    metas = [vocab.register(r.location, r.side, r.sensor, r.axis) for r in rows]
    if vocab.sizes() != before:
        log.debug("vocabulary grew from %s to %s", before, vocab.sizes())
    return metas


class MetaEncoder(Module):
    """Embeds the four ids, mixes them with an MLP and layer-normalizes."""

    def __init__(self, vocab_sizes: Sequence[int], rng: np.random.Generator, d_meta: int = 64,
                 field_dim: int = 16, dtype=np.float64):
        self.embeddings = [Embedding(n, field_dim, rng, dtype=dtype) for n in vocab_sizes]
        self.fc1 = Linear(4 * field_dim, d_meta, rng, dtype=dtype)
        self.fc2 = Linear(d_meta, d_meta, rng, dtype=dtype)
        self.norm = LayerNorm(d_meta, dtype=dtype)
        self.d_meta = d_meta

    def vocab_sizes(self) -> tuple[int, ...]:
        return tuple(e.table.shape[0] for e in self.embeddings)

    def ensure_capacity(self, vocab_sizes: Sequence[int], rng: np.random.Generator):
        """Grow embedding tables for ids added to the vocabulary after construction."""
        for emb, n in zip(self.embeddings, vocab_sizes):
            emb.grow(n, rng)

    def forward(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] != 4:
            raise InputError(f"metadata ids must have shape (n, 4), got {ids.shape}")
        parts = [emb(ids[:, j]) for j, emb in enumerate(self.embeddings)]
        h = F.relu(self.fc1(F.concat(parts, axis=-1)))
        return self.norm(self.fc2(h))


def build_meta_vector(meta, vocab: MetaVocab, encoder: MetaEncoder, enable_mask=None) -> Tensor:
    """Metadata vector for one channel or a batch of channels.

    ``meta`` is a :class:`ChannelMeta`, a sequence of them, or an ``(n, 4)`` id
    array. Disabled fields are forced to the padding id before lookup.
    """
    if isinstance(meta, ChannelMeta):
        ids = meta_array([meta])
    elif isinstance(meta, np.ndarray):
        ids = meta.reshape(-1, 4)
    else:
        ids = meta_array(meta)
    vocab.validate(ids)
    if enable_mask is not None:
        vocab = MetaVocab(vocab.names, tuple(enable_mask))
    ids = vocab.mask_ids(ids)
    if ids.size and (ids >= np.array(encoder.vocab_sizes())).any():
        raise InputError("metadata id exceeds embedding table size")
    return encoder(ids)


class CBN(Module):
    """Batch norm whose output is rescaled and shifted per channel by the metadata vector.

    ``out = (1 + lam * tanh(W_g m + b_g)) * BN(u) + (W_b m + b_b)``. The scale
    stays within ``[1 - lam, 1 + lam]``.
    """

    def __init__(self, channels: int, d_meta: int, rng: np.random.Generator, lam: float = 0.1,
                 eps: float = 1e-5, momentum: float = 0.1, dtype=np.float64):
        if lam < 0:
            raise InputError("modulation coefficient must be non-negative")
        self.bn = BatchNorm1d(channels, eps=eps, momentum=momentum, dtype=dtype)
        self.gamma_proj = Linear(d_meta, channels, rng, dtype=dtype)
        self.beta_proj = Linear(d_meta, channels, rng, dtype=dtype)
        self.lam = lam

    def scale(self, m: Tensor) -> Tensor:
        return 1.0 + self.lam * F.tanh(self.gamma_proj(m))

    def forward(self, u: Tensor, m: Tensor) -> Tensor:
        if m.shape[0] != u.shape[0]:
            raise InputError(f"got {m.shape[0]} metadata vectors for {u.shape[0]} rows")
        normed = self.bn(u)
        scale = F.reshape(self.scale(m), (u.shape[0], -1, 1))
        shift = F.reshape(self.beta_proj(m), (u.shape[0], -1, 1))
        return normed * scale + shift

    def zero_projections(self):
        for lin in (self.gamma_proj, self.beta_proj):
            lin.weight.data[...] = 0
            lin.bias.data[...] = 0


def cbn_apply(u: Tensor, m: Tensor, layer: CBN, mode: str | None = None) -> Tensor:
    """Apply ``layer`` to ``u`` with one metadata vector per row; ``mode`` is 'train' or 'eval'."""
    if mode is not None:
        layer.train(mode == "train")
    return layer(u, m)

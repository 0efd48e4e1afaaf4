"""Windowed samples and padded mini-batches."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from chanfree.errors import InputError
from chanfree.metadata import ChannelMeta, meta_array


@dataclass
class Sample:
    """One window: ``C`` channels of equal length, their metadata and a label.

    ``meta`` is an ``(C, 4)`` integer array of (location, side, sensor, axis)
    ids; ``valid`` marks channels that are present.
    """

    window: np.ndarray
    meta: np.ndarray
    label: int
    subject: int | str = 0
    valid: np.ndarray | None = None
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.window = np.asarray(self.window)
        if self.window.ndim != 2 or self.window.shape[0] < 1:
            raise InputError(f"window must be (C, l) with C >= 1, got {self.window.shape}")
        meta = self.meta
        if len(meta) and isinstance(meta[0], ChannelMeta):
            meta = meta_array(meta)
        self.meta = np.asarray(meta, dtype=np.int64).reshape(-1, 4)
        if self.meta.shape[0] != self.window.shape[0]:
            raise InputError("metadata rows must match channel count")
        if self.valid is None:
            self.valid = np.ones(self.window.shape[0], dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def n_channels(self) -> int:
        return self.window.shape[0]

    @property
    def length(self) -> int:
        return self.window.shape[1]

    def copy(self, **changes) -> "Sample":
        base = dict(window=self.window.copy(), meta=self.meta.copy(), valid=self.valid.copy(),
                    tags=dict(self.tags))
        base.update(changes)
        return replace(self, **base)

    def channel_keys(self) -> list[tuple[int, int, int, int]]:
        return [tuple(int(v) for v in row) for row in self.meta]


@dataclass
class Batch:
    x: np.ndarray  # (b, C_max, l)
    meta: np.ndarray  # (b, C_max, 4)
    mask: np.ndarray  # (b, C_max)
    labels: np.ndarray  # (b,)

    def __len__(self):
        return len(self.labels)


def collate(samples: Sequence[Sample], dtype=np.float32) -> Batch:
    """Stack samples, padding channel sets to the largest count with masked rows."""
    if not samples:
        raise InputError("cannot collate an empty list")
    length = samples[0].length
    if any(s.length != length for s in samples):
        raise InputError("all windows in a batch must share one length")
    c_max = max(s.n_channels for s in samples)
    b = len(samples)
    x = np.zeros((b, c_max, length), dtype=dtype)
    meta = np.zeros((b, c_max, 4), dtype=np.int64)
    mask = np.zeros((b, c_max), dtype=bool)
    for i, s in enumerate(samples):
        c = s.n_channels
        x[i, :c] = s.window
        meta[i, :c] = s.meta
        mask[i, :c] = s.valid
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return Batch(x, meta, mask, labels)


def iterate_batches(samples: Sequence[Sample], batch_size: int, rng: np.random.Generator | None = None,
                    dtype=np.float32):
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        yield collate([samples[i] for i in order[start:start + batch_size]], dtype=dtype)

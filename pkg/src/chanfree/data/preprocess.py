"""Resampling, windowing, per-channel standardization and LOSO splits."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from chanfree.data.sample import Sample
from chanfree.errors import InputError

log = logging.getLogger(__name__)

TARGET_HZ = 100.0
WINDOW = 256


@dataclass
class Recording:
    """A continuous multichannel recording from one subject.

    ``series`` is ``(C, T)`` on a shared time base, ``labels`` has length ``T``
    and ``meta`` is ``(C, 4)``.
    """

    subject: int | str
    series: np.ndarray
    rate_hz: float
    meta: np.ndarray
    labels: np.ndarray
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        if self.series.ndim == 1:
            self.series = self.series[None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.meta = np.asarray(self.meta, dtype=np.int64).reshape(-1, 4)
        if self.labels.shape[0] != self.series.shape[1]:
            raise InputError("labels must align with samples")
        if self.meta.shape[0] != self.series.shape[0]:
            raise InputError("one metadata row per channel required")


def resample_linear(series, from_hz: float, to_hz: float = TARGET_HZ) -> np.ndarray:
    """Linear interpolation of ``(..., T)`` onto a uniform ``to_hz`` grid over the same time span."""
    series = np.asarray(series, dtype=np.float64)
    if from_hz <= 0 or to_hz <= 0:
        raise InputError("sampling rates must be positive")
    n = series.shape[-1]
    if n < 2:
        raise InputError("need at least two samples to resample")
    if from_hz == to_hz:
        return series.copy()
    t_src = np.arange(n) / from_hz
    n_out = int(np.floor(t_src[-1] * to_hz + 1e-9)) + 1
    t_dst = np.arange(n_out) / to_hz
    flat = series.reshape(-1, n)
    out = np.stack([np.interp(t_dst, t_src, row) for row in flat])
    return out.reshape(series.shape[:-1] + (n_out,))


def resample_labels(labels, from_hz: float, to_hz: float = TARGET_HZ) -> np.ndarray:
    """Nearest-previous-sample label for each point of the resampled grid."""
    labels = np.asarray(labels)
    if from_hz == to_hz:
        return labels.copy()
    n = labels.shape[0]
    n_out = int(np.floor((n - 1) / from_hz * to_hz + 1e-9)) + 1
    idx = np.minimum(np.floor(np.arange(n_out) / to_hz * from_hz + 1e-9).astype(int), n - 1)
    return labels[idx]


def resample_recording(rec: Recording, to_hz: float = TARGET_HZ) -> Recording:
    return Recording(rec.subject, resample_linear(rec.series, rec.rate_hz, to_hz), to_hz, rec.meta,
                     resample_labels(rec.labels, rec.rate_hz, to_hz), list(rec.channel_names))


def majority_label(labels: np.ndarray, threshold: float = 0.5) -> int | None:
    """Most frequent label (lowest id on ties), or None if it covers less than ``threshold``."""
    counts = Counter(int(v) for v in labels)
    top = max(counts.values())
    winner = min(k for k, v in counts.items() if v == top)
    return winner if top / len(labels) >= threshold else None


def segment_windows(rec: Recording, length: int = WINDOW, stride: int | None = None) -> list[Sample]:
    """Cut ``rec`` into windows; the remainder at the end is dropped."""
    stride = length if stride is None else stride
    total = rec.series.shape[1]
    out = []
    for start in range(0, total - length + 1, stride):
        label = majority_label(rec.labels[start:start + length])
        if label is None:
            continue
        out.append(Sample(rec.series[:, start:start + length].copy(), rec.meta.copy(), label, rec.subject,
                          tags={"start": start}))
    return out


@dataclass
class StandardizerState:
    """Per-channel mean/std keyed by the channel's metadata tuple."""

    stats: dict[tuple, tuple[float, float]]
    fitted_on: frozenset = frozenset()
    floor: float = 1e-8


def standardize_fit(train_samples: Sequence[Sample], floor: float = 1e-8) -> StandardizerState:
    sums: dict[tuple, list] = {}
    for s in train_samples:
        for key, row, ok in zip(s.channel_keys(), s.window, s.valid):
            if ok:
                sums.setdefault(key, []).append(row)
    stats = {}
    for key, rows in sums.items():
        data = np.concatenate(rows)
        stats[key] = (float(data.mean()), float(max(data.std(), floor)))
    subjects = frozenset(s.subject for s in train_samples)
    return StandardizerState(stats, subjects, floor)


def standardize_apply(state: StandardizerState, samples: Sequence[Sample]) -> list[Sample]:
    """``(x - mean) / std`` per channel identity; unseen identities pass through."""
    out = []
    warned = set()
    for s in samples:
        w = s.window.astype(np.float64, copy=True)
        for i, key in enumerate(s.channel_keys()):
            if key in state.stats:
                mu, sd = state.stats[key]
                w[i] = (w[i] - mu) / sd
            elif key not in warned:
                warned.add(key)
                log.warning("channel %s unseen at fit time; left unscaled", key)
        out.append(s.copy(window=w))
    return out


def loso_splits(samples: Sequence[Sample]) -> list[tuple[object, list[Sample], list[Sample]]]:
    """One ``(subject, train, test)`` fold per subject, test being that subject's samples."""
    subjects = sorted({s.subject for s in samples}, key=str)
    if len(subjects) < 2:
        raise InputError("leave-one-subject-out needs at least two subjects")
    folds = []
    for subj in subjects:
        test = [s for s in samples if s.subject == subj]
        train = [s for s in samples if s.subject != subj]
        folds.append((subj, train, test))
    return folds

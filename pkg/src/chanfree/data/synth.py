"""Synthetic multichannel activity data for desk-scale experiments.

Each channel slot maps the class id to one of a small set of base
frequencies. With ``shifts=(0, 0, 1, 1, 2, 2)`` and four classes, slots 0/1
carry ``freqs[c]``, slots 2/3 carry ``freqs[c+1]`` and so on, so every class
signature appears on two channels and no single channel is needed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from chanfree.data.sample import Sample
from chanfree.errors import ConfigurationError
from chanfree.metadata import MetaVocab


@dataclass(frozen=True)
class SlotSpec:
    """One channel position: its metadata names and class-to-frequency map.

    ``class_map[c]`` indexes into ``SynthSpec.freqs``; ``None`` makes the slot
    pure noise.
    """

    location: str
    side: str = "-"
    sensor: str = "acc"
    axis: str = "x"
    class_map: tuple[int, ...] | None = None
    amplitude: float = 1.0
    freq_scale: float = 1.0
    carrier_hz: float = 0.0  # optional class-independent tone marking the slot
    carrier_amp: float = 0.0
    spike_amp: float = 0.0  # signed transient height; visible in max/min summaries
    spike_prob: float = 0.0  # chance a window carries the transients
    shape: str = "sine"  # sine | square | pulse | dip: waveform shape, survives standardization


@dataclass
class SynthSpec:
    n_subjects: int = 6
    n_classes: int = 4
    windows_per_subject: int = 40
    length: int = 256
    rate_hz: float = 100.0
    freqs: tuple[float, ...] = (1.5, 3.0, 5.0, 7.5)
    slots: tuple[SlotSpec, ...] = ()
    channels: int | tuple[int, int] | None = None  # None: every slot; (lo, hi): random subset size
    noise: float = 0.3
    freq_jitter: float = 0.05
    amp_jitter: float = 0.2
    harmonic: float = 0.0
    n_spikes: int = 4

    def __post_init__(self):
        if not self.slots:
            self.slots = default_slots(self.n_classes)
        self.slots = tuple(s if isinstance(s, SlotSpec) else SlotSpec(**s) for s in self.slots)
        if self.n_subjects < 1 or self.n_classes < 2:
            raise ConfigurationError("need at least one subject and two classes")
        for s in self.slots:
            if s.class_map is not None and (len(s.class_map) != self.n_classes
                                            or max(s.class_map) >= len(self.freqs)):
                raise ConfigurationError(f"slot {s.location}/{s.axis} has an invalid class map")
            if s.shape not in SHAPES:
                raise ConfigurationError(f"unknown waveform shape {s.shape!r}")
        lo, hi = self.channel_range()
        if not 1 <= lo <= hi <= len(self.slots):
            raise ConfigurationError(f"channel range {lo}..{hi} incompatible with {len(self.slots)} slots")

    def channel_range(self) -> tuple[int, int]:
        if self.channels is None:
            return len(self.slots), len(self.slots)
        if isinstance(self.channels, int):
            return self.channels, self.channels
        return int(self.channels[0]), int(self.channels[1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slots"] = [asdict(s) for s in self.slots]
        return d


def shifted_slots(shifts, n_classes: int, axes=("x", "y")) -> tuple[SlotSpec, ...]:
    """Slots whose class map is ``c -> (c + shift) % n_classes``; consecutive slots share a location."""
    out = []
    for j, s in enumerate(shifts):
        cmap = None if s is None else tuple((c + s) % n_classes for c in range(n_classes))
        out.append(SlotSpec(location=f"loc{j // len(axes)}", axis=axes[j % len(axes)], class_map=cmap))
    return tuple(out)


def default_slots(n_classes: int) -> tuple[SlotSpec, ...]:
    return shifted_slots((0, 0, 1, 1, 2, 2), n_classes)


@dataclass
class SynthDataset:
    samples: list[Sample]
    vocab: MetaVocab
    spec: SynthSpec
    slot_ids: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    def by_subject(self, subject) -> list[Sample]:
        return [s for s in self.samples if s.subject == subject]


SHAPES = {
    "sine": lambda s: s,
    "square": lambda s: np.tanh(3.0 * s) / np.tanh(3.0),
    "pulse": lambda s: 2.0 * np.exp(3.0 * (s - 1.0)) - 0.5,  # brief positive peaks, skewed
    "dip": lambda s: 0.5 - 2.0 * np.exp(3.0 * (s - 1.0)),
}


def _waveform(spec: SynthSpec, freq: float, amp: float, phase: float, rng: np.random.Generator,
              shape: str = "sine") -> np.ndarray:
    t = np.arange(spec.length) / spec.rate_hz
    w = amp * SHAPES[shape](np.sin(2 * np.pi * freq * t + phase))
    if spec.harmonic:
        w += spec.harmonic * amp * np.sin(4 * np.pi * freq * t + 2 * phase)
    return w + spec.noise * rng.standard_normal(spec.length)


def synth_generate(spec: SynthSpec, seed: int = 0, vocab: MetaVocab | None = None) -> SynthDataset:
    """Deterministic sinusoid-plus-noise windows, balanced over classes per subject.

    Subjects differ by a fixed per-slot gain and frequency scale; every
    window draws its own phase and noise.
    """
    rng = np.random.default_rng(seed)
    vocab = vocab if vocab is not None else MetaVocab()
    slot_ids = np.array([vocab.register(s.location, s.side, s.sensor, s.axis).ids for s in spec.slots],
                        dtype=np.int64)
    lo, hi = spec.channel_range()
    n_slots = len(spec.slots)
    samples = []
    for subj in range(spec.n_subjects):
        gains = 1.0 + spec.amp_jitter * rng.uniform(-1, 1, size=n_slots)
        fscale = 1.0 + spec.freq_jitter * rng.uniform(-1, 1)
        labels = np.arange(spec.windows_per_subject) % spec.n_classes
        rng.shuffle(labels)
        for k, label in enumerate(labels):
            c = int(rng.integers(lo, hi + 1)) if lo != hi else lo
            chosen = np.arange(n_slots) if c == n_slots else np.sort(rng.choice(n_slots, size=c, replace=False))
            rows = []
            for j in chosen:
                slot = spec.slots[j]
                phase = rng.uniform(0, 2 * np.pi)
                if slot.class_map is None:
                    rows.append(spec.noise * rng.standard_normal(spec.length))
                    continue
                freq = spec.freqs[slot.class_map[label]] * slot.freq_scale * fscale
                w = _waveform(spec, freq, slot.amplitude * gains[j], phase, rng, slot.shape)
                if slot.carrier_amp:
                    t = np.arange(spec.length) / spec.rate_hz
                    w += slot.carrier_amp * np.sin(2 * np.pi * slot.carrier_hz * t + rng.uniform(0, 2 * np.pi))
                if slot.spike_amp and rng.random() < slot.spike_prob:
                    w[rng.choice(spec.length - 2, size=spec.n_spikes, replace=False)[:, None] + np.arange(3)] \
                        += slot.spike_amp * np.array([0.5, 1.0, 0.5])
                rows.append(w)
            samples.append(Sample(np.stack(rows), slot_ids[chosen], int(label), subj,
                                  tags={"slots": tuple(int(j) for j in chosen), "index": k}))
    return SynthDataset(samples, vocab, spec, slot_ids)


def fft_peak(window: np.ndarray, rate_hz: float) -> np.ndarray:
    """Dominant non-DC frequency (Hz) of each row."""
    spec = np.abs(np.fft.rfft(window - window.mean(-1, keepdims=True), axis=-1))
    freqs = np.fft.rfftfreq(window.shape[-1], 1.0 / rate_hz)
    return freqs[np.argmax(spec[..., 1:], axis=-1) + 1]

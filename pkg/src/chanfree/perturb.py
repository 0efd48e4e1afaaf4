"""Test-time channel perturbations with a continuous intensity.

Meta-consistent kinds move or remove waveform and metadata together.
Meta-inconsistent kinds corrupt only the metadata stream, so the pairing
between a waveform and its descriptor breaks while the signals a model sees
stay exactly where they were.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from chanfree.data.sample import Sample
from chanfree.errors import ConfigurationError

KINDS = ("ChannelMissing", "PartialShuffle", "ShuffleMissing", "MetaPad", "ShuffleFixedMeta",
         "ShuffleFixedMetaMissing")
META_CONSISTENT = frozenset(KINDS[:3])
META_INCONSISTENT = frozenset(KINDS[3:])


@dataclass(frozen=True)
class PerturbationSpec:
    """A perturbation kind, its intensity and seed.

    For the two composite kinds ``second`` optionally gives the intensity of
    the second stage (missing / meta padding); by default both stages use
    ``intensity``.
    """

    kind: str
    intensity: float = 0.0
    seed: int = 0
    second: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown perturbation {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "intensity", float(min(max(self.intensity, 0.0), 1.0)))
        if self.second is not None:
            object.__setattr__(self, "second", float(min(max(self.second, 0.0), 1.0)))

    @property
    def meta_consistent(self) -> bool:
        return self.kind in META_CONSISTENT

    @property
    def second_intensity(self) -> float:
        return self.intensity if self.second is None else self.second

    @property
    def label(self) -> str:
        if self.second is not None and self.second != self.intensity:
            return f"{self.kind}({self.intensity:g}+{self.second:g})"
        return f"{self.kind}({self.intensity:g})"

    def with_intensity(self, t: float) -> "PerturbationSpec":
        return PerturbationSpec(self.kind, t, self.seed, None)

    def to_config(self) -> dict[str, str]:
        out = {"perturb.kind": self.kind, "perturb.intensity": repr(self.intensity), "perturb.seed": str(self.seed)}
        if self.second is not None:
            out["perturb.second"] = repr(self.second)
        return out

    @classmethod
    def from_config(cls, cfg: dict) -> "PerturbationSpec":
        second = cfg.get("perturb.second")
        return cls(str(cfg["perturb.kind"]), float(cfg.get("perturb.intensity", 0.0)),
                   int(cfg.get("perturb.seed", 0)), None if second in (None, "") else float(second))


def count_for(intensity: float, n_channels: int) -> int:
    """``floor(t * C)``, with a tiny tolerance so 0.3 * 10 counts as 3."""
    return min(n_channels, int(math.floor(intensity * n_channels + 1e-9)))


def _ranked(rng: np.random.Generator, n_channels: int, n: int) -> np.ndarray:
    """The first ``n`` channels of a random ranking.

    The ranking is drawn the same way for every ``n``, so with a fixed seed the
    affected channels at a lower intensity are a subset of those at a higher one.
    """
    return rng.permutation(n_channels)[:n]


def _subset_permutation(rng: np.random.Generator, n_channels: int, n: int) -> np.ndarray:
    """Index map that permutes a random ``n``-subset uniformly and fixes the rest."""
    subset = np.sort(_ranked(rng, n_channels, n))
    order = np.arange(n_channels)
    if n >= 2:
        order[subset] = subset[rng.permutation(n)]
    return order


def channel_missing(sample: Sample, t: float, rng: np.random.Generator) -> Sample:
    c = sample.n_channels
    n = min(count_for(t, c), c - 1)  # at least one channel always survives
    drop = _ranked(rng, c, n)
    if n == 0:
        return sample.copy()
    out = sample.copy()
    out.window[drop] = 0.0
    out.meta[drop] = 0
    out.valid[drop] = False
    return out


def partial_shuffle(sample: Sample, t: float, rng: np.random.Generator) -> Sample:
    order = _subset_permutation(rng, sample.n_channels, count_for(t, sample.n_channels))
    out = sample.copy()
    out.window, out.meta, out.valid = out.window[order], out.meta[order], out.valid[order]
    return out


def meta_pad(sample: Sample, t: float, rng: np.random.Generator) -> Sample:
    n = count_for(t, sample.n_channels)
    out = sample.copy()
    out.meta[_ranked(rng, sample.n_channels, n)] = 0
    return out


def shuffle_fixed_meta(sample: Sample, t: float, rng: np.random.Generator) -> Sample:
    """Re-pair waveforms and descriptors within a random subset.

    The descriptors are permuted among the subset positions; relative to the
    waveforms this is the same mismatch as moving the waveforms under fixed
    descriptors, but it leaves the signal tensor itself untouched.
    """
    order = _subset_permutation(rng, sample.n_channels, count_for(t, sample.n_channels))
    out = sample.copy()
    out.meta = out.meta[order]
    return out


def perturb(sample: Sample, spec: PerturbationSpec, rng: np.random.Generator | None = None) -> Sample:
    """Apply ``spec`` to one sample; intensity 0 returns an identical copy."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    t, t2 = spec.intensity, spec.second_intensity
    if spec.kind == "ChannelMissing":
        return channel_missing(sample, t, rng)
    if spec.kind == "PartialShuffle":
        return partial_shuffle(sample, t, rng)
    if spec.kind == "ShuffleMissing":
        return channel_missing(partial_shuffle(sample, t, rng), t2, rng)
    if spec.kind == "MetaPad":
        return meta_pad(sample, t, rng)
    if spec.kind == "ShuffleFixedMeta":
        return shuffle_fixed_meta(sample, t, rng)
    return meta_pad(shuffle_fixed_meta(sample, t, rng), t2, rng)


def perturb_all(samples: Sequence[Sample], spec: PerturbationSpec) -> list[Sample]:
    """Perturb a dataset; sample ``i`` draws from a stream seeded by ``(spec.seed, i)``."""
    return [perturb(s, spec, np.random.default_rng([spec.seed, i])) for i, s in enumerate(samples)]


def standard_conditions(seed: int = 0) -> list[PerturbationSpec]:
    """The three headline conditions: Shuffle, Missing and Shuffle+Missing."""
    return [
        PerturbationSpec("PartialShuffle", 1.0, seed),
        PerturbationSpec("ChannelMissing", 0.5, seed),
        PerturbationSpec("ShuffleMissing", 1.0, seed, second=0.5),
    ]


CONDITION_NAMES = {"PartialShuffle(1)": "Shfl", "ChannelMissing(0.5)": "Miss", "ShuffleMissing(1+0.5)": "Shfl+Miss"}


def condition_name(spec: PerturbationSpec) -> str:
    return CONDITION_NAMES.get(spec.label, spec.label)


def parse_spec_list(text: str, seed: int = 0) -> list[PerturbationSpec]:
    """Parse ``"standard"`` or ``"Kind:t[,Kind:t+t2 ...]"``."""
    text = text.strip()
    if not text or text == "none":
        return []
    if text == "standard":
        return standard_conditions(seed)
    out = []
    for item in text.split(","):
        kind, _, t = item.strip().partition(":")
        first, _, second = t.partition("+")
        out.append(PerturbationSpec(kind.strip(), float(first or 0.0), seed, float(second) if second else None))
    return out


def iter_kinds(which: str) -> Iterable[str]:
    if which == "consistent":
        return [k for k in KINDS if k in META_CONSISTENT]
    if which == "inconsistent":
        return [k for k in KINDS if k in META_INCONSISTENT]
    return list(KINDS)

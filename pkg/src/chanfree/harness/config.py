"""Experiment configuration: nested dataclasses behind flat ``key = value`` text."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from chanfree.autodiff.optim import TrainSchedule
from chanfree.data.synth import SlotSpec, SynthSpec, shifted_slots
from chanfree.errors import ConfigurationError
from chanfree.metadata import FIELDS
from chanfree.models.backbone import BackboneConfig
from chanfree.models.baselines import DEFAULT_LAMBDA, MODEL_KINDS
from chanfree.perturb import PerturbationSpec, parse_spec_list


@dataclass
class SynthConfig:
    n_subjects: int = 6
    n_classes: int = 4
    windows_per_subject: int = 40
    noise: float = 0.3
    channels: str = ""  # "" every slot, "5" fixed, "3-8" a range
    layout: str = "redundant"  # redundant | location_perm | majority | perm_shapes | shifts:0,0,1,1,2,2
    freq_jitter: float = 0.05
    amp_jitter: float = 0.2
    seed: int = 0

    def to_spec(self) -> SynthSpec:
        return SynthSpec(n_subjects=self.n_subjects, n_classes=self.n_classes,
                         windows_per_subject=self.windows_per_subject, noise=self.noise,
                         slots=layout_slots(self.layout, self.n_classes), channels=_channel_range(self.channels),
                         freq_jitter=self.freq_jitter, amp_jitter=self.amp_jitter)


def _channel_range(text: str):
    text = str(text).strip()
    if not text:
        return None
    if "-" in text:
        lo, hi = text.split("-")
        return int(lo), int(hi)
    return int(text)


def location_perm_slots(n_classes: int, n_locations: int = 2, axes=("x", "y"),
                        swapped: tuple[int, ...] | None = None) -> tuple[SlotSpec, ...]:
    """Same frequencies everywhere, but their class meaning depends on the body location.

    Unswapped locations map class ``c`` to frequency ``c``; swapped ones
    (by default every odd location) exchange neighbouring class pairs, so a
    channel's frequency names a class only once its location is known.
    """
    swapped = set(range(1, n_locations, 2) if swapped is None else swapped)
    swap = tuple(c ^ 1 if (c ^ 1) < n_classes else c for c in range(n_classes))
    maps = [swap if loc in swapped else tuple(range(n_classes)) for loc in range(n_locations)]
    return tuple(SlotSpec(location=f"loc{loc}", axis=ax, class_map=maps[loc])
                 for loc in range(n_locations) for ax in axes)


# class -> frequency id at each of three locations; every class uses the same multiset
LOCATION_PERMS = ((0, 1, 2), (1, 2, 0), (2, 0, 1), (0, 2, 1), (2, 1, 0), (1, 0, 2))
LOCATION_SHAPES = ("sine", "dip", "pulse")


def perm_shape_slots(n_classes: int, axes=("x", "y")) -> tuple[SlotSpec, ...]:
    """Three locations, two axes each; a class is an assignment of frequencies to locations.

    All classes share the same frequency multiset, so a channel stack is only
    decodable if each channel's location is known. Locations also differ in
    waveform shape, which per-channel encoders and summary statistics can see.
    """
    if n_classes > len(LOCATION_PERMS):
        raise ConfigurationError(f"perm_shapes supports at most {len(LOCATION_PERMS)} classes")
    return tuple(SlotSpec(location=f"loc{loc}", axis=ax, shape=LOCATION_SHAPES[loc],
                          class_map=tuple(LOCATION_PERMS[c][loc] for c in range(n_classes)))
                 for loc in range(3) for ax in axes)


def layout_slots(layout: str, n_classes: int) -> tuple[SlotSpec, ...]:
    if layout == "redundant":
        return shifted_slots((0, 0, 1, 1, 2, 2), n_classes)
    if layout == "location_perm":
        return location_perm_slots(n_classes)
    if layout == "majority":
        # two plain locations outvote one swapped location, unless channels go missing
        return location_perm_slots(n_classes, n_locations=3, swapped=(2,))
    if layout == "perm_shapes":
        return perm_shape_slots(n_classes)
    if layout.startswith("shifts:"):
        vals = [None if v.strip() in ("-", "none") else int(v) for v in layout[7:].split(",")]
        return shifted_slots(vals, n_classes)
    raise ConfigurationError(f"unknown synthetic layout {layout!r}")


@dataclass
class DataConfig:
    source: str = "synth"  # synth | csv | cache
    csv: str = ""  # comma-separated paths
    descriptor: str = ""
    window: int = 256
    stride: int = 256
    cache: str = ""


@dataclass
class MetaConfig:
    enable: str = ",".join(FIELDS)
    d_meta: int = 64
    lam_gamma: float = 0.1

    def enabled_mask(self) -> tuple[bool, ...]:
        names = {n.strip() for n in self.enable.split(",") if n.strip()}
        unknown = names - set(FIELDS)
        if unknown:
            raise ConfigurationError(f"unknown metadata fields {sorted(unknown)}")
        return tuple(f in names for f in FIELDS)


@dataclass
class EvalConfig:
    conditions: str = "standard"
    seed: int = 0
    batch_size: int = 256


@dataclass
class ExperimentConfig:
    model: str = "ours"
    dtype: str = "float32"
    seeds: str = "0"
    n_slots: int = 16
    folds: str = ""  # held-out subjects to run; "" runs every fold
    lam: str = ""  # fused-loss weight; "" uses the model kind's default
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    perturb: dict = field(default_factory=dict)  # optional extra condition: kind/intensity/seed/second

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model {self.model!r}; expected one of {MODEL_KINDS}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64")
        lam = self.loss_lambda
        if not 0.0 <= lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {lam}")
        self.meta.enabled_mask()
        self.conditions()

    @property
    def loss_lambda(self) -> float:
        return DEFAULT_LAMBDA[self.model] if str(self.lam).strip() == "" else float(self.lam)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def trial_seeds(self) -> list[int]:
        return [int(s) for s in str(self.seeds).split(",") if s.strip()]

    def fold_subjects(self) -> list[str] | None:
        vals = [s.strip() for s in str(self.folds).split(",") if s.strip()]
        return vals or None

    def conditions(self) -> list[PerturbationSpec]:
        specs = parse_spec_list(self.eval.conditions, self.eval.seed)
        if self.perturb.get("kind"):
            specs.append(PerturbationSpec.from_config({f"perturb.{k}": v for k, v in self.perturb.items()}))
        return specs

    def to_flat(self) -> dict[str, str]:
        return to_flat(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_flat(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **flat) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``cfg.replace(**{"train.epochs": 5})``."""
        values = self.to_flat()
        if "train.epochs" in flat and "train.cosine_t_max" not in flat \
                and self.train.cosine_t_max == self.train.epochs:
            del values["train.cosine_t_max"]
        values.update({k: str(v) for k, v in flat.items()})
        return from_flat(values)


def _coerce(text: str, current):
    if isinstance(current, bool):
        return str(text).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(float(text))
    if isinstance(current, float):
        return float(text)
    if current is None:
        text = str(text).strip()
        if text in ("", "none", "None"):
            return None
        return int(text) if text.lstrip("-").isdigit() else float(text)
    return str(text)


def to_flat(obj, prefix: str = "") -> dict[str, str]:
    out: dict[str, str] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(to_flat(value, key + "."))
        elif isinstance(value, dict):
            out.update({f"{key}.{k}": str(v) for k, v in value.items()})
        else:
            out[key] = "" if value is None else str(value)
    return out


def from_flat(values: dict[str, str]) -> ExperimentConfig:
    cfg = ExperimentConfig.__new__(ExperimentConfig)
    defaults = ExperimentConfig()
    sections: dict[str, dict] = {}
    top: dict = {}
    for key, raw in values.items():
        head, _, rest = key.partition(".")
        if not hasattr(defaults, head):
            raise ConfigurationError(f"unknown config key {key!r}")
        if rest:
            sections.setdefault(head, {})[rest] = raw
        else:
            top[head] = raw
    for f in dataclasses.fields(ExperimentConfig):
        default = getattr(defaults, f.name)
        if dataclasses.is_dataclass(default):
            given = sections.get(f.name, {})
            kwargs = {}
            names = {g.name for g in dataclasses.fields(default)}
            for k, raw in given.items():
                if k not in names:
                    raise ConfigurationError(f"unknown config key {f.name}.{k}")
                try:
                    kwargs[k] = _coerce(raw, getattr(default, k))
                except ValueError:
                    raise ConfigurationError(f"bad value for {f.name}.{k}: {raw!r}") from None
            try:
                setattr(cfg, f.name, dataclasses.replace(default, **kwargs))
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"bad {f.name} section: {exc}") from None
        elif isinstance(default, dict):
            setattr(cfg, f.name, dict(sections.get(f.name, {})))
        elif f.name in top:
            try:
                setattr(cfg, f.name, _coerce(top[f.name], default))
            except ValueError:
                raise ConfigurationError(f"bad value for {f.name}: {top[f.name]!r}") from None
        else:
            setattr(cfg, f.name, default)
    if "train" in sections and "cosine_t_max" not in sections["train"] and "epochs" in sections["train"]:
        cfg.train = dataclasses.replace(cfg.train, cosine_t_max=cfg.train.epochs)
    cfg.validate()
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update(overrides or {})
    return from_flat(values)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(cfg.to_flat().items()))

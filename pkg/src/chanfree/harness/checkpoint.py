"""Checkpoints: named arrays in an ``.npz`` plus a JSON header describing the model."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from chanfree.data.preprocess import StandardizerState
from chanfree.errors import ConfigurationError
from chanfree.metadata import MetaVocab
from chanfree.models.backbone import BackboneConfig
from chanfree.models.baselines import make_model

FORMAT = "chanfree-checkpoint/1"


def model_args(model) -> dict:
    """Constructor arguments that rebuild ``model`` via :func:`make_model`."""
    args = {"kind": model.kind, "n_classes": model.n_classes, "backbone": model.backbone_cfg.to_dict(),
            "dtype": np.dtype(model.dtype).name}
    if model.kind == "baseline":
        args["n_channels"] = model.n_channels
    if model.kind in ("ef", "mf"):
        args["n_slots"] = model.slots.n_slots
    if getattr(model, "use_meta", False):
        args["vocab_sizes"] = list(model.meta_encoder.vocab_sizes())
        args["d_meta"] = model.d_meta
        args["lam_gamma"] = model.lam_gamma
    return args


def build_from_args(args: dict, **overrides):
    args = {**args, **overrides}
    return make_model(args["kind"], args["n_classes"], n_channels=args.get("n_channels"),
                      backbone=BackboneConfig(**args["backbone"]),
                      vocab_sizes=tuple(args.get("vocab_sizes", (1, 1, 1, 1))), d_meta=args.get("d_meta", 64),
                      lam_gamma=args.get("lam_gamma", 0.1), n_slots=args.get("n_slots", 16),
                      dtype=np.dtype(args.get("dtype", "float64")).type)


def standardizer_to_dict(state: StandardizerState | None):
    if state is None:
        return None
    return {"floor": state.floor, "fitted_on": sorted(str(s) for s in state.fitted_on),
            "stats": [[list(k), mu, sd] for k, (mu, sd) in state.stats.items()]}


def standardizer_from_dict(d) -> StandardizerState | None:
    if d is None:
        return None
    return StandardizerState({tuple(k): (mu, sd) for k, mu, sd in d["stats"]}, frozenset(d["fitted_on"]),
                             d["floor"])


def save_checkpoint(path, model, vocab: MetaVocab | None = None, lam: float | None = None,
                    standardizer: StandardizerState | None = None, extra: dict | None = None):
    header = {"format": FORMAT, "model": model_args(model), "vocab": vocab.to_dict() if vocab else None,
              "loss": {"lam": lam}, "standardizer": standardizer_to_dict(standardizer), "extra": extra or {}}
    arrays = {f"param/{k}": v for k, v in model.state_dict().items()}
    np.savez(path, __header__=np.array(json.dumps(header)), **arrays)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != FORMAT:
            raise ConfigurationError(f"{path} is not a {FORMAT} file")
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    return header, state


def load_checkpoint(path, replace_heads: bool = False, n_classes: int | None = None, **overrides):
    """Rebuild the model stored at ``path``.

    With ``replace_heads`` the classification heads are left freshly initialized
    (optionally for a different ``n_classes``); every other array must match
    the saved one by name and shape.
    """
    header, state = read_checkpoint(path)
    args = dict(header["model"])
    if n_classes is not None:
        args["n_classes"] = n_classes
    model = build_from_args(args, **overrides)
    if replace_heads:
        heads = model.head_prefixes()
        state = {k: v for k, v in state.items() if not k.startswith(heads)}
        own = {k: v for k, v in model.state_dict().items() if k.startswith(heads)}
        state.update(own)
    model.load_state_dict(state, strict=True)
    vocab = MetaVocab.from_dict(header["vocab"]) if header.get("vocab") else None
    return model, vocab, header


def diff_state(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> list[str]:
    """Names whose arrays differ (or exist on one side only)."""
    names = sorted(set(a) | set(b))
    return [n for n in names if n not in a or n not in b or a[n].shape != b[n].shape
            or not np.array_equal(a[n], b[n])]

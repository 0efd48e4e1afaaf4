"""Comparison models: channel-fixed ResNet and slot-attention early/middle fusion.

The plain late-fusion baseline is :class:`ChannelFreeModel` without metadata,
trained on the fused loss only (see :func:`make_model`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chanfree.autodiff import functional as F
from chanfree.autodiff.nn import Linear, Module
from chanfree.autodiff.tensor import Param, Tensor
from chanfree.errors import ConfigurationError, InputError
from chanfree.models.backbone import BackboneConfig, ResNet1d
from chanfree.models.channel_free import ChannelFreeModel, check_mask

N_SUMMARY = 5


class FixedChannelBaseline(Module):
    """Conventional ResNet whose stem convolves a fixed, ordered channel stack."""

    kind = "baseline"

    def __init__(self, n_channels: int, n_classes: int, backbone: BackboneConfig | None = None, seed: int = 0,
                 dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.backbone_cfg = backbone or BackboneConfig()
        self.n_channels = n_channels
        self.n_classes = n_classes
        self.encoder = ResNet1d(self.backbone_cfg, rng, in_channels=n_channels, dtype=dtype)
        self.head = Linear(self.backbone_cfg.feature_dim, n_classes, rng, dtype=dtype)
        self.dtype = dtype

    def head_prefixes(self) -> tuple[str, ...]:
        return ("head.",)

    def predict(self, x, meta=None, valid_mask=None) -> Tensor:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[1] != self.n_channels:
            raise InputError(f"channel-fixed model expects exactly {self.n_channels} channels, got {x.shape}")
        return self.head(self.encoder(Tensor(x)))

    forward = predict

    def macs(self, n_channels: int, length: int) -> int:
        return self.encoder.macs(length) + self.backbone_cfg.feature_dim * self.n_classes


def channel_summaries(x: np.ndarray) -> np.ndarray:
    """Per-channel mean, std, max, min and energy of ``(b, C, l)`` waveforms."""
    x = np.asarray(x)
    return np.stack([x.mean(-1), x.std(-1), x.max(-1), x.min(-1), (x * x).mean(-1)], axis=-1)


@dataclass
class SlotAssignment:
    A: Tensor  # (b, K, C)


class SlotAssigner(Module):
    """Single-pass dot-product attention from learned slot queries to channel summaries."""

    def __init__(self, n_slots: int, rng: np.random.Generator, d_q: int = 16, dtype=np.float64):
        self.queries = Param(rng.normal(0.0, 1.0, size=(n_slots, d_q)).astype(dtype))
        self.key_proj = Linear(N_SUMMARY, d_q, rng, dtype=dtype)
        self.n_slots, self.d_q = n_slots, d_q

    def forward(self, summaries, valid_mask=None) -> SlotAssignment:
        return slot_assign(summaries, self.queries, self.key_proj, valid_mask)

    def macs(self, n_channels: int) -> int:
        return n_channels * self.key_proj.macs() + self.n_slots * n_channels * self.d_q


def slot_assign(summaries, slot_queries: Tensor, proj: Linear, valid_mask=None) -> SlotAssignment:
    """Soft assignment of channels to slots.

    Scaled dot products are softmaxed over the slot axis for each channel, then
    each slot's weights are renormalized to sum to one over the valid channels.
    """
    s = np.asarray(summaries.data if isinstance(summaries, Tensor) else summaries)
    squeeze = s.ndim == 2
    if squeeze:
        s = s[None]
    b, c, _ = s.shape
    mask = np.ones((b, c), dtype=bool) if valid_mask is None else check_mask(np.asarray(valid_mask).reshape(b, c))
    d_q = slot_queries.shape[1]
    keys = proj(Tensor(s.astype(slot_queries.dtype)))  # (b, C, d_q)
    logits = F.transpose(F.linear(keys, slot_queries), (0, 2, 1)) * (1.0 / np.sqrt(d_q))  # (b, K, C)
    per_channel = F.softmax(logits, axis=1) * mask[:, None, :].astype(slot_queries.dtype)
    A = per_channel / F.sum(per_channel, axis=2, keepdims=True)
    return SlotAssignment(F.reshape(A, A.shape[1:]) if squeeze else A)


def slot_mix(A: Tensor, h) -> Tensor:
    """``y[b, k] = sum_c A[b, k, c] * h[b, c]`` for per-channel arrays of any trailing shape."""
    h = h if isinstance(h, Tensor) else Tensor(h)
    b, c = h.shape[:2]
    trailing = h.shape[2:]
    flat = F.reshape(h, (b, c, -1))
    return F.reshape(F.bmm(A, flat), (b, A.shape[1]) + trailing)


class SlotFusionModel(Module):
    """Slot-attention fusion into K virtual channels, then LF-style encoding.

    ``stage='early'`` mixes the raw waveforms; ``stage='middle'`` encodes each
    channel through the first residual stage and mixes those feature maps.
    """

    def __init__(self, n_classes: int, stage: str = "early", backbone: BackboneConfig | None = None,
                 n_slots: int = 16, d_q: int = 16, seed: int = 0, dtype=np.float64):
        if stage not in ("early", "middle"):
            raise ConfigurationError(f"unknown fusion stage {stage!r}")
        rng = np.random.default_rng(seed)
        self.backbone_cfg = backbone or BackboneConfig()
        self.stage = stage
        self.kind = "ef" if stage == "early" else "mf"
        self.n_classes = n_classes
        self.slots = SlotAssigner(n_slots, rng, d_q, dtype=dtype)
        self.encoder = ResNet1d(self.backbone_cfg, rng, in_channels=1, dtype=dtype)
        self.head = Linear(self.backbone_cfg.feature_dim, n_classes, rng, dtype=dtype)
        self.dtype = dtype

    def head_prefixes(self) -> tuple[str, ...]:
        return ("head.",)

    def mix(self, x, valid_mask=None):
        """Virtual channels ``(b, K, ...)`` and the assignment used to build them."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype)
        b, c, length = x.shape
        mask = np.ones((b, c), dtype=bool) if valid_mask is None else check_mask(valid_mask)
        assign = self.slots(channel_summaries(x), mask)
        if self.stage == "early":
            return slot_mix(assign.A, Tensor(x * mask[:, :, None])), assign
        rows = np.flatnonzero(mask.reshape(-1))
        h = self.encoder.forward_blocks(self.encoder.forward_stem(Tensor(x.reshape(b * c, 1, length)[rows])),
                                        start=0, stop=1)
        h = F.scatter_rows(h, rows, b * c)
        h = F.reshape(h, (b, c) + h.shape[1:])
        return slot_mix(assign.A, h), assign

    def predict(self, x, meta=None, valid_mask=None) -> Tensor:
        y, assign = self.mix(x, valid_mask)
        b, k = y.shape[:2]
        if self.stage == "early":
            feats = self.encoder(F.reshape(y, (b * k, 1, y.shape[2])))
        else:
            h = F.reshape(y, (b * k,) + y.shape[2:])
            feats = self.encoder.pool(self.encoder.forward_blocks(h, start=1))
        pooled = F.mean(F.reshape(feats, (b, k, -1)), axis=1)
        return self.head(pooled)

    forward = predict

    def macs(self, n_channels: int, length: int) -> int:
        k = self.slots.n_slots
        enc = self.encoder
        total = self.slots.macs(n_channels)
        if self.stage == "early":
            total += k * n_channels * length + k * enc.macs(length)
        else:
            lens = enc.stage_lengths(length)
            total += n_channels * (enc.stem.macs(length) + enc.macs(lens[0], 0, 1, include_stem=False))
            total += k * n_channels * self.backbone_cfg.widths[0] * lens[1]
            total += k * enc.macs(lens[1], 1, None, include_stem=False)
        return total + self.backbone_cfg.feature_dim * self.n_classes


MODEL_KINDS = ("baseline", "ef", "mf", "lf", "lf_comb", "ours")
# fused-loss weight each model kind trains with
DEFAULT_LAMBDA = {"baseline": 1.0, "ef": 1.0, "mf": 1.0, "lf": 1.0, "lf_comb": 0.5, "ours": 0.5}


def make_model(kind: str, n_classes: int, n_channels: int | None = None, backbone: BackboneConfig | None = None,
               vocab_sizes=(1, 1, 1, 1), d_meta: int = 64, lam_gamma: float = 0.1, n_slots: int = 16,
               seed: int = 0, dtype=np.float64) -> Module:
    """Construct one of ``baseline | ef | mf | lf | lf_comb | ours``."""
    if kind == "baseline":
        if n_channels is None:
            raise ConfigurationError("the channel-fixed baseline needs n_channels")
        model = FixedChannelBaseline(n_channels, n_classes, backbone, seed, dtype)
    elif kind in ("ef", "mf"):
        model = SlotFusionModel(n_classes, "early" if kind == "ef" else "middle", backbone, n_slots, seed=seed,
                                dtype=dtype)
    elif kind in ("lf", "lf_comb", "ours"):
        model = ChannelFreeModel(n_classes, backbone, use_meta=kind == "ours", vocab_sizes=vocab_sizes,
                                 d_meta=d_meta, lam_gamma=lam_gamma, seed=seed, dtype=dtype)
        model.kind = kind
    else:
        raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    return model


def baseline_fixed_forward(x, model: FixedChannelBaseline) -> Tensor:
    return model.predict(x)


def ef_forward(x, model: SlotFusionModel, valid_mask=None) -> Tensor:
    if model.stage != "early":
        raise ConfigurationError("ef_forward needs an early-fusion model")
    return model.predict(x, valid_mask=valid_mask)


def mf_forward(x, model: SlotFusionModel, valid_mask=None) -> Tensor:
    if model.stage != "middle":
        raise ConfigurationError("mf_forward needs a middle-fusion model")
    return model.predict(x, valid_mask=valid_mask)


def lf_plain_forward(x, valid_mask, model: ChannelFreeModel) -> Tensor:
    if model.use_meta:
        raise ConfigurationError("lf_plain_forward needs a model without metadata conditioning")
    return model.predict(x, valid_mask=valid_mask)

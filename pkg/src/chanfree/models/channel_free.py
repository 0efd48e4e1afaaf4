"""Late-fusion channel-free classifier with optional metadata conditioning.

Every channel of a sample is encoded independently by one shared ResNet. The
per-channel features are averaged over the valid channels for the fused
prediction, and a second linear head classifies each channel on its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chanfree.autodiff import functional as F
from chanfree.autodiff.nn import Linear, Module
from chanfree.autodiff.tensor import Tensor
from chanfree.errors import ConfigurationError, InputError
from chanfree.metadata import CBN, MetaEncoder
from chanfree.models.backbone import BackboneConfig, ResNet1d


@dataclass
class LossConfig:
    lam: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass
class ChannelFeatures:
    z: Tensor  # (b, C, D); rows of invalid channels are zero
    valid_mask: np.ndarray  # (b, C) bool


@dataclass
class ModelOutput:
    y_fused: Tensor  # (b, n_cls)
    y_channel: Tensor  # (b, C, n_cls)
    z_bar: Tensor  # (b, D)
    features: ChannelFeatures


@dataclass
class LossTerms:
    comb: Tensor
    fused: Tensor
    dist: Tensor


def check_mask(valid_mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(valid_mask, dtype=bool)
    if mask.ndim != 2:
        raise InputError(f"valid mask must be (b, C), got {mask.shape}")
    if not mask.any(axis=1).all():
        raise InputError("every sample needs at least one valid channel")
    return mask


def fuse_mean(features: ChannelFeatures) -> Tensor:
    """Mean of the per-channel features over valid channels only."""
    mask = check_mask(features.valid_mask)
    w = mask / mask.sum(axis=1, keepdims=True)
    return F.sum(features.z * w[:, :, None].astype(features.z.dtype), axis=1)


class ChannelFreeModel(Module):
    """Shared per-channel encoder with fused and channel-wise heads.

    Parameters
    ----------
    n_classes : int
    backbone : BackboneConfig
    use_meta : bool
        Condition the encoder's residual-block norms on metadata (CBN).
    vocab_sizes : sequence of int
        Embedding rows per metadata field; only used with ``use_meta``.
    d_meta, lam_gamma : metadata width and CBN modulation bound.
    """

    kind = "lf"

    def __init__(self, n_classes: int, backbone: BackboneConfig | None = None, use_meta: bool = False,
                 vocab_sizes=(1, 1, 1, 1), d_meta: int = 64, lam_gamma: float = 0.1, seed: int = 0,
                 dtype=np.float64):
        rng = np.random.default_rng(seed)
        self.backbone_cfg = backbone or BackboneConfig()
        self.use_meta = use_meta
        self.n_classes = n_classes
        self.d_meta = d_meta
        self.lam_gamma = lam_gamma
        self.encoder = ResNet1d(self.backbone_cfg, rng, in_channels=1, d_meta=d_meta if use_meta else None,
                                lam=lam_gamma, dtype=dtype)
        self.meta_encoder = MetaEncoder(vocab_sizes, rng, d_meta=d_meta, dtype=dtype) if use_meta else None
        d = self.backbone_cfg.feature_dim
        self.fused_head = Linear(d, n_classes, rng, dtype=dtype)
        self.aux_head = Linear(d, n_classes, rng, dtype=dtype)
        self._rng = rng
        self.dtype = dtype

    def head_prefixes(self) -> tuple[str, ...]:
        return ("fused_head.", "aux_head.")

    def encode_channels(self, x, meta, valid_mask) -> ChannelFeatures:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.dtype)
        if x.ndim != 3:
            raise InputError(f"input must be (b, C, l), got {x.shape}")
        b, c, length = x.shape
        mask = check_mask(valid_mask)
        if mask.shape != (b, c):
            raise InputError(f"mask shape {mask.shape} does not match input {x.shape}")
        # masked channels are dropped before the encoder so they never enter BN statistics
        rows = np.flatnonzero(mask.reshape(-1))
        xv = Tensor(x.reshape(b * c, 1, length)[rows])
        m = None
        if self.use_meta:
            ids = np.asarray(meta, dtype=np.int64).reshape(b * c, 4)[rows]
            if (ids >= np.array(self.meta_encoder.vocab_sizes())).any() or (ids < 0).any():
                raise InputError("metadata id exceeds embedding table size")
            m = self.meta_encoder(ids)
        h = self.encoder(xv, m)
        z = F.reshape(F.scatter_rows(h, rows, b * c), (b, c, -1))
        return ChannelFeatures(z, mask)

    def forward(self, x, meta=None, valid_mask=None) -> ModelOutput:
        x_arr = np.asarray(x.data if isinstance(x, Tensor) else x)
        if valid_mask is None:
            valid_mask = np.ones(x_arr.shape[:2], dtype=bool)
        if meta is None:
            meta = np.zeros(x_arr.shape[:2] + (4,), dtype=np.int64)
        feats = self.encode_channels(x_arr, meta, valid_mask)
        z_bar = fuse_mean(feats)
        return ModelOutput(self.fused_head(z_bar), self.aux_head(feats.z), z_bar, feats)

    def predict(self, x, meta=None, valid_mask=None) -> Tensor:
        return self.forward(x, meta, valid_mask).y_fused

    def grow_vocab(self, vocab_sizes):
        if self.meta_encoder is not None:
            self.meta_encoder.ensure_capacity(vocab_sizes, self._rng)

    def macs(self, n_channels: int, length: int) -> int:
        per_channel = self.encoder.macs(length)
        d = self.backbone_cfg.feature_dim
        total = n_channels * per_channel + d * self.n_classes  # fused head
        total += n_channels * d * self.n_classes  # auxiliary head
        if self.use_meta:
            enc = self.meta_encoder
            total += n_channels * (enc.fc1.macs() + enc.fc2.macs())
            cbn_channels = sum(mod.bn.channels for mod in self.modules() if isinstance(mod, CBN))
            total += n_channels * 2 * self.d_meta * cbn_channels
        return total

    def backbone_macs(self, n_channels: int, length: int) -> int:
        return n_channels * self.encoder.macs(length)


def combination_loss(output: ModelOutput, labels, valid_mask=None, cfg: LossConfig | float = 0.5) -> LossTerms:
    """``lam * CE(fused) + (1 - lam) * mean over valid channels of CE(channel)``.

    The channel term averages within each sample first, then over the batch.
    """
    lam = cfg.lam if isinstance(cfg, LossConfig) else LossConfig(cfg).lam
    labels = np.asarray(labels)
    mask = check_mask(output.features.valid_mask if valid_mask is None else valid_mask)
    b, c, n_cls = output.y_channel.shape
    fused = F.softmax_cross_entropy(output.y_fused, labels)
    w = (mask / mask.sum(axis=1, keepdims=True) / b).reshape(-1)
    dist = F.softmax_cross_entropy(F.reshape(output.y_channel, (b * c, n_cls)), np.repeat(labels, c), weights=w)
    comb = fused * lam + dist * (1.0 - lam)
    return LossTerms(comb, fused, dist)

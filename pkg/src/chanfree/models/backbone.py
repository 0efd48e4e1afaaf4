"""1D ResNet10 encoder: strided stem, four basic residual blocks, global average pooling."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from chanfree.autodiff import functional as F
from chanfree.autodiff.nn import BatchNorm1d, Conv1d, Module
from chanfree.autodiff.tensor import Tensor
from chanfree.errors import ConfigurationError
from chanfree.metadata import CBN


@dataclass
class BackboneConfig:
    num_blocks: int = 4
    base_channels: int = 32
    kernel: int = 3
    # every stage (and the stem) halves the time axis
    stride: int = 2

    def __post_init__(self):
        if self.num_blocks < 1 or self.base_channels < 1:
            raise ConfigurationError("num_blocks and base_channels must be positive")
        if self.kernel % 2 == 0:
            raise ConfigurationError("kernel must be odd")

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.num_blocks)]

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def to_dict(self) -> dict:
        return asdict(self)


class _Norm(Module):
    """Plain batch norm or CBN behind one call signature."""

    def __init__(self, channels: int, rng, d_meta: int | None, lam: float, dtype):
        if d_meta is None:
            self.layer = BatchNorm1d(channels, dtype=dtype)
        else:
            self.layer = CBN(channels, d_meta, rng, lam=lam, dtype=dtype)
        self.conditional = d_meta is not None

    def forward(self, x, m=None):
        if self.conditional:
            if m is None:
                raise ConfigurationError("conditional norm needs metadata vectors")
            return self.layer(x, m)
        return self.layer(x)


class BasicBlock(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng, d_meta=None, lam=0.1,
                 dtype=np.float64):
        self.conv1 = Conv1d(c_in, c_out, kernel, rng, stride=stride, dtype=dtype)
        self.norm1 = _Norm(c_out, rng, d_meta, lam, dtype)
        self.conv2 = Conv1d(c_out, c_out, kernel, rng, stride=1, dtype=dtype)
        self.norm2 = _Norm(c_out, rng, d_meta, lam, dtype)
        if stride != 1 or c_in != c_out:
            self.short_conv = Conv1d(c_in, c_out, 1, rng, stride=stride, dtype=dtype)
            self.short_norm = _Norm(c_out, rng, d_meta, lam, dtype)
        else:
            self.short_conv = self.short_norm = None

    def forward(self, x, m=None):
        h = F.relu(self.norm1(self.conv1(x), m))
        h = self.norm2(self.conv2(h), m)
        skip = x if self.short_conv is None else self.short_norm(self.short_conv(x), m)
        return F.relu(h + skip)

    def macs(self, length: int) -> tuple[int, int]:
        """MACs of the block and its output length."""
        total = self.conv1.macs(length)
        out_len = self.conv1.out_length(length)
        total += self.conv2.macs(out_len)
        if self.short_conv is not None:
            total += self.short_conv.macs(length)
        return total, out_len


class ResNet1d(Module):
    """Encoder mapping ``(n, in_channels, l)`` to ``(n, feature_dim)``.

    With ``d_meta`` set, every normalization inside the residual blocks is a
    CBN layer driven by per-row metadata vectors; the stem keeps plain BN.
    """

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, in_channels: int = 1,
                 d_meta: int | None = None, lam: float = 0.1, dtype=np.float64):
        self.cfg = cfg
        widths = cfg.widths
        self.stem = Conv1d(in_channels, widths[0], cfg.kernel, rng, stride=cfg.stride, dtype=dtype)
        self.stem_norm = BatchNorm1d(widths[0], dtype=dtype)
        self.blocks = []
        c_in = widths[0]
        for w in widths:
            self.blocks.append(BasicBlock(c_in, w, cfg.kernel, cfg.stride, rng, d_meta, lam, dtype))
            c_in = w
        self.in_channels = in_channels
        self.conditional = d_meta is not None

    @property
    def feature_dim(self) -> int:
        return self.cfg.feature_dim

    def forward_stem(self, x) -> Tensor:
        return F.relu(self.stem_norm(self.stem(x)))

    def forward_blocks(self, h, m=None, start: int = 0, stop: int | None = None) -> Tensor:
        for block in self.blocks[start:stop]:
            h = block(h, m)
        return h

    @staticmethod
    def pool(h) -> Tensor:
        return F.mean(h, axis=2)

    def forward(self, x, m=None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ConfigurationError(f"encoder expects (n, {self.in_channels}, l), got {x.shape}")
        return self.pool(self.forward_blocks(self.forward_stem(x), m))

    def stage_lengths(self, length: int) -> list[int]:
        """Time length after the stem and after each block."""
        lengths = [self.stem.out_length(length)]
        for block in self.blocks:
            lengths.append(block.conv1.out_length(lengths[-1]))
        return lengths

    def macs(self, length: int, start: int = 0, stop: int | None = None, include_stem: bool = True) -> int:
        """Analytic conv MACs for one input row of length ``length``.

        ``start``/``stop`` select a block range; ``length`` is then the length
        entering block ``start``.
        """
        total = 0
        if include_stem:
            total += self.stem.macs(length)
            length = self.stem.out_length(length)
        for block in self.blocks[start:stop]:
            m, length = block.macs(length)
            total += m
        return total

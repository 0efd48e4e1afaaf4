"""Efficiency benchmark: analytic parameter and MAC counts plus wall-clock timings."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from chanfree.autodiff.optim import Adam, TrainSchedule
from chanfree.autodiff.tensor import no_grad
from chanfree.data.sample import Batch
from chanfree.harness.config import ExperimentConfig
from chanfree.harness.training import model_loss
from chanfree.models.baselines import make_model

SCHEMA = "chanfree-efficiency/1"


@dataclass
class EfficiencyReport:
    model: str
    config_hash: str
    length: int
    params: dict[int, int]  # channel count -> parameter count
    macs: dict[int, int]  # channel count -> MACs per sample
    # one row per (C, batch): inference ms/batch and training ms/step, both medians
    curve: list[dict] = field(default_factory=list)
    warmup: int = 5
    iterations: int = 30
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = {str(k): v for k, v in self.params.items()}
        d["macs"] = {str(k): v for k, v in self.macs.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EfficiencyReport":
        d = dict(d)
        d["params"] = {int(k): v for k, v in d["params"].items()}
        d["macs"] = {int(k): v for k, v in d["macs"].items()}
        return cls(**d)

    def table(self) -> str:
        lines = [f"# efficiency  model={self.model}  config={self.config_hash}  window={self.length}",
                 f"# timings: median of {self.iterations} iterations after {self.warmup} warmup",
                 f"{'C':>4} {'params':>10} {'MACs/sample':>14}"]
        for c in sorted(self.macs):
            lines.append(f"{c:>4} {self.params[c]:>10} {self.macs[c]:>14}")
        if self.curve:
            lines.append("")
            lines.append(f"{'C':>4} {'batch':>6} {'infer ms/batch':>15} {'train ms/step':>14}")
            for r in self.curve:
                lines.append(f"{r['channels']:>4} {r['batch']:>6} {r['infer_ms']:>15.2f} {r['train_ms']:>14.2f}")
        return "\n".join(lines) + "\n"


def _median_ms(fn, warmup: int, iterations: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(iterations):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return 1000.0 * float(np.median(times))


def _random_batch(rng, batch: int, channels: int, length: int, vocab_sizes, n_classes: int, dtype) -> Batch:
    x = rng.normal(size=(batch, channels, length)).astype(dtype)
    meta = np.stack([rng.integers(1, max(n, 2), size=(batch, channels)) for n in vocab_sizes], axis=-1)
    return Batch(x, meta.astype(np.int64), np.ones((batch, channels), dtype=bool),
                 rng.integers(0, n_classes, size=batch))


def efficiency_bench(cfg: ExperimentConfig, channel_grid: Sequence[int] = (6, 12, 24, 40),
                     batch_grid: Sequence[int] = (1, 4, 32), n_classes: int = 4, length: int | None = None,
                     warmup: int = 5, iterations: int = 30, timed: bool = True) -> EfficiencyReport:
    """Counts for every channel count in ``channel_grid``, timings for every (C, batch) pair.

    MACs come from the models' analytic counters, never from measurement.
    The channel-fixed baseline is rebuilt for each C; channel-free models are
    built once and fed every C.
    """
    warmup, iterations = max(warmup, 5), max(iterations, 30)
    length = length or cfg.data.window
    vocab_sizes = (8, 4, 4, 4)
    dtype = cfg.np_dtype
    lam = cfg.loss_lambda
    shared = None if cfg.model == "baseline" else make_model(
        cfg.model, n_classes, backbone=cfg.backbone, vocab_sizes=vocab_sizes, d_meta=cfg.meta.d_meta,
        lam_gamma=cfg.meta.lam_gamma, n_slots=cfg.n_slots, seed=0, dtype=dtype)
    rng = np.random.default_rng(0)
    params, macs, curve = {}, {}, []
    for c in channel_grid:
        model = shared if shared is not None else make_model("baseline", n_classes, n_channels=c,
                                                             backbone=cfg.backbone, seed=0, dtype=dtype)
        params[c] = model.num_parameters()
        macs[c] = int(model.macs(c, length))
        if not timed:
            continue
        for b in batch_grid:
            batch = _random_batch(rng, b, c, length, vocab_sizes, n_classes, dtype)
            # training first: it also initializes the norm layers' running statistics
            train_ms = _median_ms(_train_step(model, batch, lam), warmup, iterations)
            infer_ms = _median_ms(lambda: _infer(model, batch), warmup, iterations)
            curve.append({"channels": c, "batch": b, "infer_ms": infer_ms, "train_ms": train_ms})
    return EfficiencyReport(cfg.model, cfg.hash(), length, params, macs, curve, warmup, iterations)


def _infer(model, batch: Batch):
    model.eval()
    with no_grad():
        model.predict(batch.x, batch.meta, batch.mask)


def _train_step(model, batch: Batch, lam: float):
    # lr 0 keeps weights fixed so every timed step does identical work
    opt = Adam(model.parameters(), TrainSchedule(learning_rate=0.0, epochs=1, batch_size=len(batch.labels)))

    def step():
        model.train()
        loss, _ = model_loss(model, batch, lam)
        opt.zero_grad()
        loss.backward()
        opt.step(0, allow_missing=True)
    return step

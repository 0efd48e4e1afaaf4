"""LOSO training and evaluation of every model kind."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from chanfree.autodiff import functional as F
from chanfree.autodiff.optim import Adam, TrainSchedule
from chanfree.autodiff.tensor import no_grad
from chanfree.data import (Sample, StandardizerState, collate, load_cache, load_csv_recordings, loso_splits,
                           resample_recording, save_cache, segment_windows, standardize_apply, standardize_fit,
                           synth_generate)
from chanfree.errors import ConfigurationError, NumericError
from chanfree.harness.config import ExperimentConfig
from chanfree.harness.metrics import classification_metrics
from chanfree.harness.report import EvalReport, FoldResult, build_id
from chanfree.metadata import MetaVocab
from chanfree.models.baselines import make_model
from chanfree.models.channel_free import ChannelFreeModel, combination_loss
from chanfree.perturb import PerturbationSpec, condition_name, perturb_all

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    samples: list[Sample]
    vocab: MetaVocab
    n_classes: int
    n_channels: int  # largest channel count

    @property
    def subjects(self) -> list:
        return sorted({s.subject for s in self.samples}, key=str)


def load_dataset(cfg: ExperimentConfig, vocab: MetaVocab | None = None) -> Dataset:
    """Samples for ``cfg``'s data source, registering metadata names in ``vocab``."""
    vocab = vocab if vocab is not None else MetaVocab()
    src = cfg.data.source
    if src == "synth":
        ds = synth_generate(cfg.synth.to_spec(), cfg.synth.seed, vocab)
        samples = ds.samples
    elif src in ("csv", "cache"):
        cache_key = cfg.hash()
        cached = load_cache(cfg.data.cache, cache_key) if cfg.data.cache else None
        if cached is not None:
            samples, cached_vocab = cached
            if cached_vocab is not None:
                if not cached_vocab.is_compatible_with(vocab) or not vocab.is_compatible_with(cached_vocab):
                    raise ConfigurationError("cached dataset uses a different metadata vocabulary")
                for f, names in cached_vocab.names.items():
                    for name in sorted(names, key=names.get):
                        vocab.lookup(f, name)
        elif src == "cache":
            raise ConfigurationError(f"no valid cache at {cfg.data.cache!r}")
        else:
            paths = [p.strip() for p in cfg.data.csv.split(",") if p.strip()]
            if not paths or not cfg.data.descriptor:
                raise ConfigurationError("csv source needs data.csv and data.descriptor")
            samples = []
            for path in paths:
                for rec in load_csv_recordings(path, cfg.data.descriptor, vocab):
                    samples.extend(segment_windows(resample_recording(rec), cfg.data.window, cfg.data.stride))
            if cfg.data.cache:
                save_cache(cfg.data.cache, samples, cache_key, vocab)
    else:
        raise ConfigurationError(f"unknown data source {src!r}")
    if not samples:
        raise ConfigurationError("dataset is empty")
    n_classes = max(s.label for s in samples) + 1
    if src == "synth":
        n_classes = cfg.synth.n_classes
    return Dataset(samples, vocab, n_classes, max(s.n_channels for s in samples))


def build_model(cfg: ExperimentConfig, ds: Dataset, seed: int, vocab_sizes=None):
    return make_model(cfg.model, ds.n_classes, n_channels=ds.n_channels, backbone=cfg.backbone,
                      vocab_sizes=vocab_sizes or ds.vocab.sizes(), d_meta=cfg.meta.d_meta, lam_gamma=cfg.meta.lam_gamma,
                      n_slots=cfg.n_slots, seed=seed, dtype=cfg.np_dtype)


def model_loss(model, batch, lam: float, enabled=None):
    """Training loss for one batch and its scalar components."""
    meta = batch.meta if enabled is None else _mask_meta(batch.meta, enabled)
    if isinstance(model, ChannelFreeModel):
        out = model(batch.x, meta, batch.mask)
        terms = combination_loss(out, batch.labels, batch.mask, lam)
        return terms.comb, {"loss": terms.comb.item(), "fused": terms.fused.item(), "dist": terms.dist.item()}
    loss = F.softmax_cross_entropy(model.predict(batch.x, meta, batch.mask), batch.labels)
    return loss, {"loss": loss.item()}


def _mask_meta(meta: np.ndarray, enabled) -> np.ndarray:
    if all(enabled):
        return meta
    meta = meta.copy()
    meta[..., ~np.asarray(enabled, dtype=bool)] = 0
    return meta


def shuffled_batches(samples: Sequence[Sample], batch_size: int):
    def make(rng: np.random.Generator) -> list[list[Sample]]:
        order = rng.permutation(len(samples))
        return [[samples[i] for i in order[lo:lo + batch_size]] for lo in range(0, len(order), batch_size)]
    return make


def fit(model, samples: Sequence[Sample] | None, schedule: TrainSchedule, lam: float, seed: int = 0,
        enabled=None, params=None, frozen_body: bool = False, head_switch: Callable | None = None,
        label: str = "", make_batches: Callable | None = None) -> list[dict]:
    """Train ``model`` in place with Adam and a per-epoch cosine schedule.

    ``params`` restricts the optimized set; ``frozen_body`` keeps every norm
    layer in eval mode so no running statistic moves (linear probing).
    ``make_batches(rng)`` overrides the default shuffled mini-batches, and
    ``head_switch(chunk)`` runs before each batch (per-source heads).
    """
    make_batches = make_batches or shuffled_batches(samples, schedule.batch_size)
    rng = np.random.default_rng(seed)
    opt = Adam(params if params is not None else model.parameters(), schedule)
    dtype = model.dtype
    history = []
    for epoch in range(schedule.epochs):
        model.eval() if frozen_body else model.train()
        start = time.perf_counter()
        sums: dict[str, float] = {}
        n_batches = 0
        for chunk in make_batches(rng):
            if head_switch is not None:
                head_switch(chunk)
            batch = collate(chunk, dtype=dtype)
            try:
                loss, parts = model_loss(model, batch, lam, enabled)
            except NumericError as exc:
                raise NumericError(f"{label} epoch {epoch} batch {n_batches}: {exc}") from exc
            if not np.isfinite(parts["loss"]):
                raise NumericError(f"{label} epoch {epoch} batch {n_batches}: non-finite loss {parts}")
            opt.zero_grad()
            loss.backward()
            opt.step(epoch, allow_missing=True)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        entry = {k: v / n_batches for k, v in sums.items()}
        entry.update(epoch=epoch, lr=schedule.lr_at(epoch), seconds=time.perf_counter() - start)
        history.append(entry)
        log.debug("%s epoch %d %s", label, epoch, entry)
    model.eval()
    return history


def calibrate_norms(model, samples: Sequence[Sample], batch_size: int = 256, enabled=None):
    """Fill missing norm-layer running statistics with one no-grad pass in training mode.

    Layers whose statistics already exist are restored afterwards, so a
    pretrained body keeps exactly the statistics it came with.
    """
    before = {k: v.copy() for k, v in model.state_dict().items()}
    model.train()
    with no_grad():
        for lo in range(0, len(samples), batch_size):
            batch = collate(samples[lo:lo + batch_size], dtype=model.dtype)
            meta = batch.meta if enabled is None else _mask_meta(batch.meta, enabled)
            model.predict(batch.x, meta, batch.mask)
    model.eval()
    state = model.state_dict()
    state.update(before)
    model.load_state_dict(state, strict=True)


def predict_labels(model, samples: Sequence[Sample], batch_size: int = 256, enabled=None) -> np.ndarray:
    model.eval()
    preds = []
    with no_grad():
        for lo in range(0, len(samples), batch_size):
            batch = collate(samples[lo:lo + batch_size], dtype=model.dtype)
            meta = batch.meta if enabled is None else _mask_meta(batch.meta, enabled)
            preds.append(np.argmax(model.predict(batch.x, meta, batch.mask).data, axis=1))
    return np.concatenate(preds)


def evaluate(model, samples: Sequence[Sample], conditions: Sequence[PerturbationSpec], n_classes: int,
             batch_size: int = 256, enabled=None, names: Sequence[str] | None = None) -> dict[str, dict]:
    """Metrics on clean data and under each perturbation condition."""
    labels = np.array([s.label for s in samples])
    out = {"Clean": classification_metrics(labels, predict_labels(model, samples, batch_size, enabled), n_classes)}
    for i, spec in enumerate(conditions):
        name = names[i] if names else condition_name(spec)
        preds = predict_labels(model, perturb_all(samples, spec), batch_size, enabled)
        out[name] = classification_metrics(labels, preds, n_classes)
    return out


def fold_seed(trial: int, fold: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([trial, fold, stream]).generate_state(1)[0])


@dataclass
class FoldModel:
    subject: object
    trial_seed: int
    model: object
    standardizer: StandardizerState
    test: list[Sample]  # standardized held-out samples
    train: list[Sample] = field(default_factory=list)


@dataclass
class RunResult:
    report: EvalReport
    folds: list[FoldModel]
    dataset: Dataset


def train_run(cfg: ExperimentConfig, dataset: Dataset | None = None, keep_train: bool = False) -> RunResult:
    """LOSO training and evaluation over every fold and trial seed."""
    t0 = time.perf_counter()
    ds = dataset if dataset is not None else load_dataset(cfg)
    enabled = cfg.meta.enabled_mask()
    conditions = cfg.conditions()
    wanted = cfg.fold_subjects()
    folds = loso_splits(ds.samples)
    results, kept = [], []
    for trial in cfg.trial_seeds:
        for k, (subject, train, test) in enumerate(folds):
            if wanted is not None and str(subject) not in wanted:
                continue
            state = standardize_fit(train)
            train_std, test_std = standardize_apply(state, train), standardize_apply(state, test)
            model = build_model(cfg, ds, fold_seed(trial, k))
            history = fit(model, train_std, cfg.train, cfg.loss_lambda, fold_seed(trial, k, 1), enabled,
                          label=f"fold {subject} trial {trial}")
            metrics = evaluate(model, test_std, conditions, ds.n_classes, cfg.eval.batch_size, enabled)
            results.append(FoldResult(str(subject), trial, metrics, history))
            kept.append(FoldModel(subject, trial, model, state, test_std, train_std if keep_train else []))
    names = ["Clean"] + [condition_name(c) for c in conditions]
    report = EvalReport(cfg.model, cfg.hash(), names, results, cfg.trial_seeds,
                        {"seconds": time.perf_counter() - t0, "n_samples": len(ds.samples)}, build_id())
    return RunResult(report, kept, ds)

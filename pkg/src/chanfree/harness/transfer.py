"""Cross-dataset transfer: multitask pretraining, then fine-tuning or linear probing."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from chanfree.autodiff.nn import Linear
from chanfree.data import loso_splits, standardize_apply, standardize_fit
from chanfree.errors import ConfigurationError
from chanfree.harness.config import ExperimentConfig
from chanfree.harness.report import EvalReport, FoldResult, build_id
from chanfree.harness.training import Dataset, build_model, calibrate_norms, evaluate, fit, fold_seed, load_dataset
from chanfree.metadata import MetaVocab
from chanfree.models.channel_free import ChannelFreeModel
from chanfree.perturb import condition_name

MODES = ("FT", "LP")


@dataclass
class Pretrained:
    state: dict  # backbone and metadata-encoder arrays (heads excluded)
    vocab: MetaVocab
    model_cfg: ExperimentConfig
    heads: dict  # source name -> (fused_head, aux_head)


def _heads(model) -> tuple:
    return (model.fused_head, model.aux_head) if isinstance(model, ChannelFreeModel) else (model.head,)


def _set_heads(model, heads: tuple):
    if isinstance(model, ChannelFreeModel):
        model.fused_head, model.aux_head = heads
    else:
        model.head = heads[0]


def _new_heads(model, n_classes: int, rng) -> tuple:
    d = model.backbone_cfg.feature_dim
    count = 2 if isinstance(model, ChannelFreeModel) else 1
    return tuple(Linear(d, n_classes, rng, dtype=model.dtype) for _ in range(count))


def body_state(model) -> dict:
    heads = model.head_prefixes()
    return {k: v for k, v in model.state_dict().items() if not k.startswith(heads)}


def pretrain_multitask(source_cfgs: Sequence[ExperimentConfig], vocab: MetaVocab | None = None,
                       seed: int = 0) -> Pretrained:
    """Train one shared encoder on all source datasets, each with its own heads.

    Every mini-batch comes from a single source and is classified by that
    source's heads; the backbone and metadata encoder are shared.
    """
    if not source_cfgs:
        raise ConfigurationError("need at least one source configuration")
    vocab = vocab if vocab is not None else MetaVocab()
    datasets = [load_dataset(cfg, vocab) for cfg in source_cfgs]
    lead = source_cfgs[0]
    if lead.model == "baseline" and len({d.n_channels for d in datasets}) > 1:
        raise ConfigurationError("the channel-fixed baseline cannot pretrain on differing channel counts")
    merged = Dataset([], vocab, max(d.n_classes for d in datasets), max(d.n_channels for d in datasets))
    model = build_model(lead, merged, fold_seed(seed, 0, 7))
    rng = np.random.default_rng(fold_seed(seed, 0, 8))
    heads = {f"source{i}": _new_heads(model, d.n_classes, rng) for i, d in enumerate(datasets)}
    tagged = []
    for i, d in enumerate(datasets):
        state = standardize_fit(d.samples)
        for s in standardize_apply(state, d.samples):
            s.tags["source"] = f"source{i}"
            tagged.append(s)
    params = [p for name, p in model.named_parameters() if not name.startswith(model.head_prefixes())]
    params += [p for hs in heads.values() for h in hs for p in h.parameters()]

    def switch(chunk):
        _set_heads(model, heads[chunk[0].tags["source"]])

    by_source: dict[str, list] = {}
    for s in tagged:
        by_source.setdefault(s.tags["source"], []).append(s)
    fit(model, None, lead.train, lead.loss_lambda, fold_seed(seed, 0, 9), lead.meta.enabled_mask(),
        params=params, head_switch=switch, label="pretrain",
        make_batches=lambda r: _source_batches(by_source, lead.train.batch_size, r))
    return Pretrained(body_state(model), vocab, lead, heads)


def _source_batches(by_source: dict, batch_size: int, rng) -> list[list]:
    """Shuffled single-source mini-batches, interleaved across sources."""
    shards = []
    for samples in by_source.values():
        order = rng.permutation(len(samples))
        shards += [[samples[i] for i in order[lo:lo + batch_size]] for lo in range(0, len(order), batch_size)]
    return [shards[i] for i in rng.permutation(len(shards))]


def transfer_run(source_cfgs: Sequence[ExperimentConfig] | Pretrained | None, target_cfg: ExperimentConfig,
                 mode: str = "FT", seed: int = 0, target_vocab: MetaVocab | None = None,
                 on_fold: Callable | None = None) -> EvalReport:
    """Adapt a pretrained encoder to the target dataset under LOSO.

    ``source_cfgs=None`` starts from a randomly initialized encoder, the
    reference point for judging what pretraining buys. ``on_fold(subject,
    model)`` is called with each adapted model before evaluation.
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}")
    t0 = time.perf_counter()
    if source_cfgs is None:
        pre = None
        vocab = target_vocab if target_vocab is not None else MetaVocab()
    else:
        pre = source_cfgs if isinstance(source_cfgs, Pretrained) else pretrain_multitask(source_cfgs, seed=seed)
        vocab = pre.vocab.copy()
        if target_vocab is not None:
            if not pre.vocab.is_compatible_with(target_vocab):
                raise ConfigurationError("target metadata vocabulary disagrees with the pretraining vocabulary")
            vocab = target_vocab
    ds = load_dataset(target_cfg, vocab)
    model_cfg = pre.model_cfg if pre is not None else target_cfg
    conditions = target_cfg.conditions()
    enabled = target_cfg.meta.enabled_mask()
    wanted = target_cfg.fold_subjects()
    results = []
    for k, (subject, train, test) in enumerate(loso_splits(ds.samples)):
        if wanted is not None and str(subject) not in wanted:
            continue
        if pre is not None:
            # rebuild at the pretraining vocabulary size, load, then grow for new target names
            model = build_model(model_cfg, ds, fold_seed(seed, k, 11), vocab_sizes=pre.vocab.sizes())
            _load_body(model, pre.state)
            if isinstance(model, ChannelFreeModel) and model.meta_encoder is not None:
                model.meta_encoder.ensure_capacity(ds.vocab.sizes(), np.random.default_rng(fold_seed(seed, k, 12)))
        else:
            model = build_model(model_cfg, ds, fold_seed(seed, k, 11))
        state = standardize_fit(train)
        train_std, test_std = standardize_apply(state, train), standardize_apply(state, test)
        heads = model.head_prefixes()
        if mode == "LP":
            calibrate_norms(model, train_std, target_cfg.eval.batch_size, enabled)
            params = [p for name, p in model.named_parameters() if name.startswith(heads)]
        else:
            params = None
        history = fit(model, train_std, target_cfg.train, target_cfg.loss_lambda, fold_seed(seed, k, 13), enabled,
                      params=params, frozen_body=mode == "LP", label=f"{mode} fold {subject}")
        if on_fold is not None:
            on_fold(subject, model)
        metrics = evaluate(model, test_std, conditions, ds.n_classes, target_cfg.eval.batch_size, enabled)
        results.append(FoldResult(str(subject), seed, metrics, history))
    names = ["Clean"] + [condition_name(c) for c in conditions]
    return EvalReport(model_cfg.model, target_cfg.hash(), names, results, [seed],
                      {"seconds": time.perf_counter() - t0, "mode": mode, "pretrained": pre is not None},
                      build_id(), kind=f"transfer-{mode}")


def _load_body(model, state: dict):
    """Load every non-head array of ``state`` into ``model``, keeping its own heads."""
    heads = model.head_prefixes()
    own = model.state_dict()
    for k, v in own.items():
        if not k.startswith(heads) and k not in state:
            raise ConfigurationError(f"pretrained state lacks {k!r}")
        if k in state and state[k].shape != v.shape:
            raise ConfigurationError(f"shape mismatch for {k!r}: {state[k].shape} vs {v.shape}")
    merged = {k: v for k, v in state.items() if not k.startswith(heads)}
    merged.update({k: v for k, v in own.items() if k.startswith(heads)})
    model.load_state_dict(merged, strict=True)

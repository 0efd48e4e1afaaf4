"""Command-line entry point: ``chanfree <train|eval|sweep|transfer|bench|synth> [options]``.

Any ``--section.key value`` (or ``--key=value``) flag overrides the matching
config entry, e.g. ``--train.epochs 5 --model lf``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from chanfree.data import loso_splits, standardize_apply
from chanfree.data.csvio import write_csv
from chanfree.data.preprocess import Recording
from chanfree.data.synth import synth_generate
from chanfree.errors import ChanfreeError, ConfigurationError, NumericError
from chanfree.harness.bench import efficiency_bench
from chanfree.harness.checkpoint import load_checkpoint, save_checkpoint, standardizer_from_dict
from chanfree.harness.config import ExperimentConfig, dump_config, load_config
from chanfree.harness.report import EvalReport, FoldResult, build_id, report_emit, summary_table
from chanfree.harness.sweep import DEFAULT_GRID, sweep_intensity
from chanfree.harness.training import FoldModel, RunResult, evaluate, load_dataset, train_run
from chanfree.harness.transfer import transfer_run
from chanfree.metadata import ChannelDescriptor, write_descriptor
from chanfree.perturb import KINDS, condition_name

log = logging.getLogger("chanfree")


def parse_overrides(extra: list[str]) -> dict[str, str]:
    """``["--train.epochs", "5", "--model=lf"]`` -> ``{"train.epochs": "5", "model": "lf"}``."""
    out: dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigurationError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        elif i + 1 < len(extra):
            i += 1
            value = extra[i]
        else:
            raise ConfigurationError(f"flag {tok} needs a value")
        out[key.replace("-", "_")] = value
        i += 1
    return out


def _config(args, extra) -> ExperimentConfig:
    return load_config(args.config, parse_overrides(extra))


def _checkpoint_name(subject, trial) -> str:
    return f"ckpt.{subject}.{trial}.npz"


def cmd_train(args, cfg: ExperimentConfig) -> int:
    run = train_run(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fm in run.folds:
        save_checkpoint(out / _checkpoint_name(fm.subject, fm.trial_seed), fm.model, run.dataset.vocab,
                        cfg.loss_lambda, fm.standardizer,
                        {"subject": str(fm.subject), "trial": fm.trial_seed, "config_hash": cfg.hash()})
    (out / "config.txt").write_text(dump_config(cfg))
    _emit(run.report, out, args.run_id)
    return 0


def _load_run(cfg: ExperimentConfig, ckpt_dir) -> RunResult:
    """Fold models from a ``train`` output directory, with their held-out subjects' samples."""
    paths = sorted(Path(ckpt_dir).glob("ckpt.*.npz"))
    if not paths:
        raise ConfigurationError(f"no checkpoints in {ckpt_dir}")
    vocab = None
    folds = []
    for p in paths:
        model, saved_vocab, header = load_checkpoint(p)
        vocab = vocab or saved_vocab
        folds.append((model, header))
    ds = load_dataset(cfg, vocab)
    by_subject = {str(subject): test for subject, _, test in loso_splits(ds.samples)}
    kept = []
    for model, header in folds:
        subject = header["extra"]["subject"]
        if subject not in by_subject:
            raise ConfigurationError(f"checkpoint subject {subject!r} is not in the dataset")
        state = standardizer_from_dict(header["standardizer"])
        test = standardize_apply(state, by_subject[subject])
        kept.append(FoldModel(subject, header["extra"]["trial"], model, state, test))
    trials = sorted({fm.trial_seed for fm in kept})
    return RunResult(EvalReport(cfg.model, cfg.hash(), [], [], trials, {}, build_id()), kept, ds)


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    run = _load_run(cfg, args.checkpoints)
    conditions = cfg.conditions()
    enabled = cfg.meta.enabled_mask()
    results = [FoldResult(str(fm.subject), fm.trial_seed,
                          evaluate(fm.model, fm.test, conditions, run.dataset.n_classes, cfg.eval.batch_size,
                                   enabled)) for fm in run.folds]
    names = ["Clean"] + [condition_name(c) for c in conditions]
    report = EvalReport(run.folds[0].model.kind, cfg.hash(), names, results, run.report.seeds, {}, build_id())
    _emit(report, Path(args.out), args.run_id)
    return 0


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    run = _load_run(cfg, args.checkpoints) if args.checkpoints else train_run(cfg)
    kinds = [k.strip() for k in args.kinds.split(",")] if args.kinds else list(KINDS)
    grid = [float(t) for t in args.grid.split(",")] if args.grid else DEFAULT_GRID
    report = sweep_intensity(run, kinds, grid, cfg.eval.seed, cfg.meta.enabled_mask(), cfg.eval.batch_size)
    report.model = run.folds[0].model.kind
    _emit(report, Path(args.out), args.run_id)
    return 0


def cmd_transfer(args, cfg: ExperimentConfig) -> int:
    sources = [load_config(p) for p in args.source] or None
    report = transfer_run(sources, cfg, args.mode, seed=cfg.trial_seeds[0])
    _emit(report, Path(args.out), args.run_id)
    return 0


def cmd_bench(args, cfg: ExperimentConfig) -> int:
    channels = [int(c) for c in args.channels.split(",")]
    batches = [int(b) for b in args.batches.split(",")]
    rep = efficiency_bench(cfg, channels, batches, timed=not args.no_timing, iterations=args.iterations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run_id = args.run_id or f"bench-{cfg.model}-{cfg.hash()[:8]}"
    (out / f"report.{run_id}.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    (out / f"report.{run_id}.txt").write_text(rep.table())
    print(rep.table(), end="")
    return 0


def cmd_synth(args, cfg: ExperimentConfig) -> int:
    """Write the configured synthetic dataset as one CSV plus a descriptor."""
    spec = cfg.synth.to_spec()
    if spec.channels is not None and spec.channels != len(spec.slots):
        raise ConfigurationError("synth export needs every slot present in every window (synth.channels empty)")
    ds = synth_generate(spec, cfg.synth.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [f"{s.location}_{s.side}_{s.sensor}_{s.axis}_{j}" for j, s in enumerate(spec.slots)]
    recs = []
    for subject in sorted({s.subject for s in ds.samples}):
        wins = ds.by_subject(subject)
        series = np.concatenate([w.window for w in wins], axis=1)
        labels = np.repeat([w.label for w in wins], spec.length)
        recs.append(Recording(subject, series, spec.rate_hz, wins[0].meta, labels, names))
    write_csv(out / "synth.csv", recs, names, spec.rate_hz)
    rows = [ChannelDescriptor(j, s.location, s.side, s.sensor, s.axis) for j, s in enumerate(spec.slots)]
    write_descriptor(out / "synth.descriptor", rows, {"rate_hz": spec.rate_hz, "columns": ", ".join(names)})
    print(f"wrote {out / 'synth.csv'} and {out / 'synth.descriptor'} ({len(ds.samples)} windows)")
    return 0


def _emit(report: EvalReport, out: Path, run_id: str | None):
    json_path, _ = report_emit(report, out, run_id)
    print(summary_table(report), end="")
    print(f"report: {json_path}")


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "transfer": cmd_transfer,
            "bench": cmd_bench, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chanfree", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="plain-text key = value config file")
    common.add_argument("--out", default="runs", help="output directory for reports and artifacts")
    common.add_argument("--run-id", dest="run_id", help="report file id (default derived from the config hash)")
    sub.add_parser("train", parents=[common], help="LOSO training; saves one checkpoint per fold")
    p = sub.add_parser("eval", parents=[common], help="evaluate saved fold checkpoints")
    p.add_argument("--checkpoints", required=True, help="directory written by train")
    p = sub.add_parser("sweep", parents=[common], help="accuracy versus perturbation intensity")
    p.add_argument("--checkpoints", help="directory written by train (trains from scratch if omitted)")
    p.add_argument("--kinds", help=f"comma-separated subset of {','.join(KINDS)}")
    p.add_argument("--grid", help="comma-separated intensities (default 0, 0.1, ..., 1)")
    p = sub.add_parser("transfer", parents=[common], help="pretrain on source configs, adapt to the target")
    p.add_argument("--source", action="append", default=[], help="source config file (repeatable; none = scratch)")
    p.add_argument("--mode", choices=("FT", "LP"), default="FT")
    p = sub.add_parser("bench", parents=[common], help="parameter/MAC counts and timings")
    p.add_argument("--channels", default="6,12,24,40")
    p.add_argument("--batches", default="1,4,32")
    p.add_argument("--iterations", type=int, default=30)
    p.add_argument("--no-timing", dest="no_timing", action="store_true", help="counts only")
    sub.add_parser("synth", parents=[common], help="export the synthetic dataset as CSV plus descriptor")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args, extra)
        return COMMANDS[args.command](args, cfg)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return 2
    except (ChanfreeError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())

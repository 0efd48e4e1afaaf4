"""Accuracy as a function of perturbation intensity."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from chanfree.harness.report import EvalReport, FoldResult, build_id
from chanfree.harness.training import RunResult, evaluate
from chanfree.perturb import KINDS, PerturbationSpec

DEFAULT_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


def sweep_intensity(run: RunResult, kinds: Sequence[str] = KINDS, grid: Sequence[float] = DEFAULT_GRID,
                    seed: int = 0, enabled=None, batch_size: int = 256) -> EvalReport:
    """Evaluate each trained fold model at every (kind, intensity) point.

    The same perturbation seed is used at every grid point, so curves of
    models that ignore a perturbation are exactly flat.
    """
    specs, names = [], []
    for kind in kinds:
        for t in grid:
            specs.append(PerturbationSpec(kind, float(t), seed))
            names.append(f"{kind}@{float(t):.2f}")
    n_classes = run.dataset.n_classes
    folds = []
    for fm in run.folds:
        metrics = evaluate(fm.model, fm.test, specs, n_classes, batch_size, enabled, names=names)
        folds.append(FoldResult(str(fm.subject), fm.trial_seed, metrics))
    report = EvalReport(run.report.model, run.report.config_hash, ["Clean"] + names, folds, run.report.seeds,
                        {}, build_id(), kind="sweep")
    curves = {}
    for kind in kinds:
        rows = []
        for t in grid:
            acc = report.values(f"{kind}@{float(t):.2f}")
            rows.append({"intensity": float(t), "mean": float(acc.mean()), "std": float(acc.std())})
        curves[kind] = rows
    report.curves = curves
    return report

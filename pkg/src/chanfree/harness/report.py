"""Evaluation reports: versioned JSON plus a plain-text summary table."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCHEMA = "chanfree-report/1"
SUMMARY_COLUMNS = ("Clean", "Shfl", "Miss", "Shfl+Miss")


def build_id() -> str:
    """Content hash of the package sources, stable for a given code state."""
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha1()
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


@dataclass
class FoldResult:
    subject: str
    trial_seed: int
    metrics: dict[str, dict]  # condition -> {accuracy, macro_f1, per_class_f1}
    history: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    model: str
    config_hash: str
    conditions: list[str]
    folds: list[FoldResult]
    seeds: list[int] = field(default_factory=list)
    runtime: dict = field(default_factory=dict)
    build: str = ""
    kind: str = "eval"
    curves: dict = field(default_factory=dict)  # sweep: kind -> [{intensity, mean, std}]
    schema: str = SCHEMA

    def values(self, condition: str, metric: str = "accuracy") -> np.ndarray:
        return np.array([f.metrics[condition][metric] for f in self.folds if condition in f.metrics])

    def aggregate(self) -> dict[str, dict[str, float]]:
        """Mean and std over folds and trials for every condition."""
        out = {}
        for cond in self.conditions:
            acc, f1 = self.values(cond, "accuracy"), self.values(cond, "macro_f1")
            if acc.size:
                out[cond] = {"accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std()),
                             "macro_f1_mean": float(f1.mean()), "macro_f1_std": float(f1.std())}
        return out

    def mean(self, condition: str = "Clean", metric: str = "accuracy") -> float:
        return float(self.values(condition, metric).mean())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aggregate"] = self.aggregate()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        d = {k: v for k, v in d.items() if k != "aggregate"}
        d["folds"] = [FoldResult(**f) for f in d["folds"]]
        return cls(**d)

    def metric_fields(self) -> dict:
        """Everything that should be identical across reruns (timings excluded)."""
        d = self.to_dict()
        d.pop("runtime")
        for f in d["folds"]:
            for h in f["history"]:
                h.pop("seconds", None)
        return d


def summary_table(report: EvalReport, metric: str = "accuracy") -> str:
    agg = report.aggregate()
    cols = [c for c in SUMMARY_COLUMNS if c in agg] + [c for c in report.conditions
                                                       if c in agg and c not in SUMMARY_COLUMNS]
    head = f"{'model':<10}" + "".join(f"{c:>20}" for c in cols)
    cells = "".join(f"{100 * agg[c][metric + '_mean']:>12.1f} ± {100 * agg[c][metric + '_std']:<5.1f}" for c in cols)
    lines = [f"# {report.kind} report  config={report.config_hash}  build={report.build}  seeds={report.seeds}",
             f"# metric: {metric} (%), mean ± std over folds and trials", head, f"{report.model:<10}" + cells]
    if report.curves:
        lines.append("")
        lines.append("# intensity sweep: mean accuracy (%)")
        for kind, rows in report.curves.items():
            pts = "  ".join(f"{r['intensity']:.1f}:{100 * r['mean']:.1f}" for r in rows)
            lines.append(f"{kind:<24} {pts}")
    return "\n".join(lines) + "\n"


def report_emit(report: EvalReport, out_dir, run_id: str | None = None) -> tuple[Path, Path]:
    """Write ``report.<id>.json`` and ``report.<id>.txt`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = run_id or f"{report.kind}-{report.model}-{report.config_hash[:8]}"
    json_path = out_dir / f"report.{run_id}.json"
    txt_path = out_dir / f"report.{run_id}.txt"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    txt_path.write_text(summary_table(report))
    return json_path, txt_path


def report_parse(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))

"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from chanfree.autodiff.tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: dict[str, float] = field(default_factory=dict)
    tolerance: float | None = None

    @property
    def ok(self) -> bool:
        return self.tolerance is None or self.max_rel_error < self.tolerance


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data.sum())
        flat[i] = orig - h
        down = float(fn().data.sum())
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], tolerance: float | None = None,
               h: float = 1e-5, names: Sequence[str] | None = None) -> GradCheckReport:
    """Compare backprop against central differences for every tensor in ``inputs``.

    ``fn`` recomputes the output from scratch (inputs are read in place). A
    non-scalar output is reduced by summation. The relative error of one
    input is ``|g_a - g_n| / (|g_a| + |g_n|)`` in the 2-norm, which stays
    meaningful when individual entries are zero.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires double precision")
        t.grad = None
    out = fn()
    out.backward(np.ones_like(out.data))
    report = GradCheckReport(0.0, tolerance=tolerance)
    for i, t in enumerate(inputs):
        name = names[i] if names else (t.name or f"input{i}")
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = numerical_grad(fn, t, h)
        denom = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        err = 0.0 if denom == 0 else float(np.linalg.norm(analytic - numeric) / denom)
        report.per_input[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
    return report

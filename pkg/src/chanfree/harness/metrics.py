"""Classification metrics from a confusion matrix."""

from __future__ import annotations

import numpy as np


def confusion_matrix(labels, preds, n_classes: int) -> np.ndarray:
    """``cm[true, pred]`` counts."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)), 1)
    return cm


def accuracy(labels, preds) -> float:
    labels, preds = np.asarray(labels), np.asarray(preds)
    return float((labels == preds).mean()) if labels.size else 0.0


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    """F1 per class; classes with no true or predicted samples get 0."""
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(labels, preds, n_classes: int) -> float:
    """Unweighted mean F1 over the classes present in ``labels``."""
    cm = confusion_matrix(labels, preds, n_classes)
    present = cm.sum(axis=1) > 0
    if not present.any():
        return 0.0
    return float(per_class_f1(cm)[present].mean())


def classification_metrics(labels, preds, n_classes: int) -> dict:
    cm = confusion_matrix(labels, preds, n_classes)
    present = cm.sum(axis=1) > 0
    f1 = per_class_f1(cm)
    return {
        "accuracy": accuracy(labels, preds),
        "macro_f1": float(f1[present].mean()) if present.any() else 0.0,
        "per_class_f1": [float(v) if p else None for v, p in zip(f1, present)],
    }

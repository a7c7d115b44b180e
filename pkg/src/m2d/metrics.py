"""Confusion-matrix based classification metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileError, InvalidInputError
from .kinlab import MODEL_ACTIONS


@dataclass(frozen=True, eq=False)
class MetricsReport:
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_f1: float
    balanced_accuracy: float
    accuracy: float

    def to_dict(self, class_names=None) -> dict:
        k = len(self.support)
        names = list(class_names) if class_names else [a.short for a in MODEL_ACTIONS][:k]
        return {
            "classes": names,
            "confusion": self.confusion.astype(int).tolist(),
            "support": self.support.astype(int).tolist(),
            "precision": [round(float(x), 6) for x in self.precision],
            "recall": [round(float(x), 6) for x in self.recall],
            "f1": [round(float(x), 6) for x in self.f1],
            "macro_f1": round(self.macro_f1, 6),
            "balanced_accuracy": round(self.balanced_accuracy, 6),
            "accuracy": round(self.accuracy, 6),
        }


def confusion_matrix(truths, preds, k: int = 3) -> np.ndarray:
    """Counts with rows = truth and columns = prediction."""
    t = np.asarray(truths, dtype=np.int64).ravel()
    p = np.asarray(preds, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise InvalidInputError(f"{len(t)} truths but {len(p)} predictions")
    if t.size and (t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k):
        raise InvalidInputError(f"labels must lie in [0, {k})")
    return np.bincount(t * k + p, minlength=k * k).reshape(k, k)


def report(confusion) -> MetricsReport:
    """Per-class and summary metrics.

    Zero denominators give 0 for precision, recall and F1. Macro-F1 averages
    over all classes; balanced accuracy only over classes with support.
    """
    cm = np.asarray(confusion, dtype=np.int64)
    diag = np.diag(cm).astype(float)
    col = cm.sum(axis=0).astype(float)
    row = cm.sum(axis=1).astype(float)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    present = row > 0
    total = cm.sum()
    return MetricsReport(
        confusion=cm,
        precision=precision,
        recall=recall,
        f1=f1,
        support=row.astype(np.int64),
        macro_f1=float(f1.mean()),
        balanced_accuracy=float(recall[present].mean()) if present.any() else 0.0,
        accuracy=float(diag.sum() / total) if total else 0.0,
    )


def evaluate(truths, preds, k: int = 3) -> MetricsReport:
    return report(confusion_matrix(truths, preds, k))


def write_report(rep: MetricsReport, path, **extra) -> Path:
    path = Path(path)
    doc = rep.to_dict()
    doc.update(extra)
    try:
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise FileError(f"cannot write report {path}: {exc}") from exc
    return path


def read_report(path) -> MetricsReport:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise FileError(f"cannot read report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: malformed report: {exc}") from exc
    return report(np.array(doc["confusion"]))

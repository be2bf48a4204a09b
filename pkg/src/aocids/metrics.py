"""Binary detection metrics with attack as the positive class."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False
    recall_undefined: bool = False

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


def metrics_from_counts(cm: ConfusionMatrix) -> MetricSet:
    if cm.total == 0:
        raise ValueError("no samples to evaluate")
    acc = (cm.tp + cm.tn) / cm.total
    p_den, r_den = cm.tp + cm.fp, cm.tp + cm.fn
    prec = cm.tp / p_den if p_den else 0.0
    rec = cm.tp / r_den if r_den else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return MetricSet(100 * acc, 100 * prec, 100 * rec, 100 * f1,
                     precision_undefined=not p_den, recall_undefined=not r_den)


def compute_metrics(predictions, truth) -> tuple[ConfusionMatrix, MetricSet]:
    pred = np.asarray(predictions).astype(int).ravel()
    true = np.asarray(truth).astype(int).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("no samples to evaluate")
    cm = ConfusionMatrix(
        tp=int(((pred == 1) & (true == 1)).sum()),
        tn=int(((pred == 0) & (true == 0)).sum()),
        fp=int(((pred == 1) & (true == 0)).sum()),
        fn=int(((pred == 0) & (true == 1)).sum()),
    )
    return cm, metrics_from_counts(cm)

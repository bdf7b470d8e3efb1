"""Binary classification metrics; the positive class is abnormal (label 1)."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    f1: float
    accuracy: float
    bacc: float
    mcc: float
    tpr: float
    tnr: float
    fpr: float

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num, den) -> float:
    return num / den if den else 0.0


def confusion(predictions, truths) -> ConfusionMatrix:
    p = np.asarray(predictions)
    t = np.asarray(truths)
    if p.shape != t.shape or p.size == 0:
        raise DataError("predictions and truths must be non-empty and equally long")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (t == 1))),
        fp=int(np.sum((p == 1) & (t == 0))),
        tn=int(np.sum((p == 0) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
    )


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total <= 0:
        raise DataError("empty confusion matrix")
    tpr = _ratio(cm.tp, cm.tp + cm.fn)
    tnr = _ratio(cm.tn, cm.tn + cm.fp)
    den = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    mcc = (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(den) if den else 0.0
    return MetricsReport(
        f1=_ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn),
        accuracy=(cm.tp + cm.tn) / cm.total,
        bacc=(tpr + tnr) / 2,
        mcc=mcc,
        tpr=tpr,
        tnr=tnr,
        fpr=_ratio(cm.fp, cm.fp + cm.tn),
    )


def evaluate(predictions, truths) -> MetricsReport:
    return compute_metrics(confusion(predictions, truths))

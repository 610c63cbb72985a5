"""Confusion counts and macro-averaged evaluation metrics.

Precision, recall, and F1 are computed per class (pair-same = 1 is the
positive class, pair-different = 0 the negative) and averaged without
weighting.  On a balanced pair set macro recall equals accuracy, which is
why both can land on the same value.  Undefined ratios (zero denominators)
are reported as 0 and flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise InvalidInputError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    loss: float = 0.0
    degenerate: bool = False


def confusion(predictions, labels) -> ConfusionMatrix:
    preds = np.asarray(predictions)
    labs = np.asarray(labels)
    if preds.shape != labs.shape:
        raise InvalidInputError(
            f"{preds.shape[0] if preds.ndim else 0} predictions vs "
            f"{labs.shape[0] if labs.ndim else 0} labels")
    if preds.size == 0:
        raise InvalidInputError("no predictions to score")
    for name, arr in (("predictions", preds), ("labels", labs)):
        if not np.isin(arr, (0, 1)).all():
            raise InvalidInputError(f"{name} must be 0 or 1")
    preds = preds.astype(bool)
    labs = labs.astype(bool)
    return ConfusionMatrix(
        tn=int((~preds & ~labs).sum()),
        fp=int((preds & ~labs).sum()),
        fn=int((~preds & labs).sum()),
        tp=int((preds & labs).sum()),
    )


def _ratio(num: int, den: int, flags: list) -> float:
    if den == 0:
        flags.append(True)
        return 0.0
    return num / den


def macro_metrics(cm: ConfusionMatrix, loss: float = 0.0) -> MetricsReport:
    """Unweighted two-class average of precision/recall/F1 plus accuracy."""
    if cm.total == 0:
        raise InvalidInputError("empty confusion matrix")
    flags: list = []
    prec1 = _ratio(cm.tp, cm.tp + cm.fp, flags)
    rec1 = _ratio(cm.tp, cm.tp + cm.fn, flags)
    prec0 = _ratio(cm.tn, cm.tn + cm.fn, flags)
    rec0 = _ratio(cm.tn, cm.tn + cm.fp, flags)
    f1_1 = _ratio_f1(prec1, rec1, flags)
    f1_0 = _ratio_f1(prec0, rec0, flags)
    return MetricsReport(
        accuracy=(cm.tn + cm.tp) / cm.total,
        precision=(prec0 + prec1) / 2.0,
        recall=(rec0 + rec1) / 2.0,
        f1=(f1_0 + f1_1) / 2.0,
        loss=loss,
        degenerate=bool(flags),
    )


def _ratio_f1(p: float, r: float, flags: list) -> float:
    if p + r == 0.0:
        flags.append(True)
        return 0.0
    return 2.0 * p * r / (p + r)


def report_csv_text(cm: ConfusionMatrix, report: MetricsReport) -> str:
    lines = ["metric,value",
             f"tn,{cm.tn}", f"fp,{cm.fp}", f"fn,{cm.fn}", f"tp,{cm.tp}",
             f"accuracy,{report.accuracy:.6f}",
             f"precision,{report.precision:.6f}",
             f"recall,{report.recall:.6f}",
             f"f1,{report.f1:.6f}",
             f"loss,{report.loss:.6f}"]
    return "\n".join(lines) + "\n"


def report_table_text(cm: ConfusionMatrix, report: MetricsReport) -> str:
    rows = [
        ("True negative", cm.tn),
        ("False positive", cm.fp),
        ("False negative", cm.fn),
        ("True positive", cm.tp),
        ("Accuracy", f"{report.accuracy:.5f}"),
        ("Precision", f"{report.precision:.5f}"),
        ("Recall", f"{report.recall:.5f}"),
        ("F1 score", f"{report.f1:.5f}"),
        ("Loss", f"{report.loss:.5f}"),
    ]
    width = max(len(name) for name, _ in rows)
    out = [f"{name:<{width}}  {value}" for name, value in rows]
    if report.degenerate:
        out.append("(some ratios had zero denominators and were reported as 0)")
    return "\n".join(out) + "\n"

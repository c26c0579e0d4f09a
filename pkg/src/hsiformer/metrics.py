"""Confusion matrix and the agreement metrics reported for HSI classifiers."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class EvalReport:
    confusion: np.ndarray  # (C, C) counts, rows = truth, cols = prediction
    per_class_acc: np.ndarray  # (C,), nan for classes with no test samples
    oa: float
    aa: float
    kappa: float
    excluded_classes: list = field(default_factory=list)  # 1-based, no test samples
    train_time_seconds: float = 0.0

    def write_csv(self, path) -> None:
        """Metrics as CSV. Wall time is deliberately not serialized so
        reports from identical seeds compare bit-for-bit."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            writer.writerow(["oa", repr(self.oa)])
            writer.writerow(["aa", repr(self.aa)])
            writer.writerow(["kappa", repr(self.kappa)])
            for cls, acc in enumerate(self.per_class_acc, start=1):
                writer.writerow([f"class_{cls}_acc", repr(float(acc))])
            for i in range(self.confusion.shape[0]):
                writer.writerow([f"confusion_row_{i + 1}", " ".join(str(v) for v in self.confusion[i])])


def confusion_matrix(truth, predicted, num_classes: int) -> np.ndarray:
    """Counts with rows indexed by truth and columns by prediction (1-based labels)."""
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise DataError(f"truth/prediction lengths differ: {truth.shape} vs {predicted.shape}")
    if truth.size and (truth.min() < 1 or predicted.min() < 1 or truth.max() > num_classes or predicted.max() > num_classes):
        raise DataError("labels out of range for the declared class count")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(out, (truth - 1, predicted - 1), 1)
    return out


def compute_metrics(confusion: np.ndarray):
    """(oa, aa, kappa, per_class) from a counts matrix.

    oa is trace/total; per-class accuracy divides the diagonal by the row
    sum; aa averages per-class accuracies, skipping classes with an empty
    truth row (reported as nan with a warning); kappa is the chance-
    corrected agreement (p_o - p_e) / (1 - p_e) with p_e from the
    row/column marginals.
    """
    confusion = np.asarray(confusion, dtype=np.float64)
    total = confusion.sum()
    if total <= 0:
        raise DataError("confusion matrix has no counts")
    row = confusion.sum(axis=1)
    col = confusion.sum(axis=0)
    oa = float(np.trace(confusion) / total)

    per_class = np.full(confusion.shape[0], np.nan)
    populated = row > 0
    per_class[populated] = np.diag(confusion)[populated] / row[populated]
    if not populated.all():
        missing = [i + 1 for i in np.flatnonzero(~populated)]
        warnings.warn(f"classes {missing} have no test samples; excluded from AA", stacklevel=2)
    aa = float(per_class[populated].mean())

    p_e = float((row * col).sum() / (total * total))
    if p_e == 1.0:
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - p_e) / (1.0 - p_e)
    return oa, aa, float(kappa), per_class


def build_report(confusion: np.ndarray, train_time_seconds: float = 0.0) -> EvalReport:
    oa, aa, kappa, per_class = compute_metrics(confusion)
    excluded = [i + 1 for i in np.flatnonzero(confusion.sum(axis=1) == 0)]
    return EvalReport(
        confusion=np.asarray(confusion, dtype=np.int64),
        per_class_acc=per_class,
        oa=oa,
        aa=aa,
        kappa=kappa,
        excluded_classes=excluded,
        train_time_seconds=train_time_seconds,
    )

"""Confusion matrix and KPI reporting (precision, recall, F1, accuracy)."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


@dataclass
class ConfusionMatrix:
    class_names: list
    counts: np.ndarray  # [C,C]; rows = true class, columns = predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        c = len(self.class_names)
        if self.counts.shape != (c, c):
            raise ValueError(f"confusion matrix shape {self.counts.shape} vs {c} classes")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    zero_division: bool = False  # true if any metric was forced to 0 by 0/0


@dataclass
class ClassReport:
    class_names: list
    per_class: list  # of ClassMetrics
    accuracy: float
    accuracy_exact: Fraction = field(default=None)


def confusion(true_labels, predicted_labels, num_classes: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError(f"label arrays differ in length: {t.shape} vs {p.shape}")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} label out of range [0,{num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix([str(i) for i in range(num_classes)], counts)


def _safe_div(num: int, den: int) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def kpis(cm: ConfusionMatrix) -> ClassReport:
    """One-vs-rest precision/recall/F1 per class plus global accuracy.

    Division by zero yields 0 with the zero_division flag set. Accuracy is
    computed exactly as a rational before float conversion.
    """
    total = cm.total
    if total == 0:
        raise ValueError("kpis: empty confusion matrix")
    per_class = []
    for c in range(len(cm.class_names)):
        tp = int(cm.counts[c, c])
        fp = int(cm.counts[:, c].sum()) - tp
        fn = int(cm.counts[c, :].sum()) - tp
        precision, pz = _safe_div(tp, tp + fp)
        recall, rz = _safe_div(tp, tp + fn)
        if precision + recall > 0:
            f1, fz = 2 * precision * recall / (precision + recall), False
        else:
            f1, fz = 0.0, True
        per_class.append(ClassMetrics(precision, recall, f1, pz or rz or fz))
    acc = Fraction(int(np.trace(cm.counts)), total)
    return ClassReport(list(cm.class_names), per_class, float(acc), acc)


def binary_collapse(cm: ConfusionMatrix, positive_class: int) -> ConfusionMatrix:
    """Fold all non-positive classes into one negative class."""
    c = len(cm.class_names)
    if c < 2:
        raise ValueError("binary_collapse: need at least 2 classes")
    if not 0 <= positive_class < c:
        raise ValueError(f"binary_collapse: positive class {positive_class} out of range")
    pos = positive_class
    neg = [i for i in range(c) if i != pos]
    m = cm.counts
    counts = np.array([
        [m[pos, pos], m[pos, neg].sum()],
        [m[neg, pos].sum(), m[np.ix_(neg, neg)].sum()],
    ], dtype=np.int64)
    return ConfusionMatrix([cm.class_names[pos], "rest"], counts)


def format_percent(x: float) -> str:
    """0.1%-resolution percentage string, truncated (0.99569 -> '99.5').

    Truncation rather than round-half matches common table reporting where
    98.53% appears as 98 and 99.569% as 99.5.
    """
    return f"{np.floor(x * 1000) / 10:.1f}"


def report_text(report: ClassReport) -> str:
    width = max(len(n) for n in report.class_names) + 2
    out = io.StringIO()
    out.write(f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}\n")
    for name, m in zip(report.class_names, report.per_class):
        flag = " *" if m.zero_division else ""
        out.write(f"{name:<{width}}{format_percent(m.precision):>10}"
                  f"{format_percent(m.recall):>10}{format_percent(m.f1):>10}{flag}\n")
    out.write(f"{'accuracy':<{width}}{format_percent(report.accuracy):>10}\n")
    if any(m.zero_division for m in report.per_class):
        out.write("* zero-division: metric forced to 0\n")
    return out.getvalue()


def report_csv(report: ClassReport) -> str:
    lines = ["name,precision,recall,f1"]
    for name, m in zip(report.class_names, report.per_class):
        lines.append(f"{name},{m.precision:.6f},{m.recall:.6f},{m.f1:.6f}")
    lines.append(f"accuracy,{report.accuracy:.6f},,")
    return "\n".join(lines) + "\n"

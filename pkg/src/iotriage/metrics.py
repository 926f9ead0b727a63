"""Confusion matrices and classification reports.

Per-class precision/recall/F1 with macro and support-weighted aggregates,
rendered in the familiar report layout. Rates with a zero denominator are
defined as 0. Weighted F1 is the support-weighted mean of per-class F1.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class ConfusionMatrix:
    class_set: tuple[str, ...]
    counts: np.ndarray  # rows = true class, columns = predicted class

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassRow:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassReport:
    rows: list[ClassRow]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    accuracy: float  # fraction in [0, 1]

    @property
    def total_support(self) -> int:
        return sum(r.support for r in self.rows)


def confusion(
    y_true: list[str] | np.ndarray,
    y_pred: list[str] | np.ndarray,
    class_set: tuple[str, ...] | list[str],
) -> ConfusionMatrix:
    """Count (true, predicted) pairs into a |C| x |C| matrix."""
    y_true = list(y_true)
    y_pred = list(y_pred)
    if len(y_true) != len(y_pred):
        raise DataError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted")
    class_set = tuple(class_set)
    index = {label: i for i, label in enumerate(class_set)}
    counts = np.zeros((len(class_set), len(class_set)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if t not in index:
            raise DataError(f"unknown true label: {t!r}")
        if p not in index:
            raise DataError(f"unknown predicted label: {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(class_set=class_set, counts=counts)


def _rate(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0 else 0.0


def report(matrix: ConfusionMatrix) -> ClassReport:
    """Per-class and aggregate metrics from a confusion matrix."""
    total = matrix.total
    if total == 0:
        raise DataError("empty confusion matrix: no rows evaluated")

    counts = matrix.counts
    rows = []
    for i, label in enumerate(matrix.class_set):
        tp = float(counts[i, i])
        fp = float(counts[:, i].sum() - counts[i, i])
        fn = float(counts[i, :].sum() - counts[i, i])
        precision = _rate(tp, tp + fp)
        recall = _rate(tp, tp + fn)
        f1 = _rate(2 * precision * recall, precision + recall)
        rows.append(ClassRow(label, precision, recall, f1, int(counts[i, :].sum())))

    n = len(rows)
    supports = np.array([r.support for r in rows], dtype=np.float64)
    weights = supports / total
    return ClassReport(
        rows=rows,
        macro_precision=sum(r.precision for r in rows) / n,
        macro_recall=sum(r.recall for r in rows) / n,
        macro_f1=sum(r.f1 for r in rows) / n,
        weighted_precision=float(sum(w * r.precision for w, r in zip(weights, rows))),
        weighted_recall=float(sum(w * r.recall for w, r in zip(weights, rows))),
        weighted_f1=float(sum(w * r.f1 for w, r in zip(weights, rows))),
        accuracy=float(np.trace(counts)) / total,
    )


_HEADER = ("Attack Class", "Precision", "Recall", "F1-score", "Support")


def render_report(rep: ClassReport, format: str = "markdown") -> str:
    """Render a report as markdown, CSV, or JSON.

    Row order: classes as reported, then Macro Average, Weighted Average,
    and Accuracy (%). Rates print with 4 decimals, supports as integers.
    """
    if format == "json":
        payload = {
            "classes": [
                {
                    "label": r.label,
                    "precision": round(r.precision, 4),
                    "recall": round(r.recall, 4),
                    "f1": round(r.f1, 4),
                    "support": r.support,
                }
                for r in rep.rows
            ],
            "macro": {
                "precision": round(rep.macro_precision, 4),
                "recall": round(rep.macro_recall, 4),
                "f1": round(rep.macro_f1, 4),
            },
            "weighted": {
                "precision": round(rep.weighted_precision, 4),
                "recall": round(rep.weighted_recall, 4),
                "f1": round(rep.weighted_f1, 4),
            },
            "accuracy_percent": round(rep.accuracy * 100, 2),
            "total_support": rep.total_support,
        }
        return json.dumps(payload, indent=2) + "\n"

    total = rep.total_support
    body: list[tuple[str, str, str, str, str]] = []
    for r in rep.rows:
        body.append((r.label, f"{r.precision:.4f}", f"{r.recall:.4f}", f"{r.f1:.4f}", str(r.support)))
    body.append(
        (
            "Macro Average",
            f"{rep.macro_precision:.4f}",
            f"{rep.macro_recall:.4f}",
            f"{rep.macro_f1:.4f}",
            str(total),
        )
    )
    body.append(
        (
            "Weighted Average",
            f"{rep.weighted_precision:.4f}",
            f"{rep.weighted_recall:.4f}",
            f"{rep.weighted_f1:.4f}",
            str(total),
        )
    )
    body.append(("Accuracy (%)", f"{rep.accuracy * 100:.2f}", "", "", ""))

    if format == "csv":
        buf = io.StringIO()
        buf.write(",".join(_HEADER) + "\n")
        for row in body:
            buf.write(",".join(_quote_csv(cell) for cell in row) + "\n")
        return buf.getvalue()

    if format == "markdown":
        widths = [
            max(len(_HEADER[k]), max(len(row[k]) for row in body)) for k in range(5)
        ]
        lines = [
            "| " + " | ".join(h.ljust(w) for h, w in zip(_HEADER, widths)) + " |",
            "| " + " | ".join("-" * w for w in widths) + " |",
        ]
        for row in body:
            lines.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
        return "\n".join(lines) + "\n"

    raise DataError(f"unknown report format: {format!r}")


def _quote_csv(cell: str) -> str:
    if any(ch in cell for ch in ',"\n'):
        return '"' + cell.replace('"', '""') + '"'
    return cell

"""Confusion matrix, per-class scores, ROC/AUC and history/report files."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidDataError, InvalidLabelError, ShapeError

CLASS_NAMES = ("benign", "malignant")
HISTORY_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i][j]``: samples of true class ``i`` predicted as class ``j``."""

    counts: Tuple[Tuple[int, int], Tuple[int, int]]

    @classmethod
    def from_counts(cls, tn_or_rows) -> "ConfusionMatrix":
        rows = np.asarray(tn_or_rows, dtype=np.int64).reshape(2, 2)
        if np.any(rows < 0):
            raise ValueError("confusion counts must be non-negative")
        return cls(tuple(tuple(int(v) for v in r) for r in rows))

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def accuracy(self) -> float:
        return (self.counts[0][0] + self.counts[1][1]) / self.total if self.total else 0.0


def _as_classes(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be one-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise InvalidLabelError(f"{name} contain classes outside {{0, 1}}")
    return arr.astype(np.int64)


def confusion(predictions, labels) -> ConfusionMatrix:
    pred = _as_classes(predictions, "predictions")
    true = _as_classes(labels, "labels")
    if pred.shape != true.shape:
        raise ShapeError(f"{len(pred)} predictions vs {len(true)} labels")
    counts = np.bincount(2 * true + pred, minlength=4).reshape(2, 2)
    return ConfusionMatrix.from_counts(counts)


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def _ratio(num: int, den: int) -> Tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def class_scores(cm: ConfusionMatrix) -> Tuple[Scores, Scores]:
    """Precision, recall and F1 for (benign, malignant). 0/0 yields 0 with ``degenerate`` set."""
    c = cm.counts
    out = []
    for k in (0, 1):
        p, dp = _ratio(c[k][k], c[0][k] + c[1][k])
        r, dr = _ratio(c[k][k], c[k][0] + c[k][1])
        f, df = _ratio(2 * p * r, p + r) if (p + r) else (0.0, True)
        out.append(Scores(p, r, f, dp or dr or df))
    return out[0], out[1]


@dataclass(frozen=True)
class RocCurve:
    fpr: Tuple[float, ...]
    tpr: Tuple[float, ...]
    thresholds: Tuple[float, ...]
    auc: float

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr, self.tpr))


def roc(scores, labels) -> RocCurve:
    """Sweep thresholds over the distinct scores (descending) after a +inf sentinel.

    A sample is predicted positive when its score is >= the threshold.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _as_classes(labels, "labels")
    if s.shape != y.shape:
        raise ShapeError(f"{len(s)} scores vs {len(y)} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InvalidDataError("ROC needs both classes among the labels")
    if np.any((s < 0) | (s > 1)) or not np.all(np.isfinite(s)):
        raise ValueError("scores must lie in [0, 1]")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.r_[0, np.cumsum(y)[ends]]
    fp = np.r_[0, np.cumsum(1 - y)[ends]]
    # exact integer trapezoid, one division at the end
    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    return RocCurve(
        tuple((fp / n_neg).tolist()),
        tuple((tp / n_pos).tolist()),
        (float("inf"), *s[ends].tolist()),
        area2 / (2 * n_pos * n_neg),
    )


def auc(curve) -> float:
    """Trapezoidal area under a curve given as a RocCurve or a list of (fpr, tpr) points."""
    pts = curve.points if isinstance(curve, RocCurve) else list(curve)
    x = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.array([p[1] for p in pts], dtype=np.float64)
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


# --- files -------------------------------------------------------------------

def history_write(records, path) -> None:
    path = Path(path)
    try:
        with open(path, "w", newline="") as f:
            out = csv.writer(f, lineterminator="\n")
            out.writerow(HISTORY_HEADER)
            for r in records:
                out.writerow([
                    r.epoch,
                    f"{r.train_loss:.6g}",
                    f"{r.train_accuracy:.6g}",
                    f"{r.val_loss:.6g}",
                    f"{r.val_accuracy:.6g}",
                ])
    except OSError as exc:
        raise OSError(f"cannot write history to {path}: {exc}") from exc


def history_read(path):
    from .training import EpochRecord

    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != HISTORY_HEADER:
            raise ValueError(f"{path}: unexpected history header {header}")
        return [
            EpochRecord(int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4]))
            for row in reader
            if row
        ]


def roc_write(curve: RocCurve, path) -> None:
    with open(path, "w", newline="") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(["fpr", "tpr"])
        out.writerows((repr(a), repr(b)) for a, b in curve.points)


def roc_read(path) -> List[Tuple[float, float]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader, None)
        return [(float(a), float(b)) for a, b in reader]


def format_report(cm: ConfusionMatrix, curve: Optional[RocCurve]) -> str:
    """Plain-text metrics report: confusion counts, per-class scores, AUC, ROC points.

    ``curve`` is None when the labels hold a single class; AUC is then reported as undefined.
    """
    c = cm.counts
    lines = [
        "[confusion]",
        "# rows: true class, columns: predicted class",
        f"benign,{c[0][0]},{c[0][1]}",
        f"malignant,{c[1][0]},{c[1][1]}",
        f"accuracy: {cm.accuracy!r}",
        "",
        "[scores]",
        "class,precision,recall,f1,degenerate",
    ]
    for name, s in zip(CLASS_NAMES, class_scores(cm)):
        lines.append(f"{name},{s.precision!r},{s.recall!r},{s.f1!r},{int(s.degenerate)}")
    if curve is None:
        lines += ["", "auc: undefined (single-class labels)"]
    else:
        lines += ["", f"auc: {curve.auc!r}", "", "[roc]", "fpr,tpr"]
        lines += [f"{a!r},{b!r}" for a, b in curve.points]
    return "\n".join(lines) + "\n"

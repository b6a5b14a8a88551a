"""Classification metrics and the 2-D embedding projection for reports.

All metrics derive from an integer confusion matrix with true labels on rows
and predictions on columns. The optional binary collapse maps each class to
group 0 or 1 before recomputing accuracy, mirroring the common practice of
reporting a coarse two-way accuracy next to the full C-way one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValidationError(f"label vectors disagree: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValidationError("cannot build a confusion matrix from zero samples")
    for name, arr in (("true", y_true), ("pred", y_pred)):
        if np.any(arr < 0) or np.any(arr >= n_classes):
            raise ValidationError(f"{name} labels fall outside [0, {n_classes})")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


def accuracy_from_confusion(conf: np.ndarray) -> float:
    total = int(conf.sum())
    if total == 0:
        raise ValidationError("empty confusion matrix")
    return float(np.trace(conf)) / total


def f1_scores(conf: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Per-class F1, macro-F1, and support-weighted F1 from a confusion matrix.

    Classes with zero precision+recall get F1 = 0 (the usual convention).
    """
    conf = np.asarray(conf, dtype=np.float64)
    diag = np.diag(conf)
    col = conf.sum(axis=0)
    row = conf.sum(axis=1)
    precision = np.divide(diag, col, out=np.zeros_like(diag), where=col > 0)
    recall = np.divide(diag, row, out=np.zeros_like(diag), where=row > 0)
    pr = precision + recall
    f1 = np.divide(2.0 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0)
    total = conf.sum()
    if total == 0:
        raise ValidationError("empty confusion matrix")
    weighted = float((row / total) @ f1)
    return f1, float(f1.mean()), weighted


def binary_collapse_accuracy(conf: np.ndarray, class_groups: tuple[int, ...]) -> float:
    """Accuracy after mapping each class to group 0 or 1."""
    groups = np.asarray(class_groups, dtype=np.int64)
    if groups.shape != (conf.shape[0],):
        raise ValidationError(f"binary map needs one group per class ({conf.shape[0]}), got {groups.shape}")
    if not np.all(np.isin(groups, (0, 1))):
        raise ValidationError("binary map entries must be 0 or 1")
    correct = 0
    for i in range(conf.shape[0]):
        for j in range(conf.shape[1]):
            if groups[i] == groups[j]:
                correct += int(conf[i, j])
    return correct / int(conf.sum())


@dataclass(frozen=True)
class MetricsReport:
    variant: str
    split: str
    seed: int
    accuracy: float
    macro_f1: float
    weighted_f1: float
    confusion: tuple[tuple[int, ...], ...]  # rows true, cols predicted
    n_samples: int
    accuracy_binary: float | None = None

    def __post_init__(self):
        conf = np.asarray(self.confusion, dtype=np.int64)
        if int(conf.sum()) != self.n_samples:
            raise ValidationError(f"confusion totals {int(conf.sum())} but n_samples is {self.n_samples}")
        expected = accuracy_from_confusion(conf)
        if abs(expected - self.accuracy) > 1e-12:
            raise ValidationError(f"accuracy {self.accuracy} disagrees with confusion trace ({expected})")
        for name in ("accuracy", "macro_f1", "weighted_f1"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} = {v} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "split": self.split,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "accuracy_binary": self.accuracy_binary,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "confusion": [list(row) for row in self.confusion],
            "n_samples": self.n_samples,
        }

    @staticmethod
    def from_dict(doc: dict) -> "MetricsReport":
        known = {
            "variant", "split", "seed", "accuracy", "accuracy_binary",
            "macro_f1", "weighted_f1", "confusion", "n_samples",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"metrics report has unknown keys: {sorted(unknown)}")
        return MetricsReport(
            variant=doc["variant"],
            split=doc["split"],
            seed=int(doc["seed"]),
            accuracy=float(doc["accuracy"]),
            macro_f1=float(doc["macro_f1"]),
            weighted_f1=float(doc["weighted_f1"]),
            confusion=tuple(tuple(int(v) for v in row) for row in doc["confusion"]),
            n_samples=int(doc["n_samples"]),
            accuracy_binary=None if doc.get("accuracy_binary") is None else float(doc["accuracy_binary"]),
        )


def build_report(
    variant: str,
    split: str,
    seed: int,
    y_true: np.ndarray,
    y_pred: np.ndarray,
    n_classes: int,
    binary_map: tuple[int, ...] | None = None,
) -> MetricsReport:
    conf = confusion_matrix(y_true, y_pred, n_classes)
    _, macro, weighted = f1_scores(conf)
    binary = binary_collapse_accuracy(conf, binary_map) if binary_map is not None else None
    return MetricsReport(
        variant=variant,
        split=split,
        seed=seed,
        accuracy=accuracy_from_confusion(conf),
        macro_f1=macro,
        weighted_f1=weighted,
        confusion=tuple(tuple(int(v) for v in row) for row in conf),
        n_samples=int(conf.sum()),
        accuracy_binary=binary,
    )


def project2d(vectors: np.ndarray) -> tuple[np.ndarray, float]:
    """Project rows onto the top-2 principal axes of the mean-centered data.

    Returns (coordinates (n, 2), retained variance fraction). Component signs
    are fixed so the largest-magnitude loading of each axis is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError(f"projection needs >= 2 vectors, got shape {X.shape}")
    if X.shape[1] < 2:
        raise ValidationError(f"projection needs width >= 2, got {X.shape[1]}")
    centered = X - X.mean(axis=0, keepdims=True)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    total = float((svals**2).sum())
    if total <= 0.0:
        raise ValidationError("degenerate input: all vectors identical (rank 0 after centering)")
    axes = vt[:2].copy()
    for i in range(axes.shape[0]):
        j = int(np.argmax(np.abs(axes[i])))
        if axes[i, j] < 0:
            axes[i] = -axes[i]
    coords = centered @ axes.T
    retained = float((svals[:2] ** 2).sum()) / total
    return coords, retained

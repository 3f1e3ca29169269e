"""Classification metrics, label-noise measurement and embedding export."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """k x k integer matrix; rows index the true class, columns the prediction."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)):
        cm[t, p] += 1
    return cm


def _check_nonempty(cm: np.ndarray) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got {cm.shape}")
    if cm.sum() == 0:
        raise ValueError("confusion matrix is empty")
    return cm


def accuracy(cm: np.ndarray) -> float:
    cm = _check_nonempty(cm)
    return float(np.trace(cm)) / float(cm.sum())


def macro_f1(cm: np.ndarray) -> float:
    """Unweighted mean of per-class F1; a class with P + R = 0 contributes 0."""
    cm = _check_nonempty(cm)
    scores = []
    for c in range(cm.shape[0]):
        tp = float(cm[c, c])
        pred = float(cm[:, c].sum())
        true = float(cm[c].sum())
        precision = tp / pred if pred > 0 else 0.0
        recall = tp / true if true > 0 else 0.0
        if precision + recall == 0:
            scores.append(0.0)
        else:
            scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def g_mean(cm: np.ndarray) -> float:
    """Geometric mean of per-class recalls; 0 if any covered class has zero recall.

    Classes absent from the evaluation set (all-zero row) have undefined recall
    and are excluded with a warning.
    """
    cm = _check_nonempty(cm)
    recalls = []
    for c in range(cm.shape[0]):
        true = float(cm[c].sum())
        if true == 0:
            log.warning("g_mean: class %d absent from evaluation set, excluded", c)
            continue
        recalls.append(float(cm[c, c]) / true)
    if any(r == 0.0 for r in recalls):
        return 0.0
    return float(np.exp(np.mean(np.log(recalls))))


def measured_noise_ratio(assigned_labels, true_labels, id_set) -> float:
    """Fraction of ids whose assigned label differs from the true label."""
    ids = sorted(id_set)
    if not ids:
        raise ValueError("cannot measure noise over an empty id set")
    assigned = np.asarray(assigned_labels)
    true = np.asarray(true_labels)
    wrong = sum(1 for i in ids if assigned[i] != true[i])
    return wrong / len(ids)


def format_percent(x: float) -> str:
    """Fraction as a percentage with 2 decimals, e.g. 0.7595 -> '75.95'."""
    return f"{100.0 * x:.2f}"


def export_embeddings(z: np.ndarray, labels, origin_flags, path) -> None:
    """CSV dump id,label,origin,z0..zd; values keep 17 significant digits.

    Rows align positionally: z[i], labels[i] and origin_flags[i] describe the
    same node. Round-trips bit-exactly through float parsing.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = list(labels)
    origin_flags = list(origin_flags)
    if not (z.shape[0] == len(labels) == len(origin_flags)):
        raise ValueError("embeddings, labels and origin flags must align")
    dim = z.shape[1] if z.size else 0
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "label", "origin"] + [f"z{k}" for k in range(dim)])
        for i in range(z.shape[0]):
            row = [i, int(labels[i]), str(origin_flags[i])]
            row.extend(f"{v:.17g}" for v in z[i])
            writer.writerow(row)


def read_embeddings(path) -> tuple[np.ndarray, list[int], list[str]]:
    """Inverse of :func:`export_embeddings`."""
    with Path(path).open(newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        dim = len(header) - 3
        z, labels, origins = [], [], []
        for row in reader:
            labels.append(int(row[1]))
            origins.append(row[2])
            z.append([float(v) for v in row[3:]])
    arr = np.array(z, dtype=np.float64) if z else np.zeros((0, dim))
    return arr, labels, origins

"""Evaluation metric oracles and report formatting."""

import numpy as np
import pytest

from graphalp.metrics import (
    accuracy,
    confusion_matrix,
    export_embeddings,
    format_percent,
    g_mean,
    macro_f1,
    measured_noise_ratio,
    read_embeddings,
)


def test_confusion_matrix_orientation():
    cm = confusion_matrix([0, 0, 1], [0, 1, 1], 2)
    assert cm.tolist() == [[1, 1], [0, 1]]


def test_accuracy_cases():
    assert accuracy(np.diag([3, 4, 5])) == 1.0
    assert accuracy(np.array([[5, 5], [0, 10]])) == pytest.approx(0.75)


def test_macro_f1_hand_case():
    cm = np.array([[5, 5], [0, 10]])
    # class 0: P=1.0 R=0.5 F1=2/3; class 1: P=2/3 R=1.0 F1=0.8
    assert macro_f1(cm) == pytest.approx((2.0 / 3.0 + 0.8) / 2.0)
    assert macro_f1(cm) == pytest.approx(0.7333, abs=5e-5)


def test_macro_f1_matches_per_class_oracle(rng):
    for _ in range(20):
        k = int(rng.integers(2, 6))
        cm = rng.integers(0, 12, size=(k, k)).astype(np.int64)
        if cm.sum() == 0:
            cm[0, 0] = 1
        scores = []
        for c in range(k):
            tp = cm[c, c]
            prec = tp / cm[:, c].sum() if cm[:, c].sum() else 0.0
            rec = tp / cm[c].sum() if cm[c].sum() else 0.0
            scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
        assert abs(macro_f1(cm) - np.mean(scores)) < 1e-9


def test_g_mean_cases():
    assert g_mean(np.diag([2, 2])) == 1.0
    cm = np.array([[4, 0], [2, 2]])  # recalls 1.0 and 0.5
    assert g_mean(cm) == pytest.approx(np.sqrt(0.5))
    cm_zero = np.array([[4, 0], [3, 0]])
    assert g_mean(cm_zero) == 0.0


def test_metrics_reject_empty():
    with pytest.raises(ValueError):
        accuracy(np.zeros((2, 2)))


def test_measured_noise_ratio():
    assigned = np.array([9, 0, 1, 1, 0])
    true_labels = np.array([9, 0, 1, 0, 0])
    assert measured_noise_ratio(assigned, true_labels, [1, 2, 3, 4]) == pytest.approx(0.25)
    assert measured_noise_ratio(assigned, true_labels, [1, 2]) == 0.0
    with pytest.raises(ValueError):
        measured_noise_ratio(assigned, true_labels, [])


def test_format_percent():
    assert format_percent(0.7595) == "75.95"
    assert format_percent(1.0) == "100.00"
    assert format_percent(0.0) == "0.00"


def test_export_read_embeddings_roundtrip(tmp_path, rng):
    z = rng.standard_normal((5, 3))
    labels = [0, 1, 2, 1, 0]
    origin = ["original"] * 3 + ["synthetic"] * 2
    path = tmp_path / "emb.csv"
    export_embeddings(z, labels, origin, path)
    z2, labels2, origin2 = read_embeddings(path)
    assert np.array_equal(z, z2)
    assert labels2 == labels
    assert origin2 == origin


def test_export_embeddings_empty(tmp_path):
    path = tmp_path / "emb.csv"
    export_embeddings(np.zeros((0, 4)), [], [], path)
    text = path.read_text().strip().splitlines()
    assert len(text) == 1  # header only

"""Model-quality probes: weighted KNN accuracy, selection precision, 2-d dumps."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .selection import SelectionState

DEFAULT_EVAL_K = 200
DEFAULT_EVAL_TAU = 0.1


@dataclass
class MetricsReport:
    """Summary numbers for one trained model on one dataset."""

    knn_accuracy: float
    test_accuracy: float
    precision_examples: float
    precision_pairs: float
    n_confident: int
    n_pairs: int


def _unit_rows(z: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"{what} contains a zero vector; cosine is undefined")
    return z / norms[:, None]


def weighted_knn_eval(train_z: np.ndarray, train_labels: np.ndarray,
                      test_z: np.ndarray, test_labels: np.ndarray,
                      k: int | None = None, tau: float = DEFAULT_EVAL_TAU) -> float:
    """Accuracy (percent) of a soft nearest-neighbor vote in embedding space.

    Each test point's k nearest train points by cosine similarity vote for
    their label with weight exp(similarity / tau); ties in the vote go to the
    smaller class index. Inputs are normalized internally, so any common
    rescaling of the embeddings leaves the predictions unchanged.

    k defaults to min(200, n_train).
    """
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    n_train = len(train_z)
    if k is None:
        k = min(DEFAULT_EVAL_K, n_train)
    if not 1 <= k <= n_train:
        raise ValueError(f"k={k} outside [1, {n_train}]")
    if tau <= 0:
        raise ValueError("tau must be positive")

    tz = _unit_rows(np.asarray(train_z, dtype=np.float64), "train embeddings")
    qz = _unit_rows(np.asarray(test_z, dtype=np.float64), "test embeddings")
    sims = qz @ tz.T
    n_classes = int(train_labels.max()) + 1

    correct = 0
    train_order = np.arange(n_train)
    for row, want in zip(sims, test_labels):
        order = np.lexsort((train_order, -row))[:k]
        scores = np.zeros(n_classes)
        np.add.at(scores, train_labels[order], np.exp(row[order] / tau))
        if int(np.argmax(scores)) == int(want):
            correct += 1
    return 100.0 * correct / len(test_labels)


def selection_precision(state: SelectionState, true_labels: np.ndarray,
                        noisy_labels: np.ndarray) -> tuple[float, float]:
    """Percent of confident examples whose noisy label is the true one, and
    percent of selected pairs whose endpoints share a true class.

    An empty set scores 100 (flagged by its zero count in the state).
    """
    true_labels = np.asarray(true_labels)
    noisy_labels = np.asarray(noisy_labels)
    if state.confident.size:
        hits = np.sum(true_labels[state.confident] == noisy_labels[state.confident])
        prec_examples = 100.0 * hits / state.confident.size
    else:
        prec_examples = 100.0
    if state.pairs:
        good = sum(1 for i, j in state.pairs if true_labels[i] == true_labels[j])
        prec_pairs = 100.0 * good / len(state.pairs)
    else:
        prec_pairs = 100.0
    return float(prec_examples), float(prec_pairs)


def pair_precision(pairs, true_labels: np.ndarray) -> float:
    """Percent of pairs whose endpoints share a true class (100 when empty)."""
    true_labels = np.asarray(true_labels)
    if not pairs:
        return 100.0
    good = sum(1 for i, j in pairs if true_labels[i] == true_labels[j])
    return 100.0 * good / len(pairs)


def project_2d(x: np.ndarray) -> np.ndarray:
    """Project rows of x onto their top-2 principal components.

    The first output column carries at least as much variance as the second.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 3:
        raise ValueError("need at least 3 points for a 2-d projection")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def dump_projection_2d(z: np.ndarray, true_labels: np.ndarray, noisy_labels: np.ndarray,
                       confident_mask: np.ndarray, path) -> None:
    """Write a 2-d principal-component view of the embeddings as CSV with
    columns x, y, true_label, noisy_label, in_T."""
    coords = project_2d(z)
    true_labels = np.asarray(true_labels)
    noisy_labels = np.asarray(noisy_labels)
    confident_mask = np.asarray(confident_mask, dtype=bool)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "true_label", "noisy_label", "in_T"])
        for i in range(len(coords)):
            writer.writerow([f"{coords[i, 0]:.8f}", f"{coords[i, 1]:.8f}",
                             int(true_labels[i]), int(noisy_labels[i]),
                             int(confident_mask[i])])

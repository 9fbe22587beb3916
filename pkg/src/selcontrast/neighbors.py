"""Exact cosine nearest neighbors and label aggregation over an embedding bank."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_K = 250

PSEUDO = "pseudo"
NOISY = "noisy"


@dataclass
class EmbeddingBank:
    """Snapshot of per-example unit-norm embeddings for one epoch."""

    z: np.ndarray  # (n, proj_dim), rows unit-norm
    epoch_tag: int = 0
    _sims: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        norms = np.linalg.norm(self.z, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            worst = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(f"bank row {worst} has norm {norms[worst]:.8f}, expected 1")

    @property
    def n(self) -> int:
        return len(self.z)

    def similarity_matrix(self) -> np.ndarray:
        """Cached (n, n) matrix of pairwise dot products."""
        if self._sims is None:
            self._sims = self.z @ self.z.T
        return self._sims


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors; zero vectors are an error."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for the zero vector")
    return float(np.dot(a, b) / (na * nb))


def _ranked_others(sims_row: np.ndarray, i: int) -> np.ndarray:
    """All indices except i, sorted by descending similarity, ties by index."""
    keys = sims_row.copy()
    keys[i] = -np.inf  # the query is never its own neighbor
    order = np.lexsort((np.arange(len(keys)), -keys))
    return order[:-1] if len(keys) > 1 else order[:0]


def topk_neighbors(bank: EmbeddingBank, i: int, k: int) -> np.ndarray:
    """Indices of the k most cosine-similar bank rows to row i (exact scan).

    Sorted by descending similarity; exact ties resolve to the smaller index.
    """
    if not 0 <= i < bank.n:
        raise ValueError(f"query index {i} outside [0, {bank.n})")
    if not 1 <= k <= bank.n - 1:
        raise ValueError(f"k={k} outside [1, {bank.n - 1}]")
    return _ranked_others(bank.similarity_matrix()[i], i)[:k]


@dataclass
class PseudoLabelState:
    """Neighbor-corrected labels and the class posterior estimated from them."""

    y_hat: np.ndarray  # (n,) corrected label per example
    q_hat: np.ndarray  # (n, n_classes), rows sum to 1
    k: int


def aggregate_pseudo_labels(bank: EmbeddingBank, noisy_labels: np.ndarray,
                            k: int | None = None, n_classes: int | None = None,
                            count_labels: str = PSEUDO) -> PseudoLabelState:
    """Two-pass neighborhood vote.

    Pass 1 sets y_hat[i] to the majority noisy label among i's top-k
    neighbors; a tied vote keeps i's own noisy label when it is among the
    tied classes and otherwise takes the smallest tied class. Pass 2, run
    only after every y_hat exists, sets q_hat[i, c] to the fraction of i's
    neighbors whose y_hat equals c. count_labels="noisy" is an ablation that
    builds q_hat from the neighbors' raw noisy labels instead.

    k defaults to min(250, n - 1).
    """
    if count_labels not in (PSEUDO, NOISY):
        raise ValueError(f"count_labels must be '{PSEUDO}' or '{NOISY}'")
    noisy_labels = np.asarray(noisy_labels)
    n = bank.n
    if len(noisy_labels) != n:
        raise ValueError("labels and bank must have equal length")
    if k is None:
        k = min(DEFAULT_K, n - 1)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} outside [1, {n - 1}]")
    if n_classes is None:
        n_classes = int(noisy_labels.max()) + 1

    sims = bank.similarity_matrix()
    hoods = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        hoods[i] = _ranked_others(sims[i], i)[:k]

    y_hat = np.empty(n, dtype=np.int64)
    for i in range(n):
        votes = np.bincount(noisy_labels[hoods[i]], minlength=n_classes)
        top = votes.max()
        tied = np.flatnonzero(votes == top)
        own = int(noisy_labels[i])
        y_hat[i] = own if own in tied else int(tied[0])

    counted = y_hat if count_labels == PSEUDO else noisy_labels
    q_hat = np.empty((n, n_classes), dtype=np.float64)
    for i in range(n):
        q_hat[i] = np.bincount(counted[hoods[i]], minlength=n_classes) / k
    return PseudoLabelState(y_hat=y_hat, q_hat=q_hat, k=k)

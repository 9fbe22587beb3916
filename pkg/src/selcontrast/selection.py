"""Confident-example and confident-pair selection from neighborhood posteriors.

Examples whose observed label looks plausible under the neighbor posterior are
kept class-balanced; pairs are formed among them and extended by high-similarity
same-label pairs from the whole train set.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .neighbors import EmbeddingBank, PseudoLabelState

LOG_EPS = 1e-12

logger = logging.getLogger(__name__)

Pair = tuple[int, int]


def nearest_rank_fractile(values, fractile: float) -> float:
    """Nearest-rank order statistic: the ceil(fractile * m)-th smallest value.

    fractile 0 picks the minimum and 1 the maximum. The product is guarded
    against float fuzz so that e.g. 0.15 * 20 still ranks as 3.
    """
    if not 0.0 <= fractile <= 1.0:
        raise ValueError("fractile must lie in [0, 1]")
    ordered = np.sort(np.asarray(values))
    m = len(ordered)
    if m == 0:
        raise ValueError("fractile of an empty collection")
    rank = max(1, math.ceil(fractile * m - 1e-9))
    return ordered[min(rank, m) - 1]


@dataclass
class SelectionState:
    """One epoch's selection: class-balanced confident examples plus the pair
    set used as contrastive supervision."""

    confident_by_class: list[np.ndarray]
    confident: np.ndarray          # sorted union of confident_by_class
    pairs_confident: set[Pair]     # same-label pairs inside the confident set
    pairs_similar: set[Pair]       # same-label pairs above the similarity cut
    pairs: set[Pair]               # union of the two
    sim_threshold: float           # similarity cut (inf when no confident pairs)
    per_class_quota: int
    epoch_tag: int = 0

    def confident_mask(self, n: int) -> np.ndarray:
        mask = np.zeros(n, dtype=bool)
        mask[self.confident] = True
        return mask

    def pair_matrix(self, n: int) -> np.ndarray:
        """Symmetric boolean membership matrix of `pairs` (False diagonal)."""
        return pairs_to_matrix(self.pairs, n)


def pairs_to_matrix(pairs: set[Pair], n: int) -> np.ndarray:
    mat = np.zeros((n, n), dtype=bool)
    for i, j in pairs:
        mat[i, j] = True
        mat[j, i] = True
    return mat


def select_confident_examples(pseudo: PseudoLabelState, noisy_labels: np.ndarray,
                              alpha: float) -> tuple[list[np.ndarray], int]:
    """Class-balanced low-loss examples whose label the neighborhood supports.

    The per-class budget is the alpha-fractile of the per-class counts of
    examples where the corrected label agrees with the observed one; each
    class then keeps its budget-many smallest values of
    -log(q_hat[i, noisy_i] + eps), ties resolved by index.

    Returns (per-class index arrays, budget).
    """
    noisy_labels = np.asarray(noisy_labels)
    n, n_classes = pseudo.q_hat.shape
    if len(noisy_labels) != n:
        raise ValueError("labels and posterior must have equal length")

    agree = pseudo.y_hat == noisy_labels
    agree_counts = [int(np.sum(agree & (noisy_labels == c))) for c in range(n_classes)]
    budget = int(nearest_rank_fractile(agree_counts, alpha))

    losses = -np.log(pseudo.q_hat[np.arange(n), noisy_labels] + LOG_EPS)
    per_class: list[np.ndarray] = []
    for c in range(n_classes):
        members = np.flatnonzero(noisy_labels == c)
        order = members[np.argsort(losses[members], kind="stable")]
        per_class.append(np.sort(order[:budget]))
    return per_class, budget


def build_pairs_from_confident(confident: np.ndarray, noisy_labels: np.ndarray) -> set[Pair]:
    """All unordered pairs of confident examples sharing a noisy label."""
    noisy_labels = np.asarray(noisy_labels)
    pairs: set[Pair] = set()
    confident = np.asarray(confident)
    for c in np.unique(noisy_labels[confident]) if confident.size else []:
        members = confident[noisy_labels[confident] == c]
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                pairs.add((int(members[a]), int(members[b])))
    return pairs


def select_confident_pairs(bank: EmbeddingBank, noisy_labels: np.ndarray,
                           pairs_confident: set[Pair],
                           beta: float) -> tuple[set[Pair], float]:
    """Same-label pairs from the whole bank whose similarity strictly exceeds
    the beta-fractile of the confident pairs' similarities.

    With no confident pairs the threshold is +inf and the result empty.
    """
    noisy_labels = np.asarray(noisy_labels)
    if not pairs_confident:
        logger.warning("no confident pairs; similarity threshold degenerates to +inf")
        return set(), float("inf")
    sims = bank.similarity_matrix()
    base = [sims[i, j] for i, j in pairs_confident]
    threshold = float(nearest_rank_fractile(base, beta))

    similar: set[Pair] = set()
    for c in np.unique(noisy_labels):
        members = np.flatnonzero(noisy_labels == c)
        block = sims[np.ix_(members, members)]
        a_idx, b_idx = np.nonzero(np.triu(block > threshold, k=1))
        for a, b in zip(a_idx, b_idx):
            similar.add((int(members[a]), int(members[b])))
    return similar, threshold


def union_pairs(a: set[Pair], b: set[Pair]) -> set[Pair]:
    """Deduplicated union with canonical (small, large) ordering."""
    out: set[Pair] = set()
    for i, j in list(a) + list(b):
        if i == j:
            raise ValueError(f"self-pair ({i}, {j}) is not a valid pair")
        out.add((i, j) if i < j else (j, i))
    return out


def run_selection(bank: EmbeddingBank, noisy_labels: np.ndarray, pseudo: PseudoLabelState,
                  alpha: float, beta: float, epoch_tag: int = 0) -> SelectionState:
    """Full per-epoch selection: confident examples, then both pair stages."""
    per_class, budget = select_confident_examples(pseudo, noisy_labels, alpha)
    confident = np.sort(np.concatenate(per_class)) if per_class else np.empty(0, dtype=np.int64)
    pairs_conf = build_pairs_from_confident(confident, noisy_labels)
    pairs_sim, threshold = select_confident_pairs(bank, noisy_labels, pairs_conf, beta)
    pairs = union_pairs(pairs_conf, pairs_sim)
    return SelectionState(
        confident_by_class=per_class,
        confident=confident.astype(np.int64),
        pairs_confident=pairs_conf,
        pairs_similar=pairs_sim,
        pairs=pairs,
        sim_threshold=threshold,
        per_class_quota=budget,
        epoch_tag=epoch_tag,
    )

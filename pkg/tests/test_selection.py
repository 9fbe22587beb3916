"""Tests for confident-example / confident-pair selection against hand cases
and an independent brute-force reimplementation.
"""
import math

import numpy as np
import pytest
from oracles import brute_force_selection

from selcontrast.neighbors import EmbeddingBank, PseudoLabelState
from selcontrast.selection import (build_pairs_from_confident,
                                   nearest_rank_fractile, pairs_to_matrix,
                                   run_selection, select_confident_examples,
                                   select_confident_pairs, union_pairs)


def unit_rows(m):
    m = np.asarray(m, dtype=np.float64)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# nearest-rank fractile
# ---------------------------------------------------------------------------

def test_fractile_hand_cases():
    values = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
    assert nearest_rank_fractile(values, 0.0) == 10      # minimum convention
    assert nearest_rank_fractile(values, 1.0) == 100     # maximum
    assert nearest_rank_fractile(values, 0.25) == 30     # ceil(2.5) = 3rd
    assert nearest_rank_fractile(values, 0.3) == 30      # ceil(3.0) = 3rd
    assert nearest_rank_fractile(values, 0.31) == 40     # ceil(3.1) = 4th


def test_fractile_two_values_median_convention():
    # counts {4, 8} at the 50% fractile -> ceil(0.5 * 2) = 1st smallest = 4
    assert nearest_rank_fractile([8, 4], 0.5) == 4


def test_fractile_float_product_guard():
    # 0.15 * 20 = 3.0000000000000004 in floats; must still rank 3rd
    values = list(range(1, 21))
    assert nearest_rank_fractile(values, 0.15) == 3


def test_fractile_singleton_and_validation():
    assert nearest_rank_fractile([7], 0.0) == 7
    assert nearest_rank_fractile([7], 1.0) == 7
    with pytest.raises(ValueError):
        nearest_rank_fractile([], 0.5)
    with pytest.raises(ValueError):
        nearest_rank_fractile([1], 1.5)


def test_fractile_similarity_example():
    # similarities {0.1, 0.2, 0.3, 0.4} at beta=25% -> 0.1
    assert nearest_rank_fractile([0.4, 0.2, 0.1, 0.3], 0.25) == pytest.approx(0.1)
    # beta=0 -> minimum
    assert nearest_rank_fractile([0.2, 0.5, 0.9], 0.0) == pytest.approx(0.2)


# ---------------------------------------------------------------------------
# confident examples
# ---------------------------------------------------------------------------

def pseudo_state(y_hat, q_hat, k=3):
    return PseudoLabelState(y_hat=np.asarray(y_hat), q_hat=np.asarray(q_hat, float), k=k)


def test_confident_budget_from_agreement_fractile():
    # class 0: 4 agreements, class 1: 8 agreements, alpha=0.5 -> budget 4
    noisy = np.array([0] * 6 + [1] * 8)
    y_hat = np.array([0] * 4 + [1] * 2 + [1] * 8)
    q = np.zeros((14, 2))
    q[np.arange(14), noisy] = 0.9
    q[:, 1 - noisy] = 0.1
    per_class, budget = select_confident_examples(pseudo_state(y_hat, q), noisy, 0.5)
    assert budget == 4
    assert [len(x) for x in per_class] == [4, 4]


def test_confident_alpha_zero_takes_min_class_count():
    noisy = np.array([0, 0, 0, 1, 1])
    q = np.full((5, 2), 0.5)
    per_class, budget = select_confident_examples(pseudo_state(noisy, q), noisy, 0.0)
    assert budget == 2
    assert all(np.isfinite(-np.log(q[i, noisy[i]] + 1e-12)) for c in per_class for i in c)


def test_confident_keeps_lowest_loss_members():
    # agreement counts are {4, 0} (class 1 is unpopulated), so only the
    # 1.0-fractile reaches budget 4
    noisy = np.array([0, 0, 0, 0])
    y_hat = np.array([0, 0, 0, 0])
    q = np.array([[0.9, 0.1],
                  [0.2, 0.8],
                  [0.7, 0.3],
                  [0.4, 0.6]])
    per_class, budget = select_confident_examples(pseudo_state(y_hat, q), noisy, 1.0)
    assert budget == 4
    np.testing.assert_array_equal(per_class[0], [0, 1, 2, 3])
    state = pseudo_state(np.array([0, 1, 0, 1]), q)  # only 2 agreements now
    per_class, budget = select_confident_examples(state, noisy, 1.0)
    assert budget == 2
    np.testing.assert_array_equal(per_class[0], [0, 2])  # smallest -log q[., 0]


def test_confident_zero_posterior_sorts_last():
    noisy = np.array([0, 0, 0])
    q = np.array([[0.0, 1.0],
                  [0.5, 0.5],
                  [0.3, 0.7]])
    state = pseudo_state(np.array([0, 0, 0]), q)
    per_class, budget = select_confident_examples(state, noisy, 1.0)
    assert budget == 3
    np.testing.assert_array_equal(per_class[0], [0, 1, 2])
    per_class, _ = select_confident_examples(state, noisy, 0.0)
    # budget 3 again (single class); restrict via a two-class variant instead
    noisy2 = np.array([0, 0, 0, 1])
    q2 = np.vstack([q, [0.0, 1.0]])
    state2 = pseudo_state(np.array([0, 0, 0, 1]), q2)
    per_class2, budget2 = select_confident_examples(state2, noisy2, 0.0)
    assert budget2 == 1
    np.testing.assert_array_equal(per_class2[0], [1])  # q=0.5 beats q=0.3 and q=0.0


def test_confident_empty_class_yields_empty_list():
    noisy = np.array([0, 0, 0])
    q = np.full((3, 2), 0.5)
    per_class, _ = select_confident_examples(pseudo_state(noisy, q), noisy, 0.5)
    assert per_class[1].size == 0


def test_confident_budget_monotone_in_alpha():
    rng = np.random.default_rng(6)
    noisy = rng.integers(0, 3, size=30)
    y_hat = np.where(rng.random(30) < 0.6, noisy, rng.integers(0, 3, size=30))
    q = rng.dirichlet(np.ones(3), size=30)
    state = pseudo_state(y_hat, q)
    budgets = [select_confident_examples(state, noisy, a)[1]
               for a in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert budgets == sorted(budgets)
    # and selection grows as supersets with the budget
    sel = [set(np.concatenate(select_confident_examples(state, noisy, a)[0]))
           for a in (0.0, 0.5, 1.0)]
    assert sel[0] <= sel[1] <= sel[2]


# ---------------------------------------------------------------------------
# pairs
# ---------------------------------------------------------------------------

def test_pairs_from_confident_enumeration():
    noisy = np.array([9, 0, 0, 9, 9, 1])
    pairs = build_pairs_from_confident(np.array([1, 2, 5]), noisy)
    assert pairs == {(1, 2)}


def test_pairs_from_confident_empty_and_combinatorics():
    noisy = np.array([0, 0, 0, 0])
    assert build_pairs_from_confident(np.array([], dtype=int), noisy) == set()
    pairs = build_pairs_from_confident(np.array([0, 1, 2, 3]), noisy)
    assert len(pairs) == 6  # C(4, 2)


def test_similar_pairs_strict_threshold_and_full_scan():
    # six points on the circle; similarities fully hand-controllable
    angles = np.array([0.0, 0.05, 0.10, 1.5, 1.55, 3.0])
    z = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    bank = EmbeddingBank(z=z)
    noisy = np.array([0, 0, 0, 1, 1, 0])
    confident_pairs = {(0, 1), (3, 4)}
    sims = z @ z.T
    gamma_expected = sorted([sims[0, 1], sims[3, 4]])[0]  # beta=0 -> minimum
    similar, gamma = select_confident_pairs(bank, noisy, confident_pairs, beta=0.0)
    assert gamma == pytest.approx(gamma_expected)
    expected = {(i, j) for i in range(6) for j in range(i + 1, 6)
                if noisy[i] == noisy[j] and sims[i, j] > gamma}
    assert similar == expected
    for i, j in similar:
        assert sims[i, j] > gamma  # strictly


def test_similar_pairs_empty_confident_degenerates():
    bank = EmbeddingBank(z=unit_rows(np.random.default_rng(7).normal(size=(4, 2))))
    similar, gamma = select_confident_pairs(bank, np.zeros(4, dtype=int), set(), beta=0.5)
    assert similar == set()
    assert math.isinf(gamma)


def test_similar_pairs_monotone_in_beta():
    rng = np.random.default_rng(8)
    z = unit_rows(rng.normal(size=(15, 3)))
    bank = EmbeddingBank(z=z)
    noisy = rng.integers(0, 2, size=15)
    confident = np.flatnonzero(rng.random(15) < 0.6)
    base_pairs = build_pairs_from_confident(confident, noisy)
    sizes = [len(select_confident_pairs(bank, noisy, base_pairs, beta=b)[0])
             for b in (0.0, 0.25, 0.5, 0.75, 1.0)]
    assert sizes == sorted(sizes, reverse=True)  # lower beta keeps more pairs


def test_union_pairs_dedup_and_canonical_form():
    union = union_pairs({(1, 2), (3, 4)}, {(2, 1), (5, 6)})
    assert union == {(1, 2), (3, 4), (5, 6)}
    with pytest.raises(ValueError):
        union_pairs({(2, 2)}, set())


def test_pairs_to_matrix_symmetric():
    mat = pairs_to_matrix({(0, 2)}, 3)
    assert mat[0, 2] and mat[2, 0]
    assert not mat.diagonal().any()
    assert mat.sum() == 2


# ---------------------------------------------------------------------------
# full pipeline vs brute force (reference implementation in tests/oracles.py)
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("trial", range(10))
def test_selection_pipeline_matches_brute_force(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(6, 13))
    classes = int(rng.integers(2, 4))
    z = unit_rows(rng.normal(size=(n, 3)))
    noisy = rng.integers(0, classes, size=n)
    y_hat = np.where(rng.random(n) < 0.5, noisy, rng.integers(0, classes, size=n))
    q_hat = rng.dirichlet(np.ones(classes), size=n)
    alpha = float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]))
    beta = float(rng.choice([0.0, 0.25, 0.5, 1.0]))

    state = run_selection(EmbeddingBank(z=z), noisy,
                          PseudoLabelState(y_hat=y_hat, q_hat=q_hat, k=3),
                          alpha=alpha, beta=beta)
    exp_T, exp_gp, exp_gamma, exp_gpp, exp_g = brute_force_selection(
        z, noisy, y_hat, q_hat, alpha, beta)

    np.testing.assert_array_equal(state.confident, exp_T)
    assert state.pairs_confident == exp_gp
    if math.isinf(exp_gamma):
        assert math.isinf(state.sim_threshold)
    else:
        assert state.sim_threshold == pytest.approx(exp_gamma, abs=1e-12)
    assert state.pairs_similar == exp_gpp
    assert state.pairs == exp_g


def test_selection_state_invariants_on_random_instance():
    rng = np.random.default_rng(42)
    z = unit_rows(rng.normal(size=(20, 4)))
    noisy = rng.integers(0, 3, size=20)
    y_hat = np.where(rng.random(20) < 0.7, noisy, rng.integers(0, 3, size=20))
    q_hat = rng.dirichlet(np.ones(3), size=20)
    state = run_selection(EmbeddingBank(z=z), noisy,
                          PseudoLabelState(y_hat=y_hat, q_hat=q_hat, k=5),
                          alpha=0.5, beta=0.25)
    # class balance: every class holds min(budget, population) members
    for c, members in enumerate(state.confident_by_class):
        population = int(np.sum(noisy == c))
        assert len(members) == min(state.per_class_quota, population)
        assert np.all(noisy[members] == c)
    # pair sets nest in the union; confident pairs live inside the confident set
    assert state.pairs_confident <= state.pairs
    assert state.pairs_similar <= state.pairs
    confident = set(state.confident.tolist())
    for i, j in state.pairs_confident:
        assert i in confident and j in confident and noisy[i] == noisy[j]
    sims = z @ z.T
    for i, j in state.pairs_similar:
        assert noisy[i] == noisy[j] and sims[i, j] > state.sim_threshold

"""Independent reference implementations shared by the test modules.

Everything here deliberately avoids the package's own helpers: plain python
loops, ``sorted()`` and ``math`` only, so the tests compare two genuinely
separate derivations.
"""
import math


def brute_force_selection(z, noisy, y_hat, q_hat, alpha, beta):
    """Reference confident-example / confident-pair selection.

    Returns (confident_indices, same_label_confident_pairs, sim_threshold,
    above_threshold_pairs, union). Conventions mirrored: nearest-rank fractile
    max(1, ceil(f*m - 1e-9)); per-class budget from the alpha-fractile of
    noisy==pseudo agreement counts over all classes; within a class, members
    ranked by cross-entropy of the posterior against the noisy label (ties by
    index); the similarity cut is strictly greater-than.
    """
    n = len(noisy)
    classes = q_hat.shape[1]
    agree = [sum(1 for i in range(n) if y_hat[i] == noisy[i] and noisy[i] == c)
             for c in range(classes)]
    ordered = sorted(agree)
    rank = max(1, math.ceil(alpha * len(ordered) - 1e-9))
    budget = ordered[min(rank, len(ordered)) - 1]

    confident = []
    for c in range(classes):
        members = [i for i in range(n) if noisy[i] == c]
        members.sort(key=lambda i: (-math.log(q_hat[i, noisy[i]] + 1e-12), i))
        confident.extend(members[:budget])
    confident = sorted(confident)

    g_prime = {(i, j) for i in confident for j in confident
               if i < j and noisy[i] == noisy[j]}
    sims = z @ z.T
    if g_prime:
        pair_sims = sorted(sims[i, j] for i, j in g_prime)
        rank = max(1, math.ceil(beta * len(pair_sims) - 1e-9))
        gamma = pair_sims[min(rank, len(pair_sims)) - 1]
        g_second = {(i, j) for i in range(n) for j in range(i + 1, n)
                    if noisy[i] == noisy[j] and sims[i, j] > gamma}
    else:
        gamma, g_second = math.inf, set()
    return confident, g_prime, gamma, g_second, g_prime | g_second

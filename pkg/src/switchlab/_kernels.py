"""Compiled candidate-search loops for the rerandomization designs.

Candidates are balanced splits drawn by a partial Fisher-Yates shuffle from
the caller's generator, so a fixed generator state reproduces the search.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _quad_distance(theta, precision, null_projector, tol):
    d = theta.shape[0]
    norm2 = 0.0
    for a in range(d):
        norm2 += theta[a] * theta[a]
    if norm2 == 0.0:
        return 0.0
    off2 = 0.0
    for a in range(d):
        r = 0.0
        for b in range(d):
            r += null_projector[a, b] * theta[b]
        off2 += r * r
    if off2 > tol * tol * norm2:
        return np.inf
    q = 0.0
    for a in range(d):
        for b in range(d):
            q += theta[a] * precision[a, b] * theta[b]
    return max(q, 0.0)


@njit(cache=True, nogil=True)
def _draw_half(rng, perm, H, theta, signs):
    # Shuffle a uniformly random half of perm to the front and set
    # theta = (2/n) * sum_i s_i H_i with s_i = +1 for treated rows, -1 otherwise.
    # Summing in fixed row order makes the complement give exactly -theta, so
    # complementary candidates tie exactly in the fallback search.
    n, d = H.shape
    half = n // 2
    for j in range(half):
        r = j + int(rng.random() * (n - j))
        if r >= n:
            r = n - 1
        tmp = perm[j]
        perm[j] = perm[r]
        perm[r] = tmp
    for i in range(n):
        signs[i] = -1.0
    for j in range(half):
        signs[perm[j]] = 1.0
    for a in range(d):
        acc = 0.0
        for i in range(n):
            acc += signs[i] * H[i, a]
        theta[a] = (2.0 / n) * acc


@njit(cache=True, nogil=True)
def search_unblocked(rng, H, precision, null_projector, threshold, max_draws, tol):
    """First candidate with distance below ``threshold``, else the closest one.

    Returns ``(treated_rows, distance, draws, fallback)``.
    """
    n, d = H.shape
    half = n // 2
    perm = np.arange(n)
    signs = np.empty(n)
    theta = np.zeros(d)
    best = np.inf
    best_rows = perm[:half].copy()
    for m in range(max_draws):
        _draw_half(rng, perm, H, theta, signs)
        dist = _quad_distance(theta, precision, null_projector, tol)
        if m == 0 or dist < best:
            best = dist
            best_rows[:] = perm[:half]
        if dist < threshold:
            return perm[:half].copy(), dist, m + 1, False
    return best_rows, best, max_draws, True


@njit(cache=True, nogil=True)
def search_blocked(rng, H1, P1, Q1, H0, P0, Q0, threshold, max_draws, tol):
    """Joint within-block search; accept when both block distances are below ``threshold``.

    Returns ``(rows1, rows0, d1, d0, draws, fallback)`` with rows local to each block.
    The fallback keeps the candidate with the smallest ``d1 + d0``.
    """
    n1, d = H1.shape
    n0 = H0.shape[0]
    perm1 = np.arange(n1)
    perm0 = np.arange(n0)
    s1 = np.empty(n1)
    s0 = np.empty(n0)
    th1 = np.zeros(d)
    th0 = np.zeros(d)
    best = np.inf
    best1 = np.inf
    best0 = np.inf
    rows1 = perm1[: n1 // 2].copy()
    rows0 = perm0[: n0 // 2].copy()
    for m in range(max_draws):
        _draw_half(rng, perm1, H1, th1, s1)
        _draw_half(rng, perm0, H0, th0, s0)
        d1 = _quad_distance(th1, P1, Q1, tol)
        d0 = _quad_distance(th0, P0, Q0, tol)
        total = d1 + d0
        if m == 0 or total < best:
            best = total
            best1 = d1
            best0 = d0
            rows1[:] = perm1[: n1 // 2]
            rows0[:] = perm0[: n0 // 2]
        if d1 < threshold and d0 < threshold:
            return perm1[: n1 // 2].copy(), perm0[: n0 // 2].copy(), d1, d0, m + 1, False
    return rows1, rows0, best1, best0, max_draws, True

"""Brute-force assignment-path enumeration for tiny populations."""
import itertools
from collections import defaultdict
from fractions import Fraction

import numpy as np


def balanced_columns(n):
    cols = []
    for rows in itertools.combinations(range(n), n // 2):
        w = np.zeros(n, dtype=np.int8)
        w[list(rows)] = 1
        cols.append(w)
    return cols


def blocked_columns(prev):
    """Columns with half of each previous-assignment group treated."""
    idx1 = np.flatnonzero(prev == 1)
    idx0 = np.flatnonzero(prev == 0)
    cols = []
    for r1 in itertools.combinations(idx1, len(idx1) // 2):
        for r0 in itertools.combinations(idx0, len(idx0) // 2):
            w = np.zeros(len(prev), dtype=np.int8)
            w[list(r1 + r0)] = 1
            cols.append(w)
    return cols


def cr_paths(n, T):
    """Every complete-randomization path with its exact probability."""
    cols = balanced_columns(n)
    p = Fraction(1, len(cols) ** T)
    for combo in itertools.product(cols, repeat=T):
        yield np.column_stack(combo), p


def blocked_cr_paths(n, T):
    """Complete randomization in the first period, blocked complete randomization after."""
    def extend(W, p):
        t = W.shape[1]
        if t == T:
            yield W, p
            return
        cols = balanced_columns(n) if t == 0 else blocked_columns(W[:, t - 1])
        for w in cols:
            yield from extend(np.column_stack([W, w]) if t else w[:, None], p / len(cols))

    yield from extend(np.zeros((n, 0), dtype=np.int8), Fraction(1))


def distribution(values_and_probs, decimals=10):
    """Collapse (value, probability) pairs into a rounded support -> probability map."""
    out = defaultdict(float)
    for v, p in values_and_probs:
        out[round(float(v), decimals)] += float(p)
    return dict(out)


def total_variation(p, q):
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical(values, decimals=10):
    values = np.round(np.asarray(values, dtype=float), decimals)
    support, counts = np.unique(values, return_counts=True)
    return {float(s): c / len(values) for s, c in zip(support, counts)}

"""Slow, direct reimplementations used as test oracles.

Nothing here imports wfbench; every quantity is recomputed from first
principles with itertools and plain integers.
"""
from __future__ import annotations

import itertools
from fractions import Fraction
from math import comb

import numpy as np


def circle_dist(m, a, b):
    return min((a - b) % m, (b - a) % m)


def antipode(m, p):
    return (p + m // 2) % m


def configurations(k, m):
    """All multisets in colex order: sorted tuples ranked by sum C(x_j + j, j + 1)."""
    cfgs = list(itertools.combinations_with_replacement(range(m), k))
    return sorted(cfgs, key=colex_rank)


def colex_rank(cfg):
    return sum(comb(x + j, j + 1) for j, x in enumerate(sorted(cfg)))


def matching(m, x, y):
    return min(
        sum(circle_dist(m, a, b) for a, b in zip(x, perm)) for perm in itertools.permutations(y)
    )


def work_update(k, m, w, r):
    """T_r(w) as a dict over configurations, by exhaustive minimization."""
    cfgs = configurations(k, m)
    return {
        x: min(w[y] + matching(m, x, y) for y in cfgs if r in y) for x in cfgs
    }


def canonical_values(k, m, index_matrix, coef_matrix, nodes):
    """Nested minimization over every assignment of the auxiliary points.

    The loop runs over assignments in Python; each assignment is applied to all
    node rows at once.
    """
    cfgs = configurations(k, m)
    col = {c: i for i, c in enumerate(cfgs)}
    n = len(coef_matrix)
    nodes = np.asarray(nodes, dtype=np.int64)
    best = None
    for a in itertools.product(range(m), repeat=n):
        cols = []
        for row in index_matrix:
            pts = [a[i - 1] if i > 0 else antipode(m, a[-i - 1]) for i in row]
            cols.append(col[tuple(sorted(pts))])
        pen = 0
        for i in range(n):
            for j in range(i + 1, n):
                pen += coef_matrix[i][j] * circle_dist(m, a[i], a[j])
        vals = nodes[:, cols].sum(axis=1) - pen
        best = vals if best is None else np.minimum(best, vals)
    return best


def violation_scan(edges, values, c):
    """Count and l1 norm of shortfalls by a plain loop over (u, v, grad, dopt)."""
    c = Fraction(c)
    count, l1 = 0, Fraction(0)
    for u, v, grad, dopt in edges:
        short = grad - (c + 1) * dopt - (Fraction(int(values[v])) - Fraction(int(values[u])))
        if short > 0:
            count += 1
            l1 += short
    return count, l1

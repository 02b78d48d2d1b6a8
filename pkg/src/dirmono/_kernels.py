# Compiled inner loops shared by the isotonic and heat modules.

import numba
import numpy as np


@numba.njit(cache=True)
def pava_rows(values, weights):
    """Weighted pool-adjacent-violators on every row of a 2-D array."""
    m, n = values.shape
    out = np.empty_like(values)
    level = np.empty(n)
    mass = np.empty(n)
    start = np.empty(n, dtype=np.int64)
    for r in range(m):
        top = -1
        for i in range(n):
            top += 1
            level[top] = values[r, i]
            mass[top] = weights[r, i]
            start[top] = i
            while top > 0 and level[top - 1] >= level[top]:
                w = mass[top - 1] + mass[top]
                level[top - 1] = (mass[top - 1] * level[top - 1] + mass[top] * level[top]) / w
                mass[top - 1] = w
                top -= 1
        for b in range(top + 1):
            stop = start[b + 1] if b < top else n
            for i in range(start[b], stop):
                out[r, i] = level[b]
    return out


@numba.njit(cache=True)
def _weighted_median(vals, wts):
    order = np.argsort(vals)
    total = wts.sum()
    acc = 0.0
    for k in order:
        acc += wts[k]
        if acc >= 0.5 * total:
            return vals[k]
    return vals[order[-1]]


@numba.njit(cache=True)
def pava_median_row(values, weights):
    """Pool-adjacent-violators with weighted-median block levels (L¹ loss)."""
    n = values.size
    out = np.empty_like(values)
    level = np.empty(n)
    start = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        level[top] = values[i]
        start[top] = i
        while top > 0 and level[top - 1] > level[top]:
            top -= 1
            lo = start[top]
            level[top] = _weighted_median(values[lo:i + 1], weights[lo:i + 1])
    for b in range(top + 1):
        stop = start[b + 1] if b < top else n
        for i in range(start[b], stop):
            out[i] = level[b]
    return out

"""Minimum-cost linear assignment (Kuhn-Munkres with row potentials).

Shortest-augmenting-path formulation, O(n^2 m) for an n x m matrix with
n <= m. Wider-than-tall inputs are solved on the transpose.
"""

from __future__ import annotations

import math

import numpy as np


def _solve_rows_le_cols(cost: list[list[float]], n: int, m: int) -> list[int]:
    # 1-based arrays with a virtual column 0, as in the classic formulation
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    match = [0] * (m + 1)  # match[j] = row assigned to column j
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = [math.inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = math.inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - ui0 - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                # strict < keeps the lowest column index on ties
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while True:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = [-1] * n
    for j in range(1, m + 1):
        if match[j]:
            row_to_col[match[j] - 1] = j - 1
    return row_to_col


def hungarian_assign(cost) -> list[tuple[int, int]]:
    """Optimal min-cost assignment of ``min(n, m)`` (row, col) pairs.

    Pairs are returned sorted by row. The solver is deterministic: it scans
    rows and columns in index order and breaks ties toward lower indices.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise ValueError("cost must be a non-empty 2D matrix")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost must be finite")
    n, m = c.shape
    if n <= m:
        r2c = _solve_rows_le_cols(c.tolist(), n, m)
        return [(i, j) for i, j in enumerate(r2c)]
    c2r = _solve_rows_le_cols(c.T.tolist(), m, n)
    return sorted((i, j) for j, i in enumerate(c2r))


def assignment_cost(cost, pairs) -> float:
    c = np.asarray(cost, dtype=float)
    return float(sum(c[i, j] for i, j in pairs))

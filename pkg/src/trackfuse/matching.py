"""Gated minimum-cost assignment shared by association, checks, and pairing."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

# Placeholder for gated-out or non-finite entries. Real costs in this
# package are bounded by a few meters or a DIoU below 2, so this dominates
# any feasible assignment sum.
BIG_COST = 1e9


def min_cost_matching(
    cost, gate: float | None = None
) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Solve a gated rectangular assignment problem.

    Entries above the gate (or non-finite) are excluded from the returned
    matches. Returns (matches, unmatched_rows, unmatched_cols); matches are
    (row, col) pairs sorted by row.
    """
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return [], list(range(n_rows)), list(range(n_cols))
    work = np.where(np.isfinite(cost), cost, BIG_COST)
    if gate is not None:
        work = np.where(work <= gate, work, BIG_COST)
    rows, cols = linear_sum_assignment(work)
    matches = [(int(r), int(c)) for r, c in zip(rows, cols) if work[r, c] < BIG_COST]
    matched_rows = {r for r, _ in matches}
    matched_cols = {c for _, c in matches}
    unmatched_rows = [r for r in range(n_rows) if r not in matched_rows]
    unmatched_cols = [c for c in range(n_cols) if c not in matched_cols]
    return matches, unmatched_rows, unmatched_cols

"""Exact welfare maximisation over the bundle lattice.

Given one value table per bidder (indexed like :func:`core.enumerate_bundles`),
finds a feasible allocation maximising the summed values by a suffix dynamic
programme over remaining supply:

    F_k(s) = max_{x <= s} T_k(x) + F_{k+1}(s - x)

Because bundle indices are a linear mixed-radix code, idx(s - x) equals
idx(s) - idx(x), so each stage is one gather plus a segmented max over the
precomputed (s, x) pairs. Work per bidder is prod_j (c_j+1)(c_j+2)/2.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import (ExactOracleUnavailableError, NoFeasibleQueryError, as_capacities,
                   check_enumerable, enumerate_bundles)

EXACT_WORK_LIMIT = 10**8


def pair_count(caps: Sequence[int]) -> int:
    out = 1
    for c in caps:
        out *= (c + 1) * (c + 2) // 2
    return out


@lru_cache(maxsize=16)
def _pairs(caps: tuple[int, ...]):
    """All (s, x) index pairs with x <= s, grouped by s, x ascending inside a group."""
    s_idx = np.zeros(1, dtype=np.int64)
    x_idx = np.zeros(1, dtype=np.int64)
    for c in caps:
        s1, x1 = np.array([(s, x) for s in range(c + 1) for x in range(s + 1)]).T
        s_idx = (s_idx[:, None] * (c + 1) + s1[None, :]).ravel()
        x_idx = (x_idx[:, None] * (c + 1) + x1[None, :]).ravel()
    order = np.lexsort((x_idx, s_idx))
    s_idx, x_idx = s_idx[order], x_idx[order]
    starts = np.flatnonzero(np.r_[True, s_idx[1:] != s_idx[:-1]])
    for a in (s_idx, x_idx, starts):
        a.setflags(write=False)
    return s_idx, x_idx, starts


def max_welfare(tables: Sequence[np.ndarray | None], caps: Sequence[int],
                tol: float = 1e-9, work_limit: int = EXACT_WORK_LIMIT):
    """Exact welfare-maximising allocation for the given value tables.

    ``tables[i]`` is bidder i's value for every bundle (``-inf`` marks a
    forbidden bundle) or ``None`` when the bidder takes no part; such bidders
    get the empty bundle. Ties within ``tol`` go to the lexicographically
    smallest allocation. Returns ``(allocation, welfare)`` where allocation is
    an ``n x m`` int array.
    """
    caps = as_capacities(caps)
    size = check_enumerable(caps)
    active = [i for i, t in enumerate(tables) if t is not None]
    work = pair_count(caps) * max(1, len(active))
    if work > work_limit:
        raise ExactOracleUnavailableError(
            f"exact welfare maximisation needs {work} steps, above the limit {work_limit}")
    bundles = enumerate_bundles(caps)
    s_idx, x_idx, starts = _pairs(caps)
    d_idx = s_idx - x_idx
    full = size - 1

    # suffix[k] holds F over supplies for the k-th active bidder onwards
    suffix = [np.zeros(size)]
    for i in reversed(active):
        t = np.asarray(tables[i], dtype=float)
        if t.shape != (size,):
            raise ValueError(f"value table of bidder {i} has shape {t.shape}, expected ({size},)")
        vals = t[x_idx] + suffix[-1][d_idx]
        suffix.append(np.maximum.reduceat(vals, starts))
    suffix.reverse()
    best = float(suffix[0][full])
    if not np.isfinite(best):
        raise NoFeasibleQueryError("every feasible allocation uses a forbidden bundle")

    alloc = np.zeros((len(tables), len(caps)), dtype=np.int64)
    welfare = 0.0
    s = full
    for k, i in enumerate(active):
        t = np.asarray(tables[i], dtype=float)
        lo = starts[s]
        hi = starts[s + 1] if s + 1 < len(starts) else len(s_idx)
        xs = x_idx[lo:hi]
        vals = t[xs] + suffix[k + 1][s - xs]
        target = suffix[k][s]
        j = int(np.flatnonzero(vals >= target - tol * max(1.0, abs(target)))[0])
        alloc[i] = bundles[xs[j]]
        welfare += float(t[xs[j]])
        s = int(s - xs[j])
    return alloc, welfare

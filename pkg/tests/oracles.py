"""Slow, obviously-correct reference implementations used only by the tests.

None of these share code with the package beyond plain data types.
"""
import itertools

import numpy as np


def all_bundles(caps):
    return [tuple(b) for b in itertools.product(*(range(c + 1) for c in caps))]


def brute_force_welfare(value_fns, caps):
    """Exhaustive search over all feasible allocations. Returns (best, allocation)."""
    bundles = all_bundles(caps)
    best, best_alloc = -np.inf, None

    def rec(i, remaining, acc, alloc):
        nonlocal best, best_alloc
        if i == len(value_fns):
            if acc > best:
                best, best_alloc = acc, tuple(alloc)
            return
        for b in bundles:
            if all(x <= r for x, r in zip(b, remaining)):
                rec(i + 1, tuple(r - x for r, x in zip(remaining, b)), acc + value_fns[i](b), alloc + [b])

    rec(0, tuple(caps), 0.0, [])
    return best, best_alloc


def inferred(reports_dq, reports_vq, bundle):
    """Inferred value from raw lists [(bundle, prices)] and [(bundle, value)]."""
    bundle = tuple(bundle)
    for b, v in reports_vq:
        if tuple(b) == bundle:
            return float(v)
    pays = [float(np.dot(b, p)) for b, p in reports_dq if tuple(b) == bundle]
    return max(pays, default=0.0)


def brute_force_wdp_value(raw_reports, caps):
    """Best inferred welfare, assigning each bidder the empty bundle or a reported one."""
    m = len(caps)
    options = []
    for dq, vq in raw_reports:
        opts = {(0,) * m} | {tuple(b) for b, _ in dq} | {tuple(b) for b, _ in vq}
        options.append(sorted(opts))
    best = 0.0
    for combo in itertools.product(*options):
        if np.all(np.sum(combo, axis=0) <= caps):
            best = max(best, sum(inferred(dq, vq, b) for (dq, vq), b in zip(raw_reports, combo)))
    return best


def llg_grid_nearest(a, b, c, vcg, step=0.01):
    """Grid-search VCG-nearest point for the local-local-global instance.

    Locals 1 and 2 win single items with values a and b; the global bidder
    bids c for both items and loses. Core: p1 + p2 >= c, p1 <= a, p2 <= b,
    p1, p2 >= 0, p3 = 0. Among core points of minimum revenue, pick the one
    closest to the VCG vector.
    """
    p1 = np.arange(0, a + step / 2, step)
    p2 = np.arange(0, b + step / 2, step)
    P1, P2 = np.meshgrid(p1, p2, indexing="ij")
    ok = P1 + P2 >= c - 1e-9
    rev = np.where(ok, P1 + P2, np.inf)
    rmin = rev.min()
    cand = ok & (rev <= rmin + 1e-9)
    d = np.where(cand, (P1 - vcg[0]) ** 2 + (P2 - vcg[1]) ** 2, np.inf)
    k = np.unravel_index(np.argmin(d), d.shape)
    return np.array([P1[k], P2[k], 0.0])


def numeric_grad(f, arrays, eps=1e-6):
    """Central finite differences of scalar f() w.r.t. every entry of every array."""
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + eps
            hi = f()
            a[idx] = old - eps
            lo = f()
            a[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        out.append(g)
    return out


def owner_scan_welfare(value_fns, m):
    """Optimal welfare for single-copy items by scanning every item-owner vector.

    Owner 0 means unsold, owner i + 1 means bidder i. Vectorised so that
    (n + 1) ** m up to a few million assignments stay cheap.
    """
    n = len(value_fns)
    bundles = list(itertools.product((0, 1), repeat=m))
    tables = np.array([[f(b) for b in bundles] for f in value_fns])
    owners = np.array(list(itertools.product(range(n + 1), repeat=m)), dtype=np.int64)
    place = 2 ** np.arange(m - 1, -1, -1)
    total = np.zeros(len(owners))
    for i in range(n):
        total += tables[i][(owners == i + 1) @ place]
    return float(total.max())

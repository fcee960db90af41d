"""Winner determination, payments and the revealed-preference check.

Report-based winner determination maximises total inferred value. A bidder's
unreported bundles have inferred value 0, so each bidder only ever needs to
be offered her reported bundles plus the empty bundle; the search is a
depth-first branch and bound over those candidate lists.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import (AuctionLabError, BidderReports, DemandReport, ExactOracleUnavailableError,
                   InvalidInputError, NoFeasibleQueryError, ValueReport, as_bundle, as_capacities,
                   bundle_index, enumerate_bundles)
from .lattice import max_welfare

WDP_NODE_LIMIT = 10**8
TOL = 1e-9
MAX_CORE_BIDDERS = 12


class WdpTooLargeError(ExactOracleUnavailableError):
    pass


def _candidates(reports: BidderReports, m: int):
    """Reported bundles with positive inferred value, lexicographic, after the empty bundle."""
    vals = reports.inferred_values
    zero = (0,) * m
    out = [(zero, vals.get(zero, 0.0))]
    out += sorted((b, v) for b, v in vals.items() if b != zero and v > 0)
    return out


def solve_wdp(reports: Sequence[BidderReports], caps, economy: Iterable[int] | None = None,
              node_limit: int = WDP_NODE_LIMIT):
    """Feasible allocation maximising total inferred value.

    Bidders outside ``economy`` receive the empty bundle. Ties within 1e-9 go
    to the lexicographically smallest allocation. Returns ``(allocation, scw)``.
    """
    caps = as_capacities(caps)
    m = len(caps)
    n = len(reports)
    for i, r in enumerate(reports):
        if r.m is not None and r.m != m:
            raise InvalidInputError(f"bidder {i} reports have {r.m} items, market has {m}")
    members = sorted(set(range(n)) if economy is None else set(economy))
    cands = [_candidates(reports[i], m) for i in members]
    arrays = [(np.array([b for b, _ in c], dtype=np.int64), np.array([v for _, v in c])) for c in cands]
    # optimistic completion: best candidate of each remaining bidder
    tail = np.zeros(len(members) + 1)
    for k in range(len(members) - 1, -1, -1):
        tail[k] = tail[k + 1] + arrays[k][1].max()

    best_val = -np.inf
    best_pick: list[int] | None = None
    pick = [0] * len(members)
    nodes = 0

    def dfs(k: int, remaining: np.ndarray, acc: float):
        nonlocal best_val, best_pick, nodes
        nodes += 1
        if nodes > node_limit:
            raise WdpTooLargeError(f"winner determination exceeded {node_limit} search nodes")
        if k == len(members):
            if acc > best_val + TOL:
                best_val, best_pick = acc, list(pick)
            return
        if acc + tail[k] <= best_val + TOL:
            return
        bundles, vals = arrays[k]
        fits = np.all(bundles <= remaining, axis=1)
        for j in np.flatnonzero(fits):
            if acc + vals[j] + tail[k + 1] <= best_val + TOL:
                continue
            pick[k] = int(j)
            dfs(k + 1, remaining - bundles[j], acc + float(vals[j]))

    dfs(0, np.asarray(caps, dtype=np.int64), 0.0)
    alloc = [(0,) * m for _ in range(n)]
    for k, i in enumerate(members):
        alloc[i] = tuple(int(v) for v in arrays[k][0][best_pick[k]])
    return tuple(alloc), float(best_val)


def inferred_scw(reports: Sequence[BidderReports], allocation) -> float:
    return float(sum(r.inferred_value(b) for r, b in zip(reports, allocation)))


@dataclass(frozen=True)
class MlWdpResult:
    allocation: tuple[tuple[int, ...], ...]
    value: float
    approximate: bool


def _local_search(tables, caps, rng, restarts: int):
    """Seeded multi-restart best-response ascent; used only beyond the exact limit."""
    bundles = enumerate_bundles(caps)
    c = np.asarray(caps)
    active = [i for i, t in enumerate(tables) if t is not None]
    best = None
    for _ in range(restarts):
        pick = {i: 0 for i in active}
        if not all(np.isfinite(tables[i][0]) for i in active):
            # start from any allowed bundle that fits alone
            for i in active:
                ok = np.flatnonzero(np.isfinite(tables[i]))
                if len(ok) == 0:
                    raise NoFeasibleQueryError(f"every bundle is excluded for bidder {i}")
                pick[i] = int(ok[0])
        improved = True
        while improved:
            improved = False
            for i in rng.permutation(active):
                used = sum(bundles[pick[k]] for k in active if k != i)
                fits = np.all(bundles <= c - used, axis=1)
                vals = np.where(fits, tables[i], -np.inf)
                j = int(np.argmax(vals))
                if vals[j] > tables[i][pick[i]] + TOL:
                    pick[i], improved = j, True
        total = sum(tables[i][pick[i]] for i in active)
        used = sum((bundles[pick[i]] for i in active), np.zeros(len(caps), dtype=np.int64))
        if np.all(used <= c) and np.isfinite(total) and (best is None or total > best[0]):
            best = (float(total), dict(pick))
    if best is None:
        raise NoFeasibleQueryError("local search found no feasible allocation")
    alloc = np.zeros((len(tables), len(caps)), dtype=np.int64)
    for i, j in best[1].items():
        alloc[i] = bundles[j]
    return alloc, best[0]


def solve_ml_wdp(models, caps, excluded: Sequence[Iterable] | None = None,
                 economy: Iterable[int] | None = None, seed: int = 0,
                 restarts: int = 20) -> MlWdpResult:
    """Allocation maximising summed model values, with per-bidder forbidden bundles.

    Exact via the lattice programme when it fits the work limit, otherwise a
    seeded local search flagged as approximate.
    """
    caps = as_capacities(caps)
    n = len(models)
    members = set(range(n)) if economy is None else set(economy)
    tables: list[np.ndarray | None] = []
    for i, mdl in enumerate(models):
        if i not in members:
            tables.append(None)
            continue
        t = np.array(mdl.table, dtype=float)
        for b in (excluded[i] if excluded is not None else ()):
            t[bundle_index(as_bundle(b, caps), caps)] = -np.inf
        if not np.isfinite(t).any():
            raise NoFeasibleQueryError(f"every bundle is excluded for bidder {i}")
        tables.append(t)
    try:
        alloc, val = max_welfare(tables, caps)
        approx = False
    except ExactOracleUnavailableError:
        alloc, val = _local_search(tables, caps, np.random.default_rng(seed), restarts)
        approx = True
    return MlWdpResult(tuple(tuple(int(v) for v in b) for b in alloc), float(val), approx)


def vcg_payments(reports: Sequence[BidderReports], caps, allocation=None) -> np.ndarray:
    """VCG payments computed from reports (inferred values).

    ``allocation`` defaults to the report-based winner determination; the
    mechanisms pass a clearing allocation when they stop early.
    """
    n = len(reports)
    if allocation is None:
        allocation, _ = solve_wdp(reports, caps)
    own = np.array([r.inferred_value(b) for r, b in zip(reports, allocation)])
    total = own.sum()
    pay = np.zeros(n)
    for i in range(n):
        if n == 1:
            break
        _, marginal = solve_wdp(reports, caps, economy=[k for k in range(n) if k != i])
        pay[i] = marginal - (total - own[i])
    # floating noise only; payments are non-negative by construction
    pay[np.abs(pay) < TOL] = 0.0
    return np.maximum(pay, 0.0)


@dataclass(frozen=True)
class CoreConstraint:
    """``sum of payments of bidders outside coalition  (sense)  rhs``.

    Core constraints use ``>=``. Individual-rationality bounds are expressed
    with singleton payers: coalition N minus {i} and sense ``<=`` (upper) or
    ``>=`` with rhs 0 (lower).
    """

    coalition: frozenset
    rhs: float
    sense: str = ">="

    def payers(self, n: int) -> list[int]:
        return [i for i in range(n) if i not in self.coalition]

    def satisfied(self, pay: np.ndarray, tol: float = 1e-8) -> bool:
        lhs = float(sum(pay[i] for i in self.payers(len(pay))))
        return lhs >= self.rhs - tol if self.sense == ">=" else lhs <= self.rhs + tol


def core_rhs(reports, allocation, caps, coalition: Iterable[int]) -> float:
    members = sorted(set(coalition))
    if not members:
        return 0.0
    _, best = solve_wdp(reports, caps, economy=members)
    return best - float(sum(reports[i].inferred_value(allocation[i]) for i in members))


def core_constraints(reports: Sequence[BidderReports], allocation, caps) -> list[CoreConstraint]:
    """Revealed-core constraints for every non-empty proper coalition, then IR bounds."""
    n = len(reports)
    if n > MAX_CORE_BIDDERS:
        raise InvalidInputError(f"core enumeration supports at most {MAX_CORE_BIDDERS} bidders, got {n}")
    out = []
    everyone = frozenset(range(n))
    for size in range(1, n):
        for L in itertools.combinations(range(n), size):
            out.append(CoreConstraint(frozenset(L), core_rhs(reports, allocation, caps, L)))
    for i in range(n):
        others = everyone - {i}
        out.append(CoreConstraint(others, 0.0, ">="))
        out.append(CoreConstraint(others, reports[i].inferred_value(allocation[i]), "<="))
    return out


def _as_inequalities(cons: Sequence[CoreConstraint], n: int):
    """Rewrite as A x >= b."""
    A = np.zeros((len(cons), n))
    b = np.zeros(len(cons))
    for k, con in enumerate(cons):
        row = np.zeros(n)
        row[con.payers(n)] = 1.0
        if con.sense == ">=":
            A[k], b[k] = row, con.rhs
        else:
            A[k], b[k] = -row, -con.rhs
    return A, b


def nearest_point_qp(target: np.ndarray, A: np.ndarray, b: np.ndarray, E: np.ndarray,
                     e: np.ndarray, x0: np.ndarray, tol: float = 1e-10, max_iter: int = 500):
    """min 0.5 ||x - target||^2  s.t.  A x >= b,  E x = e, by a primal active-set method.

    ``x0`` must be feasible. Returns the minimiser.
    """
    x = np.array(x0, dtype=float)
    slack = A @ x - b
    work: list[int] = []
    for k in np.flatnonzero(np.abs(slack) <= 1e-9):
        trial = np.vstack([E, A[work + [k]]])
        if np.linalg.matrix_rank(trial) == trial.shape[0]:
            work.append(int(k))
    for _ in range(max_iter):
        P = np.vstack([E, A[work]]) if len(work) or len(E) else np.zeros((0, len(x)))
        g = x - target
        if P.shape[0]:
            lam, *_ = np.linalg.lstsq(P.T, g, rcond=None)
            d = -(g - P.T @ lam)
        else:
            lam = np.zeros(0)
            d = -g
        if np.linalg.norm(d) <= tol * max(1.0, np.linalg.norm(x)):
            mult = lam[len(E):]
            if len(mult) == 0 or mult.min() >= -tol:
                return x
            work.pop(int(np.argmin(mult)))
            continue
        alpha, block = 1.0, None
        ad = A @ d
        for k in range(len(b)):
            if k in work or ad[k] >= -1e-14:
                continue
            step = (b[k] - A[k] @ x) / ad[k]
            if step < alpha:
                alpha, block = max(step, 0.0), k
        x = x + alpha * d
        if block is not None:
            work.append(block)
    raise AuctionLabError("active-set iteration did not converge")


def vcg_nearest_payments(reports: Sequence[BidderReports], caps, allocation=None) -> np.ndarray:
    """Minimum-revenue revealed-core payments closest (L2) to VCG."""
    n = len(reports)
    if allocation is None:
        allocation, _ = solve_wdp(reports, caps)
    vcg = vcg_payments(reports, caps, allocation)
    cons = core_constraints(reports, allocation, caps)
    A, b = _as_inequalities(cons, n)
    lp = linprog(np.ones(n), A_ub=-A, b_ub=-b, bounds=[(None, None)] * n, method="highs")
    if lp.status != 0:
        raise AuctionLabError(f"revealed core is empty or the LP failed: {lp.message}")
    revenue = float(lp.fun)
    x0 = np.asarray(lp.x, dtype=float)
    E = np.ones((1, n))
    pay = nearest_point_qp(vcg, A, b, E, np.array([revenue]), x0)
    pay[np.abs(pay) < 1e-12] = 0.0
    return pay


PAYMENT_RULES = ("vcg", "vcg-nearest", "zero")


def compute_payments(rule: str, reports, caps, allocation=None) -> np.ndarray:
    if rule == "vcg":
        return vcg_payments(reports, caps, allocation)
    if rule == "vcg-nearest":
        return vcg_nearest_payments(reports, caps, allocation)
    if rule == "zero":
        return np.zeros(len(reports))
    raise InvalidInputError(f"unknown payment rule {rule!r}; use vcg, vcg-nearest or zero")


def check_revealed_preference(bid: ValueReport, clock: Sequence[DemandReport],
                              final_bids: Mapping, mode: str = "final-cap") -> bool:
    """Does ``bid`` respect b(x) <= b(x_r) + <p_r, x - x_r> for the selected clock rounds?"""
    if mode not in ("final-cap", "all-rounds"):
        raise InvalidInputError("mode must be 'final-cap' or 'all-rounds'")
    if not clock:
        return True
    bids = {tuple(int(v) for v in k): float(v) for k, v in final_bids.items()}
    rounds = clock[-1:] if mode == "final-cap" else clock
    x = np.asarray(bid.bundle)
    for r in rounds:
        if r.bundle not in bids:
            raise InvalidInputError(f"no final bid for clock bundle {r.bundle}")
        cap = bids[r.bundle] + float(np.dot(r.prices, x - np.asarray(r.bundle)))
        if bid.value > cap + TOL:
            return False
    return True

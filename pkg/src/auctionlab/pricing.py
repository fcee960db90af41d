"""Demand-query generation.

Two price rules are provided: the clock rule, which raises over-demanded
prices by a fixed percentage, and a model-based rule that minimises

    W(p) = sum_j c_j p_j + sum_i max_x [M_i(x) - <p, x>]

by projected subgradient descent. W is convex and c - sum_i x_hat_i(p) is a
subgradient, so its minimisers are the prices with the best chance of
clearing the market under the models M_i. Over-demanded prices move
(1 + mu) times faster than under-demanded ones.

"Models" are anything exposing ``caps`` and a value ``table`` over
:func:`core.enumerate_bundles`: true-value oracles or trained networks.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import InvalidInputError, as_capacities, as_prices, enumerate_bundles

UTILITY_TIE_TOL = 1e-12


@dataclass(frozen=True)
class PriceEngineConfig:
    initial_fraction: float = 0.05
    cca_increment: float = 0.05
    gamma: float | None = None
    gamma_fraction: float = 0.01
    mu: float = 0.5
    steps: int = 200

    def __post_init__(self):
        if self.cca_increment <= 0:
            raise InvalidInputError("cca_increment must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise InvalidInputError("gamma must be positive")
        if self.gamma_fraction <= 0 or self.initial_fraction <= 0:
            raise InvalidInputError("gamma_fraction and initial_fraction must be positive")
        if self.mu < 0:
            raise InvalidInputError("mu must be >= 0")
        if self.steps < 1:
            raise InvalidInputError("steps must be >= 1")


def cca_next_price(p, demands: Sequence[Sequence[int]], caps, increment: float = 0.05) -> tuple[float, ...]:
    """Raise the price of every over-demanded item by ``increment`` (relative)."""
    caps = as_capacities(caps)
    prices = np.asarray(as_prices(p, len(caps)))
    total = np.asarray(demands, dtype=np.int64).reshape(-1, len(caps)).sum(axis=0)
    out = np.where(total > np.asarray(caps), prices * (1 + increment), prices)
    return tuple(float(v) for v in out)


def is_clearing(demands: Sequence[Sequence[int]], caps) -> bool:
    caps = as_capacities(caps)
    total = np.asarray(demands, dtype=np.int64).reshape(-1, len(caps)).sum(axis=0)
    return bool(np.array_equal(total, np.asarray(caps)))


def _tables(models) -> np.ndarray:
    return np.stack([np.asarray(mdl.table, dtype=float) for mdl in models])


def _demands(tables: np.ndarray, bundles: np.ndarray, p: np.ndarray):
    """Per-model utility maximiser (row indices, lexicographic ties) and max utility."""
    u = tables - (bundles @ p)[None, :]
    best = u.max(axis=1)
    idx = np.argmax(u >= best[:, None] - UTILITY_TIE_TOL, axis=1)
    return idx, best


def indirect_utility(model, p) -> float:
    caps = as_capacities(model.caps)
    bundles = enumerate_bundles(caps)
    prices = np.asarray(as_prices(p, len(caps)))
    return float(np.max(np.asarray(model.table) - bundles @ prices))


def w_objective(models, p, caps) -> float:
    caps = as_capacities(caps)
    prices = np.asarray(as_prices(p, len(caps)))
    return float(np.dot(caps, prices) + sum(indirect_utility(mdl, prices) for mdl in models))


def predicted_demands(models, p) -> np.ndarray:
    """``n x m`` array of each model's utility-maximising bundle at ``p``."""
    caps = as_capacities(models[0].caps)
    bundles = enumerate_bundles(caps)
    idx, _ = _demands(_tables(models), bundles, np.asarray(as_prices(p, len(caps))))
    return bundles[idx]


def w_subgradient(models, p, caps) -> np.ndarray:
    caps = as_capacities(caps)
    return np.asarray(caps, dtype=float) - predicted_demands(models, p).sum(axis=0)


def default_gamma(models, cfg: PriceEngineConfig) -> float:
    """Step size as a fraction of the mean predicted value of a single copy of an item."""
    if cfg.gamma is not None:
        return cfg.gamma
    caps = as_capacities(models[0].caps)
    bundles = enumerate_bundles(caps)
    singles = np.flatnonzero(bundles.sum(axis=1) == 1)
    mean_item = float(np.mean(_tables(models)[:, singles])) if len(singles) else 0.0
    return cfg.gamma_fraction * mean_item if mean_item > 0 else 1e-3


@dataclass(frozen=True)
class DescentStep:
    step: int
    prices: tuple[float, ...]
    w: float
    over_demand: tuple[int, ...]


def ml_next_price(models, p_start, cfg: PriceEngineConfig = PriceEngineConfig()):
    """Asymmetric projected subgradient descent on W from ``p_start``.

    Returns ``(prices, trace)``. The returned prices are the visited point with
    the smallest W among those where predicted demand is feasible, or the
    smallest W overall if no visited point is feasible. Exact ties in W go to
    the later point.
    """
    caps = as_capacities(models[0].caps)
    c = np.asarray(caps, dtype=float)
    bundles = enumerate_bundles(caps)
    tables = _tables(models)
    gamma = default_gamma(models, cfg)
    p = np.asarray(as_prices(p_start, len(caps)), dtype=float)

    trace: list[DescentStep] = []
    best_feasible: tuple[float, np.ndarray] | None = None
    best_any: tuple[float, np.ndarray] | None = None
    for step in range(cfg.steps + 1):
        idx, util = _demands(tables, bundles, p)
        demand = bundles[idx].sum(axis=0)
        w = float(c @ p + util.sum())
        over = demand > c
        trace.append(DescentStep(step, tuple(float(v) for v in p), w,
                                 tuple(int(v) for v in np.maximum(demand - c, 0))))
        if best_any is None or w <= best_any[0]:
            best_any = (w, p.copy())
        if not over.any() and (best_feasible is None or w <= best_feasible[0]):
            best_feasible = (w, p.copy())
        if step == cfg.steps:
            break
        g = c - demand
        if not g.any():
            break
        step_size = np.where(over, gamma * (1 + cfg.mu), gamma)
        p = np.maximum(0.0, p - step_size * g)
    chosen = best_feasible if best_feasible is not None else best_any
    return tuple(float(v) for v in chosen[1]), trace


def write_descent_csv(trace: Sequence[DescentStep], path) -> None:
    m = len(trace[0].prices) if trace else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step"] + [f"p_{j + 1}" for j in range(m)] + ["W"]
                    + [f"over_demand_{j + 1}" for j in range(m)])
        for s in trace:
            wr.writerow([s.step, *[repr(v) for v in s.prices], repr(s.w), *s.over_demand])


def initial_prices(oracles, fraction: float = 0.05) -> tuple[float, ...]:
    """Starting clock prices: ``fraction`` of the mean value of one copy of each item."""
    caps = as_capacities(oracles[0].caps)
    m = len(caps)
    vals = np.zeros(m)
    for j in range(m):
        e = tuple(int(k == j) for k in range(m))
        vals[j] = np.mean([o(e) for o in oracles])
    return tuple(float(v) for v in fraction * vals)

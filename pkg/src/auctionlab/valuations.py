"""True-value oracles, auction instances and the exact efficiency oracle.

Three oracle kinds exist:

* ``table``: an explicit value for every bundle, lexicographic order.
* ``additive-synergy``: per-item values plus non-negative pairwise synergies
  ``S_jk * min(x_j, x_k)`` and an optional size bonus ``beta * s(s-1)/2`` where
  ``s`` is the number of items held. Every term is non-decreasing, so the
  oracle is monotone with v(0) = 0 by construction.
* ``scripted-closed-form``: a named closed-form rule, used for the hand-built
  pathological instances.

Instances P1 to P5 reproduce small markets in which demand queries alone go
wrong in specific ways (see :func:`make_pathological`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Sequence

import numpy as np

from .core import (InvalidInputError, as_bundle, as_capacities, as_prices, argmax_first,
                   enumerate_bundles, bundle_index, check_enumerable)
from .lattice import max_welfare

UTILITY_TIE_TOL = 1e-12


class ValueOracle:
    """A bidder's true value function over the bundle space of ``caps``."""

    kind = "abstract"

    def __init__(self, caps: Sequence[int]):
        self.caps = as_capacities(caps)

    @property
    def m(self) -> int:
        return len(self.caps)

    def values(self, bundles: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def payload(self) -> dict:
        raise NotImplementedError

    @cached_property
    def table(self) -> np.ndarray:
        """Values of all bundles in lexicographic order (read-only)."""
        t = np.asarray(self.values(enumerate_bundles(self.caps)), dtype=float)
        t.setflags(write=False)
        return t

    def __call__(self, x) -> float:
        return true_value(self, x)

    def to_json(self) -> dict:
        return {"kind": self.kind, "payload": self.payload()}

    def __repr__(self):
        return f"{type(self).__name__}(caps={self.caps})"


class TableOracle(ValueOracle):
    kind = "table"

    def __init__(self, caps: Sequence[int], values: Sequence[float]):
        super().__init__(caps)
        v = np.array(values, dtype=float).ravel()
        size = check_enumerable(self.caps)
        if v.shape != (size,):
            raise InvalidInputError(f"value table needs {size} entries, got {v.size}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvalidInputError("table values must be finite and non-negative")
        if v[0] != 0:
            raise InvalidInputError("value of the empty bundle must be 0")
        v.setflags(write=False)
        self._values = v

    def values(self, bundles):
        return self._values[bundle_index(np.asarray(bundles), self.caps)]

    @cached_property
    def table(self):
        return self._values

    def payload(self):
        return {"caps": list(self.caps), "values": self._values.tolist()}


class AdditiveSynergyOracle(ValueOracle):
    kind = "additive-synergy"

    def __init__(self, caps, base, synergy=None, size_bonus: float = 0.0):
        super().__init__(caps)
        self.base = np.array(base, dtype=float).ravel()
        m = self.m
        if self.base.shape != (m,):
            raise InvalidInputError(f"base values need {m} entries, got {self.base.size}")
        s = np.zeros((m, m)) if synergy is None else np.array(synergy, dtype=float)
        if s.shape != (m, m):
            raise InvalidInputError(f"synergy matrix must be {m}x{m}, got {s.shape}")
        self.synergy = np.triu(s, k=1)
        self.size_bonus = float(size_bonus)
        if np.any(self.base < 0) or np.any(self.synergy < 0) or self.size_bonus < 0:
            raise InvalidInputError("base values, synergies and size bonus must be >= 0")

    def values(self, bundles):
        x = np.asarray(bundles, dtype=float)
        out = x @ self.base
        js, ks = np.nonzero(self.synergy)
        if len(js):
            out = out + np.minimum(x[..., js], x[..., ks]) @ self.synergy[js, ks]
        if self.size_bonus:
            s = x.sum(axis=-1)
            out = out + self.size_bonus * s * (s - 1) / 2
        return out

    def payload(self):
        return {"caps": list(self.caps), "base": self.base.tolist(),
                "synergy": self.synergy.tolist(), "size_bonus": self.size_bonus}


def _rule_any_item(x, caps, value):
    return value * (x.sum(axis=-1) >= 1)


def _rule_quadratic(x, caps, linear, quadratic):
    s = x.sum(axis=-1)
    return linear * s + quadratic * s * s


def _rule_max_indicator(x, caps, weights):
    w = np.asarray(weights, dtype=float)
    return np.max((x >= 1) * w, axis=-1)


def _rule_full_bundle(x, caps, value):
    return value * np.all(x == np.asarray(caps), axis=-1)


CLOSED_FORM_RULES: dict[str, Callable[..., np.ndarray]] = {
    # value * 1{x != 0}
    "any-item": _rule_any_item,
    # linear * s + quadratic * s^2, s = number of items held
    "quadratic": _rule_quadratic,
    # max_j weights_j * 1{x_j >= 1}
    "max-indicator": _rule_max_indicator,
    # value * 1{x = caps}
    "full-bundle": _rule_full_bundle,
}


class ClosedFormOracle(ValueOracle):
    kind = "scripted-closed-form"

    def __init__(self, caps, rule: str, **params):
        super().__init__(caps)
        if rule not in CLOSED_FORM_RULES:
            raise InvalidInputError(
                f"unknown closed-form rule {rule!r}; known: {sorted(CLOSED_FORM_RULES)}")
        if rule == "max-indicator" and len(params.get("weights", ())) != self.m:
            raise InvalidInputError("max-indicator needs one weight per item")
        if rule == "quadratic" and (params["linear"] < 0 or params["quadratic"] < 0):
            raise InvalidInputError("quadratic rule needs non-negative coefficients")
        self.rule = rule
        self.params = params

    def values(self, bundles):
        x = np.asarray(bundles, dtype=float)
        return np.asarray(CLOSED_FORM_RULES[self.rule](x, self.caps, **self.params), dtype=float)

    def payload(self):
        return {"caps": list(self.caps), "rule": self.rule, "params": self.params}


def oracle_from_json(doc: dict) -> ValueOracle:
    kind, p = doc.get("kind"), doc.get("payload")
    if not isinstance(p, dict) or "caps" not in p:
        raise InvalidInputError("oracle payload must be an object with 'caps'")
    if kind == "table":
        return TableOracle(p["caps"], p["values"])
    if kind == "additive-synergy":
        return AdditiveSynergyOracle(p["caps"], p["base"], p.get("synergy"), p.get("size_bonus", 0.0))
    if kind == "scripted-closed-form":
        return ClosedFormOracle(p["caps"], p["rule"], **p.get("params", {}))
    raise InvalidInputError(f"unknown oracle kind {kind!r}")


def true_value(oracle: ValueOracle, x) -> float:
    b = as_bundle(x, oracle.caps)
    return float(oracle.table[bundle_index(b, oracle.caps)])


def utility_max_bundle(oracle, p) -> tuple[int, ...]:
    """Utility-maximising bundle at linear prices ``p``, lexicographic ties.

    ``oracle`` may be anything with a ``table`` and ``caps`` (oracles, or the
    wrappers around trained networks used by the pricing module).
    """
    prices = np.asarray(as_prices(p, len(oracle.caps)))
    bundles = enumerate_bundles(oracle.caps)
    u = oracle.table - bundles @ prices
    return tuple(int(v) for v in bundles[argmax_first(u, UTILITY_TIE_TOL)])


@dataclass(frozen=True)
class Instance:
    """Capacities, one true-value oracle per bidder, and an optional script.

    ``script`` carries forced query sequences for the pathological instances:
    ``cca_prices`` (list of price vectors) and ``vq_rounds`` (list of rounds,
    each a list with one bundle or ``None`` per bidder).
    """

    caps: tuple[int, ...]
    oracles: tuple[ValueOracle, ...]
    label: str = ""
    script: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "caps", as_capacities(self.caps))
        object.__setattr__(self, "oracles", tuple(self.oracles))
        if len(self.oracles) < 1:
            raise InvalidInputError("an instance needs at least one bidder")
        for i, o in enumerate(self.oracles):
            if o.caps != self.caps:
                raise InvalidInputError(
                    f"bidder {i} oracle has capacities {o.caps}, instance has {self.caps}")

    @property
    def n(self) -> int:
        return len(self.oracles)

    @property
    def m(self) -> int:
        return len(self.caps)

    def value(self, i: int, x) -> float:
        return true_value(self.oracles[i], x)

    def scw(self, allocation) -> float:
        """True social welfare of an allocation."""
        return float(sum(self.value(i, b) for i, b in enumerate(allocation)))

    def demand(self, i: int, p) -> tuple[int, ...]:
        return utility_max_bundle(self.oracles[i], p)

    @cached_property
    def optimum(self):
        alloc, w = max_welfare([o.table for o in self.oracles], self.caps)
        return tuple(tuple(int(v) for v in b) for b in alloc), w

    def to_json(self) -> dict:
        doc: dict[str, Any] = {"label": self.label, "capacities": list(self.caps),
                               "bidders": [o.to_json() for o in self.oracles]}
        if self.script is not None:
            doc["script"] = self.script
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def instance_from_json(doc: dict) -> Instance:
    for key in ("capacities", "bidders"):
        if key not in doc:
            raise InvalidInputError(f"instance document is missing field '{key}'")
    return Instance(tuple(doc["capacities"]), tuple(oracle_from_json(b) for b in doc["bidders"]),
                    doc.get("label", ""), doc.get("script"))


def efficient_allocation(inst: Instance):
    """Exact welfare-maximising allocation and its social welfare."""
    return inst.optimum


@dataclass(frozen=True)
class ToyDomainParams:
    """Synthetic stand-in for a spectrum-style domain.

    Per-item base values are ``U(base_low, base_high)`` for items the bidder is
    interested in (each with probability ``interest``) and 0 otherwise. Each
    pair of items of interest gets a synergy ``U(syn_low, syn_high)`` with
    probability ``synergy_density``. With ``national`` set, bidder 0 values
    all items and receives a size bonus ``national_bonus`` per held pair.
    """

    n: int = 4
    m: int = 8
    cap_low: int = 1
    cap_high: int = 1
    base_low: float = 1.0
    base_high: float = 10.0
    interest: float = 0.75
    synergy_density: float = 0.3
    syn_low: float = 0.0
    syn_high: float = 5.0
    national: bool = False
    national_bonus: float = 0.5

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise InvalidInputError("n and m must be >= 1")
        if not 1 <= self.cap_low <= self.cap_high:
            raise InvalidInputError("capacity range must satisfy 1 <= cap_low <= cap_high")
        for name in ("base_low", "base_high", "syn_low", "syn_high", "national_bonus"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")
        if self.base_low > self.base_high or self.syn_low > self.syn_high:
            raise InvalidInputError("lower bounds must not exceed upper bounds")
        for name in ("synergy_density", "interest"):
            if not 0 <= getattr(self, name) <= 1:
                raise InvalidInputError(f"{name} must lie in [0, 1]")


def sample_toy_instance(params: ToyDomainParams, seed: int) -> Instance:
    rng = np.random.default_rng(seed)
    caps = tuple(int(c) for c in rng.integers(params.cap_low, params.cap_high + 1, size=params.m))
    check_enumerable(caps)
    m = params.m
    oracles = []
    for i in range(params.n):
        national = params.national and i == 0
        keen = np.ones(m, bool) if national else rng.random(m) < params.interest
        base = np.where(keen, rng.uniform(params.base_low, params.base_high, m), 0.0)
        mask = np.triu(rng.random((m, m)) < params.synergy_density, 1) & np.outer(keen, keen)
        synergy = np.where(mask, rng.uniform(params.syn_low, params.syn_high, (m, m)), 0.0)
        bonus = params.national_bonus if national else 0.0
        oracles.append(AdditiveSynergyOracle(caps, base, synergy, bonus))
    return Instance(caps, tuple(oracles), f"toy-n{params.n}-m{m}-seed{seed}")


P4_DEFAULTS = {"m": 12, "eps": 0.01, "V": 1000.0}
P5_EPS = 0.1


def make_pathological(name: str, **kwargs) -> Instance:
    """Hand-built instances on which demand-query auctions misbehave.

    P1: one item with 10 copies. Bidder 1 wants a single copy (value 100),
        bidder 2 has v(x) = 9x + x^2/25. No price makes bidder 2 demand 9
        copies, so no set of demand queries finds the optimum.
        ``script.cca_prices`` is the price grid 0.00, 0.01, ..., 12.00.
    P2: two unit items where a third demand query (401, 1) moves the
        report-based winner determination from the optimum to a 0.775%
        efficient allocation. ``script.cca_prices`` has the first two queries,
        ``script.extra_prices`` the harmful third.
    P3: P2's first two queries followed by the value queries v1(0,1), v2(1,0)
        which, without a bridge bid, cause the same collapse.
    P4: m unit items, bidder 1 has eps for any non-empty bundle, bidder 2 has V
        for the full bundle only. Keyword arguments m, eps, V.
    P5: P1 with a handful of informative demand queries followed by a single
        forced value query for v2(9).
    """
    name = name.upper()
    if name == "P1":
        caps = (10,)
        oracles = (ClosedFormOracle(caps, "any-item", value=100.0),
                   ClosedFormOracle(caps, "quadratic", linear=9.0, quadratic=1 / 25))
        grid = [[round(k * 0.01, 2)] for k in range(1201)]
        return Instance(caps, oracles, "P1", {"cca_prices": grid})
    if name in ("P2", "P3"):
        caps = (1, 1)
        oracles = (ClosedFormOracle(caps, "max-indicator", weights=[400.0, 2.0]),
                   ClosedFormOracle(caps, "max-indicator", weights=[1.1, 0.0]))
        script: dict = {"cca_prices": [[1.0, 1.0], [1.2, 1.0]]}
        if name == "P2":
            script["extra_prices"] = [[401.0, 1.0]]
        else:
            script["vq_rounds"] = [[[0, 1], [1, 0]]]
        return Instance(caps, oracles, name, script)
    if name == "P4":
        cfg = {**P4_DEFAULTS, **kwargs}
        caps = (1,) * int(cfg["m"])
        oracles = (ClosedFormOracle(caps, "any-item", value=float(cfg["eps"])),
                   ClosedFormOracle(caps, "full-bundle", value=float(cfg["V"])))
        return Instance(caps, oracles, f"P4-m{int(cfg['m'])}")
    if name == "P5":
        base = make_pathological("P1")
        e = P5_EPS
        prices = [[e], [100 - e], [100 + e], [(94 - e) / 10], [(94 + e) / 10]]
        return Instance(base.caps, base.oracles, "P5",
                        {"cca_prices": prices, "vq_rounds": [[None, [9]]]})
    raise InvalidInputError(f"unknown pathological instance {name!r}; use P1..P5")

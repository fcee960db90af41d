"""Auction mechanisms: the hybrid auction, the clock auction, its ML variant
and a random value-query baseline.

The hybrid auction runs four phases:

1. ``qcca`` clock rounds: prices of over-demanded items rise by a fixed
   percentage and every bidder reports her demanded bundle.
2. ``qdq`` ML demand rounds: a network is trained per bidder on her reports,
   prices come from minimising the models' W objective, and the auction stops
   early with the demanded allocation if those prices clear the market.
3. The bridge bid: every bidder reports her exact value for the bundle she
   holds in the current report-based allocation. This counts as one of the
   ``qvq`` value rounds.
4. The remaining value rounds: networks are retrained and each bidder is asked
   for her bundle in the predicted-optimal allocation (main economy, every
   ``qround``-th round) or in the predicted-optimal allocation of an economy
   with ``marginal_count`` other bidders removed. A bidder is never asked a
   bundle she already value-reported.

Simulated bidders answer truthfully; demand ties go to the lexicographically
smallest bundle.

A ``script`` lets replays force queries: ``cca_prices`` replaces the first
clock prices and ``vq_rounds[k]`` forces, per bidder, the bundle asked in the
k-th ML value round (``None`` leaves the choice to the mechanism).
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .allocation import compute_payments, inferred_scw, solve_ml_wdp, solve_wdp
from .core import (BidderReports, ExactOracleUnavailableError, InvalidInputError,
                   NoFeasibleQueryError, enumerate_bundles)
from .mvnn import MvnnArch
from .pricing import (PriceEngineConfig, cca_next_price, initial_prices, is_clearing,
                      ml_next_price)
from .training import ADAM_PRESET, TrainHyperparams, mixed_train
from .valuations import Instance

PHASES = ("cca-dq", "ml-dq", "bridge", "ml-vq-main", "ml-vq-marginal", "supplementary", "random-vq")
SUPPLEMENTARY = ("clock", "raised", "profit-max")


@dataclass(frozen=True)
class MechanismConfig:
    qcca: int = 6
    qdq: int = 4
    qvq: int = 10
    qround: int = 4
    payment: str = "vcg"
    bridge: bool = True
    marginal_count: int = 1
    seed: int = 0
    widths: tuple[int, ...] = (32,)
    train_dq: TrainHyperparams = ADAM_PRESET
    train_vq: TrainHyperparams = ADAM_PRESET
    prices: PriceEngineConfig = field(default_factory=PriceEngineConfig)
    supplementary: str = "clock"
    profit_max: int = 0

    def __post_init__(self):
        for name in ("qcca", "qdq", "qvq", "marginal_count", "profit_max"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if self.qround < 1:
            raise InvalidInputError("qround must be >= 1")
        if self.payment not in ("vcg", "vcg-nearest", "zero"):
            raise InvalidInputError(f"unknown payment rule {self.payment!r}")
        if self.supplementary not in SUPPLEMENTARY:
            raise InvalidInputError(f"supplementary must be one of {SUPPLEMENTARY}")

    def to_json(self) -> dict:
        return asdict(self)


def config_from_json(doc: dict) -> MechanismConfig:
    doc = dict(doc)
    known = set(MechanismConfig.__dataclass_fields__)
    extra = set(doc) - known
    if extra:
        raise InvalidInputError(f"unknown mechanism field(s): {sorted(extra)}")
    for key in ("train_dq", "train_vq"):
        if key in doc:
            doc[key] = TrainHyperparams(**doc[key])
    if "prices" in doc:
        doc["prices"] = PriceEngineConfig(**doc["prices"])
    if "widths" in doc:
        doc["widths"] = tuple(doc["widths"])
    try:
        return MechanismConfig(**doc)
    except TypeError as exc:
        raise InvalidInputError(str(exc)) from None


@dataclass(frozen=True)
class RoundRecord:
    index: int
    phase: str
    prices: tuple[float, ...] | None
    queries: tuple | None
    responses: tuple
    allocation: tuple
    inferred_scw: float
    true_scw: float
    efficiency: float | None
    clearing: bool = False

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AuctionOutcome:
    mechanism: str
    label: str
    config: dict
    cleared: bool
    allocation: tuple
    payments: tuple[float, ...]
    trace: tuple[RoundRecord, ...]
    true_scw: float
    optimal_scw: float | None
    queries: tuple[int, ...]
    reports: tuple[BidderReports, ...] = field(default=(), repr=False, compare=False)

    @property
    def efficiency(self) -> float | None:
        if self.optimal_scw is None:
            return None
        return 1.0 if self.optimal_scw <= 0 else self.true_scw / self.optimal_scw

    @property
    def revenue(self) -> float:
        return float(sum(self.payments))

    def to_json(self) -> dict:
        return {"mechanism": self.mechanism, "instance": self.label, "config": self.config,
                "cleared": self.cleared, "allocation": [list(b) for b in self.allocation],
                "payments": list(self.payments), "true_scw": self.true_scw,
                "optimal_scw": self.optimal_scw, "efficiency": self.efficiency,
                "queries": list(self.queries), "trace": [r.to_json() for r in self.trace]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)

    def trace_rows(self) -> list[dict]:
        rows = []
        for r in self.trace:
            rows.append({
                "round": r.index, "phase": r.phase,
                "prices": "" if r.prices is None else ";".join(repr(v) for v in r.prices),
                "allocation": "|".join(",".join(str(v) for v in b) for b in r.allocation),
                "inferred_scw": repr(r.inferred_scw), "true_scw": repr(r.true_scw),
                "efficiency": "" if r.efficiency is None else repr(r.efficiency),
                "clearing": int(r.clearing)})
        return rows

    def write_trace_csv(self, path) -> None:
        rows = self.trace_rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["round"])
            wr.writeheader()
            wr.writerows(rows)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) % 2**32 for p in parts]).generate_state(1)[0])


def _bundle(x) -> tuple[int, ...]:
    return tuple(int(v) for v in x)


class _Auction:
    """Mutable bookkeeping shared by all mechanisms."""

    def __init__(self, inst: Instance, name: str, config: dict):
        self.inst = inst
        self.name = name
        self.config = config
        self.reports = [BidderReports() for _ in range(inst.n)]
        self.asked = [0] * inst.n
        self.trace: list[RoundRecord] = []
        self.prices: tuple[float, ...] | None = None
        try:
            self.optimum = inst.optimum[1]
        except ExactOracleUnavailableError:
            self.optimum = None
        self.wdp = (tuple((0,) * inst.m for _ in range(inst.n)), 0.0)

    def efficiency(self, scw: float):
        if self.optimum is None:
            return None
        return 1.0 if self.optimum <= 0 else scw / self.optimum

    def record(self, phase, prices=None, queries=None, responses=(), clearing=False,
               allocation=None):
        if allocation is None:
            self.wdp = solve_wdp(self.reports, self.inst.caps)
            allocation, inferred = self.wdp
        else:
            inferred = inferred_scw(self.reports, allocation)
        scw = self.inst.scw(allocation)
        self.trace.append(RoundRecord(len(self.trace) + 1, phase, prices, queries, tuple(responses),
                                      tuple(allocation), float(inferred), scw, self.efficiency(scw),
                                      clearing))

    def ask_demand(self, p) -> list[tuple[int, ...]]:
        p = tuple(float(v) for v in p)
        demands = [self.inst.demand(i, p) for i in range(self.inst.n)]
        self.reports = [r.with_dq(x, p) for r, x in zip(self.reports, demands)]
        self.asked = [k + 1 for k in self.asked]
        self.prices = p
        return demands

    def ask_value(self, i: int, x) -> float:
        v = self.inst.value(i, x)
        self.reports[i] = self.reports[i].with_vq(x, v)
        self.asked[i] += 1
        return v

    def finish(self, payment: str, allocation=None, cleared=False) -> AuctionOutcome:
        if allocation is None:
            allocation, _ = solve_wdp(self.reports, self.inst.caps)
        pay = compute_payments(payment, self.reports, self.inst.caps, allocation)
        return AuctionOutcome(self.name, self.inst.label, self.config, cleared,
                              tuple(_bundle(b) for b in allocation),
                              tuple(float(v) for v in pay), tuple(self.trace),
                              self.inst.scw(allocation), self.optimum, tuple(self.asked),
                              tuple(self.reports))


def _clock_phase(state: _Auction, rounds: int, increment: float, fraction: float,
                 script_prices: Sequence | None, start=None):
    inst = state.inst
    demands = None
    p = None
    for r in range(rounds):
        if script_prices is not None and r < len(script_prices):
            p = tuple(float(v) for v in script_prices[r])
        elif p is None:
            p = tuple(start) if start is not None else initial_prices(inst.oracles, fraction)
        else:
            p = cca_next_price(p, demands, inst.caps, increment)
        demands = state.ask_demand(p)
        state.record("cca-dq", p, None, demands)


def _train_models(state: _Auction, cfg: MechanismConfig, hp: TrainHyperparams, round_index: int):
    arch = MvnnArch(state.inst.caps, cfg.widths)
    models = []
    for i, rep in enumerate(state.reports):
        h = replace(hp, seed=_seed(cfg.seed, round_index, i, hp.seed))
        models.append(mixed_train(rep, arch, h).model)
    return models


def _ml_demand_phase(state: _Auction, cfg: MechanismConfig):
    """Returns the clearing allocation if prices clear the market, else None."""
    inst = state.inst
    for r in range(cfg.qdq):
        models = _train_models(state, cfg, cfg.train_dq, len(state.trace) + 1)
        start = state.prices if state.prices is not None else initial_prices(inst.oracles, cfg.prices.initial_fraction)
        p, _ = ml_next_price(models, start, cfg.prices)
        demands = state.ask_demand(p)
        clears = is_clearing(demands, inst.caps)
        if clears:
            state.record("ml-dq", p, None, demands, clearing=True, allocation=tuple(demands))
            return tuple(demands)
        state.record("ml-dq", p, None, demands)
    return None


def _supplementary(state: _Auction, kind: str, extra: int):
    if kind == "clock":
        return
    inst = state.inst
    queries = []
    bundles = enumerate_bundles(inst.caps)
    for i, rep in enumerate(state.reports):
        asked = []
        for x in sorted({r.bundle for r in rep.dq}):
            if x not in state.reports[i].vq_bundles:
                state.ask_value(i, x)
                asked.append(x)
        if kind == "profit-max" and extra and state.prices is not None:
            u = np.array(inst.oracles[i].table) - bundles @ np.asarray(state.prices)
            added = 0
            # stable sort keeps lexicographic order among equal utilities
            for j in np.argsort(-u, kind="stable"):
                if added == extra:
                    break
                x = _bundle(bundles[j])
                if x in state.reports[i].vq_bundles:
                    continue
                state.ask_value(i, x)
                asked.append(x)
                added += 1
        queries.append(tuple(asked))
    state.record("supplementary", state.prices, tuple(queries),
                 tuple(tuple(inst.value(i, x) for x in q) for i, q in enumerate(queries)))


def run_cca(inst: Instance, rounds: int, increment: float = 0.05, supplementary: str = "clock",
            profit_max: int = 0, payment: str = "vcg", initial_fraction: float = 0.05,
            initial: Sequence[float] | None = None, script: dict | None = None) -> AuctionOutcome:
    """Combinatorial clock auction with an optional supplementary round."""
    if supplementary not in SUPPLEMENTARY:
        raise InvalidInputError(f"supplementary must be one of {SUPPLEMENTARY}")
    if rounds < 0:
        raise InvalidInputError("rounds must be >= 0")
    config = {"rounds": rounds, "increment": increment, "supplementary": supplementary,
              "profit_max": profit_max, "payment": payment}
    state = _Auction(inst, f"cca-{supplementary}", config)
    _clock_phase(state, rounds, increment, initial_fraction,
                 (script or {}).get("cca_prices"), initial)
    _supplementary(state, supplementary, profit_max)
    return state.finish(payment)


def _ml_value_phase(state: _Auction, cfg: MechanismConfig, script: dict | None):
    inst = state.inst
    n = inst.n
    forced_rounds = (script or {}).get("vq_rounds", [])
    if cfg.bridge and cfg.qvq >= 1:
        alloc = state.wdp[0]
        vals = [state.ask_value(i, alloc[i]) for i in range(n)]
        state.record("bridge", None, tuple(alloc), vals)
        n_rounds = cfg.qvq - 1
    else:
        n_rounds = cfg.qvq
    for k in range(1, n_rounds + 1):
        forced = forced_rounds[k - 1] if k - 1 < len(forced_rounds) else [None] * n
        main = k % cfg.qround == 0
        queries: list = [None if f is None else _bundle(f) for f in forced]
        todo = [i for i in range(n) if queries[i] is None]
        if todo:
            models = _train_models(state, cfg, cfg.train_vq, len(state.trace) + 1)
            excluded = [r.vq_bundles for r in state.reports]
            if main:
                first = solve_ml_wdp(models, inst.caps, seed=_seed(cfg.seed, k))
                for i in todo:
                    x = first.allocation[i]
                    if x in excluded[i]:
                        only_i = [excluded[j] if j == i else () for j in range(n)]
                        try:
                            x = solve_ml_wdp(models, inst.caps, only_i, seed=_seed(cfg.seed, k, i)).allocation[i]
                        except NoFeasibleQueryError:
                            x = None
                    queries[i] = x
            else:
                for i in todo:
                    rng = np.random.default_rng([cfg.seed, k, i])
                    others = [j for j in range(n) if j != i]
                    drop = set(rng.choice(others, size=min(cfg.marginal_count, len(others)),
                                          replace=False).tolist()) if others else set()
                    economy = [j for j in range(n) if j not in drop]
                    only_i = [excluded[j] if j == i else () for j in range(n)]
                    try:
                        queries[i] = solve_ml_wdp(models, inst.caps, only_i, economy,
                                                  seed=_seed(cfg.seed, k, i)).allocation[i]
                    except NoFeasibleQueryError:
                        queries[i] = None
        vals = [None if x is None else state.ask_value(i, x) for i, x in enumerate(queries)]
        state.record("ml-vq-main" if main else "ml-vq-marginal", None, tuple(queries), vals)


def run_mlhca(inst: Instance, cfg: MechanismConfig = MechanismConfig(),
              script: dict | None = None) -> AuctionOutcome:
    """The hybrid auction: clock rounds, ML demand rounds, bridge bid, ML value rounds."""
    state = _Auction(inst, "mlhca", cfg.to_json())
    _clock_phase(state, cfg.qcca, cfg.prices.cca_increment, cfg.prices.initial_fraction,
                 (script or {}).get("cca_prices"))
    cleared = _ml_demand_phase(state, cfg)
    if cleared is not None:
        return state.finish(cfg.payment, cleared, cleared=True)
    _ml_value_phase(state, cfg, script)
    return state.finish(cfg.payment)


def run_mlcca(inst: Instance, cfg: MechanismConfig = MechanismConfig(qvq=0),
              script: dict | None = None) -> AuctionOutcome:
    """Clock rounds and ML demand rounds only, then an optional supplementary round."""
    state = _Auction(inst, f"mlcca-{cfg.supplementary}", replace(cfg, qvq=0).to_json())
    _clock_phase(state, cfg.qcca, cfg.prices.cca_increment, cfg.prices.initial_fraction,
                 (script or {}).get("cca_prices"))
    cleared = _ml_demand_phase(state, cfg)
    if cleared is not None:
        return state.finish(cfg.payment, cleared, cleared=True)
    _supplementary(state, cfg.supplementary, cfg.profit_max)
    return state.finish(cfg.payment)


def run_random_vq(inst: Instance, queries: int, seed: int, payment: str = "vcg") -> AuctionOutcome:
    """Every bidder value-reports ``queries`` distinct uniformly random bundles."""
    if queries < 0:
        raise InvalidInputError("queries must be >= 0")
    state = _Auction(inst, "random-vq", {"queries": queries, "seed": seed, "payment": payment})
    bundles = enumerate_bundles(inst.caps)
    k = min(queries, len(bundles))
    picks = [np.random.default_rng([seed, i]).choice(len(bundles), size=k, replace=False)
             for i in range(inst.n)]
    for r in range(k):
        asked = tuple(_bundle(bundles[picks[i][r]]) for i in range(inst.n))
        vals = [state.ask_value(i, x) for i, x in enumerate(asked)]
        state.record("random-vq", None, asked, vals)
    return state.finish(payment)

"""Experiment harness: outcome metrics, learning experiments, batch runs and
the replay checks behind ``auctionlab verify``.

All outputs are deterministic given the configuration and seeds; no
timestamps or timings are written to files.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import kendalltau

from .allocation import solve_wdp
from .allocation import PAYMENT_RULES
from .auctions import (SUPPLEMENTARY, AuctionOutcome, MechanismConfig, config_from_json, run_cca,
                       run_mlcca, run_mlhca, run_random_vq)
from .core import AuctionLabError, BidderReports, InvalidInputError, enumerate_bundles
from .mvnn import MvnnArch, init
from .pricing import cca_next_price, initial_prices, w_objective, w_subgradient
from .training import ADAM_PRESET, TrainHyperparams, mixed_train
from .valuations import (Instance, ToyDomainParams, instance_from_json, make_pathological,
                         sample_toy_instance, utility_max_bundle)

SEED_ENV = "AUCTIONLAB_SEED"
PATHOLOGICAL = ("P1", "P2", "P3", "P4", "P5")


class UndefinedMetricError(AuctionLabError, ValueError):
    pass


# ---------------------------------------------------------------- metrics

def efficiency_loss(outcome: AuctionOutcome, inst: Instance) -> float:
    opt = inst.optimum[1]
    if opt <= 0:
        return 0.0
    return 1.0 - inst.scw(outcome.allocation) / opt


def relative_revenue(outcome: AuctionOutcome, inst: Instance) -> float:
    opt = inst.optimum[1]
    return 0.0 if opt <= 0 else float(sum(outcome.payments)) / opt


def regression_metrics(y, yhat) -> dict[str, float]:
    """R2, Kendall tau-b, MAE scaled by the mean truth, and shift-corrected R2."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.size < 2 or np.all(y == y[0]):
        raise UndefinedMetricError("metrics need at least two distinct true values")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot
    shifted = yhat + np.mean(y - yhat)
    r2c = 1.0 - float(np.sum((y - shifted) ** 2)) / ss_tot
    # constant predictions carry no ranking information
    kt = 0.0 if np.all(yhat == yhat[0]) else float(kendalltau(y, yhat).statistic)
    mae = float(np.mean(np.abs(y - yhat))) / float(np.mean(y))
    return {"r2": r2, "kt": kt, "scaled_mae": mae, "r2c": r2c}


def learning_metrics(model, oracle, bundles) -> dict[str, float]:
    X = np.asarray(bundles)
    y = [oracle(x) for x in X]
    yhat = [model(x) for x in X]
    return regression_metrics(y, yhat)


# ---------------------------------------------------------- learning runs

DEFAULT_RECIPES = (("dq-only", 60, 0), ("vq-only", 0, 60), ("mixed", 40, 20))


@dataclass(frozen=True)
class LearningEvalSpec:
    """Recipe for the learning experiment.

    ``recipes`` lists ``(arm, clock DQs, random VQs)``. Every arm of a seed
    draws from the same clock run and the same random bundle order, so an arm
    with zero VQs and the DQ-only arm coincide when their DQ counts match.
    """
    recipes: tuple[tuple[str, int, int], ...] = DEFAULT_RECIPES
    test_random: int = 200
    test_price: int = 200
    price_multiple: float = 3.0
    seeds: tuple[int, ...] = tuple(range(10))
    bidder: int = 0
    increment: float = 0.05
    initial_fraction: float = 0.05

    def __post_init__(self):
        recipes = tuple((str(a), int(d), int(v)) for a, d, v in self.recipes)
        object.__setattr__(self, "recipes", recipes)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not recipes:
            raise InvalidInputError("recipes must not be empty")
        if len({r[0] for r in recipes}) != len(recipes):
            raise InvalidInputError("recipe arm names must be distinct")
        for arm, d, v in recipes:
            if d < 0 or v < 0 or d + v < 1:
                raise InvalidInputError(f"recipe {arm!r} needs non-negative counts and at least one query")
        for name in ("test_random", "test_price"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if len(self.seeds) < 1:
            raise InvalidInputError("seeds must not be empty")
        if self.price_multiple <= 0 or self.increment <= 0 or self.initial_fraction <= 0:
            raise InvalidInputError("price_multiple, increment and initial_fraction must be positive")


def clock_reports(inst: Instance, rounds: int, bidder: int, increment: float = 0.05,
                  fraction: float = 0.05) -> BidderReports:
    """One bidder's truthful DQ reports from a simulated clock phase.

    All bidders answer every round so that prices move as in a real clock
    auction; no welfare optimum is needed.
    """
    rep = BidderReports()
    p = np.asarray(initial_prices(inst.oracles, fraction))
    for _ in range(rounds):
        demands = [utility_max_bundle(o, p) for o in inst.oracles]
        rep = rep.with_dq(demands[bidder], tuple(float(v) for v in p))
        p = np.asarray(cca_next_price(p, demands, inst.caps, increment))
    return rep


def random_value_reports(inst: Instance, count: int, bidder: int, seed: int) -> BidderReports:
    bundles = enumerate_bundles(inst.caps)
    rng = np.random.default_rng([seed, 7])
    rep = BidderReports()
    for j in rng.choice(len(bundles), size=min(count, len(bundles)), replace=False):
        rep = rep.with_vq(bundles[j], inst.value(bidder, bundles[j]))
    return rep


def training_sets(inst: Instance, spec: LearningEvalSpec, seed: int) -> dict[str, BidderReports]:
    i = spec.bidder
    dq = clock_reports(inst, max(r[1] for r in spec.recipes), i, spec.increment, spec.initial_fraction)
    vq = random_value_reports(inst, max(r[2] for r in spec.recipes), i, seed)
    return {arm: BidderReports(dq.dq[:d], vq.vq[:v]) for arm, d, v in spec.recipes}


def test_sets(inst: Instance, spec: LearningEvalSpec, seed: int):
    """Uniform random bundles, and bundles demanded at random prices.

    Item j's price is uniform on [0, price_multiple * a_j], where a_j is the
    value of one copy of j averaged over the instance's bidders.
    """
    i = spec.bidder
    bundles = enumerate_bundles(inst.caps)
    rng = np.random.default_rng([seed, 11])
    t_r = bundles[rng.integers(len(bundles), size=spec.test_random)]
    hi = spec.price_multiple * np.asarray(initial_prices(inst.oracles, 1.0))
    t_p = np.array([utility_max_bundle(inst.oracles[i], rng.uniform(0, hi, inst.m))
                    for _ in range(spec.test_price)])
    return t_r, t_p


def run_learning_experiment(spec: LearningEvalSpec, params: ToyDomainParams,
                            widths=(32,), hp: TrainHyperparams = ADAM_PRESET) -> list[dict]:
    """Train one model per arm and seed; average metrics over seeds.

    Returns one row per (arm, test set). A seed whose test set has constant
    true values is skipped for that set; ``seeds`` counts the ones used.
    """
    acc: dict[tuple[str, str], list[dict]] = {}
    for seed in spec.seeds:
        inst = sample_toy_instance(params, seed)
        arms = training_sets(inst, spec, seed)
        t_r, t_p = test_sets(inst, spec, seed)
        arch = MvnnArch(inst.caps, tuple(widths))
        oracle = inst.oracles[spec.bidder]
        for arm, _, _ in spec.recipes:
            model = mixed_train(arms[arm], arch, replace(hp, seed=hp.seed + seed)).model
            for name, X in (("random", t_r), ("price", t_p)):
                try:
                    m = learning_metrics(model, oracle, X)
                except UndefinedMetricError:
                    continue
                acc.setdefault((arm, name), []).append(m)
    rows = []
    for arm, _, _ in spec.recipes:
        for name in ("random", "price"):
            ms = acc.get((arm, name), [])
            row = {"arm": arm, "test_set": name, "seeds": len(ms)}
            for key in ("r2", "kt", "scaled_mae", "r2c"):
                row[key] = float(np.mean([m[key] for m in ms])) if ms else float("nan")
            rows.append(row)
    return rows


def write_rows(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        for r in rows:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ------------------------------------------------------------- batch runs

MECHANISM_KINDS = ("mlhca", "mlcca", "cca", "random-vq")


@dataclass(frozen=True)
class MechanismSpec:
    name: str
    kind: str
    config: MechanismConfig | None = None
    rounds: int = 20
    supplementary: str = "raised"
    queries: int = 20
    payment: str = "vcg"


@dataclass(frozen=True)
class ExperimentConfig:
    mechanisms: tuple[MechanismSpec, ...]
    source: dict
    repetitions: int = 10
    seed: int = 0
    output: str = "results"

    def __post_init__(self):
        if self.repetitions < 1:
            raise InvalidInputError("repetitions must be >= 1")
        if not self.mechanisms:
            raise InvalidInputError("mechanisms must list at least one mechanism")


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise InvalidInputError(f"{where} is missing field '{key}'")
    return doc[key]


EXPERIMENT_FIELDS = {"mechanisms", "instances", "repetitions", "seed", "output"}
MECHANISM_FIELDS = {"name", "kind", "config", "rounds", "supplementary", "queries", "payment"}


def _known(doc, fields: set, where: str) -> dict:
    if not isinstance(doc, dict):
        raise InvalidInputError(f"{where} must be a JSON object")
    extra = sorted(set(doc) - fields)
    if extra:
        raise InvalidInputError(f"{where} has unknown field(s): {extra}")
    return doc


def _env_seed(default) -> int:
    raw = os.environ.get(SEED_ENV)
    try:
        return int(raw if raw is not None else default)
    except (TypeError, ValueError):
        raise InvalidInputError(f"seed must be an integer, got {raw if raw is not None else default!r}") from None


def experiment_from_json(doc: dict) -> ExperimentConfig:
    """Parse an experiment file. Errors name the offending field."""
    _known(doc, EXPERIMENT_FIELDS, "experiment config")
    mechs = []
    for k, m in enumerate(_require(doc, "mechanisms", "experiment config")):
        where = f"mechanisms[{k}]"
        _known(m, MECHANISM_FIELDS, where)
        kind = _require(m, "kind", where)
        if kind not in MECHANISM_KINDS:
            raise InvalidInputError(f"{where}.kind must be one of {MECHANISM_KINDS}, got {kind!r}")
        cfg = None
        if kind in ("mlhca", "mlcca"):
            try:
                cfg = config_from_json(m.get("config", {}))
            except (InvalidInputError, TypeError) as exc:
                raise InvalidInputError(f"{where}.config: {exc}") from None
        if m.get("supplementary", "raised") not in SUPPLEMENTARY:
            raise InvalidInputError(f"{where}.supplementary must be one of {SUPPLEMENTARY}")
        if m.get("payment", "vcg") not in PAYMENT_RULES:
            raise InvalidInputError(f"{where}.payment must be one of {PAYMENT_RULES}")
        try:
            mechs.append(MechanismSpec(str(m.get("name", kind)), kind, cfg, int(m.get("rounds", 20)),
                                       m.get("supplementary", "raised"), int(m.get("queries", 20)),
                                       m.get("payment", "vcg")))
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"{where}: {exc}") from None
    if len({m.name for m in mechs}) != len(mechs):
        raise InvalidInputError("mechanisms: names must be distinct")
    source = _require(doc, "instances", "experiment config")
    _known(source, {"toy", "pathological", "file"}, "instances")
    if len(source) != 1:
        raise InvalidInputError("instances must contain exactly one of 'toy', 'pathological' or 'file'")
    if "toy" in source:
        try:
            ToyDomainParams(**source["toy"])
        except TypeError as exc:
            raise InvalidInputError(f"instances.toy: {exc}") from None
    if "pathological" in source and str(source["pathological"]).upper() not in PATHOLOGICAL:
        raise InvalidInputError(f"instances.pathological must be one of {PATHOLOGICAL}")
    try:
        reps = int(doc.get("repetitions", 10))
    except (TypeError, ValueError):
        raise InvalidInputError("repetitions must be an integer") from None
    return ExperimentConfig(tuple(mechs), source, reps, _env_seed(doc.get("seed", 0)),
                            str(doc.get("output", "results")))


LEARN_FIELDS = {"toy", "recipes", "test_random", "test_price", "price_multiple", "seeds", "bidder",
                "increment", "initial_fraction", "widths", "train"}


@dataclass(frozen=True)
class LearnConfig:
    spec: LearningEvalSpec
    toy: ToyDomainParams
    widths: tuple[int, ...] = (32,)
    train: TrainHyperparams = ADAM_PRESET


def learn_config_from_json(doc: dict) -> LearnConfig:
    """Parse a learning-experiment file; every field is optional."""
    _known(doc, LEARN_FIELDS, "learn config")
    spec_kw = {k: doc[k] for k in LEARN_FIELDS - {"toy", "widths", "train"} if k in doc}
    try:
        toy = ToyDomainParams(**doc.get("toy", {}))
    except TypeError as exc:
        raise InvalidInputError(f"toy: {exc}") from None
    try:
        if "recipes" in spec_kw:
            spec_kw["recipes"] = tuple(tuple(r) for r in spec_kw["recipes"])
        spec = LearningEvalSpec(**spec_kw)
        if not 0 <= spec.bidder < toy.n:
            raise InvalidInputError(f"bidder must lie in [0, {toy.n})")
        train = replace(ADAM_PRESET, **doc.get("train", {}))
        widths = tuple(int(w) for w in doc.get("widths", (32,)))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"learn config: {exc}") from None
    return LearnConfig(spec, toy, widths, train)


def load_instance(source: dict, rep: int, seed: int) -> Instance:
    if "toy" in source:
        return sample_toy_instance(ToyDomainParams(**source["toy"]), seed + rep)
    if "pathological" in source:
        return make_pathological(str(source["pathological"]))
    with open(source["file"], encoding="utf-8") as fh:
        return instance_from_json(json.load(fh))


def run_mechanism(spec: MechanismSpec, inst: Instance, seed: int) -> AuctionOutcome:
    if spec.kind == "mlhca":
        return run_mlhca(inst, replace(spec.config, seed=seed))
    if spec.kind == "mlcca":
        return run_mlcca(inst, replace(spec.config, seed=seed))
    if spec.kind == "cca":
        return run_cca(inst, spec.rounds, supplementary=spec.supplementary, payment=spec.payment)
    return run_random_vq(inst, spec.queries, seed, payment=spec.payment)


def _job(args):
    spec, source, rep, seed = args
    inst = load_instance(source, rep, seed)
    out = run_mechanism(spec, inst, seed + rep)
    return spec.name, rep, out, efficiency_loss(out, inst), relative_revenue(out, inst)


ROUND_FIELDS = ["mechanism", "rep", "round", "phase", "prices", "allocation", "inferred_scw",
                "true_scw", "efficiency", "clearing", "efficiency_loss", "relative_revenue",
                "queries"]


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Summary table from the per-round rows (only 'final' rows are used)."""
    by: dict[str, list[dict]] = {}
    for r in rows:
        if r["phase"] == "final":
            by.setdefault(r["mechanism"], []).append(r)
    out = []
    for name, rs in by.items():
        loss = np.array([float(r["efficiency_loss"]) for r in rs])
        rev = np.array([float(r["relative_revenue"]) for r in rs])
        q = np.array([float(r["queries"]) for r in rs])
        se = loss.std(ddof=1) / np.sqrt(len(loss)) if len(loss) > 1 else 0.0
        out.append({"mechanism": name, "mean_efficiency_loss": float(loss.mean()),
                    "ci95": float(1.96 * se), "mean_relative_revenue": float(rev.mean()),
                    "mean_queries": float(q.mean()), "runs": len(rs)})
    return out


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None, jobs: int = 1) -> list[dict]:
    out = Path(out_dir or cfg.output)
    (out / "outcomes").mkdir(parents=True, exist_ok=True)
    tasks = [(m, cfg.source, rep, cfg.seed) for m in cfg.mechanisms for rep in range(cfg.repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_job, tasks))
    else:
        results = [_job(t) for t in tasks]
    rows = []
    for name, rep, outcome, loss, rev in results:
        (out / "outcomes" / f"{name}_{rep:03d}.json").write_text(outcome.dumps(), encoding="utf-8")
        for r in outcome.trace_rows():
            rows.append({"mechanism": name, "rep": rep, **r, "efficiency_loss": "",
                         "relative_revenue": "", "queries": ""})
        rows.append({"mechanism": name, "rep": rep, "round": len(outcome.trace) + 1, "phase": "final",
                     "prices": "", "allocation": "|".join(",".join(map(str, b)) for b in outcome.allocation),
                     "inferred_scw": "", "true_scw": repr(outcome.true_scw),
                     "efficiency": "" if outcome.efficiency is None else repr(outcome.efficiency),
                     "clearing": int(outcome.cleared), "efficiency_loss": repr(loss),
                     "relative_revenue": repr(rev), "queries": repr(float(np.mean(outcome.queries)))})
    with open(out / "rounds.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=ROUND_FIELDS)
        wr.writeheader()
        wr.writerows(rows)
    summary = summarize(rows)
    write_rows(summary, out / "summary.csv")
    return summary


def read_rounds(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- verify

@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _check_p1() -> Check:
    inst = make_pathological("P1")
    out = run_cca(inst, len(inst.script["cca_prices"]), supplementary="raised", script=inst.script)
    eff = out.efficiency
    reports = list(out.reports)
    reports[1] = reports[1].with_vq((9,), inst.value(1, (9,)))
    alloc, _ = solve_wdp(reports, inst.caps)
    eff2 = inst.scw(alloc) / inst.optimum[1]
    ok = abs(eff - 100 / 184.24) <= 1e-9 and abs(eff2 - 1.0) <= 1e-12
    return Check("P1", ok, f"raised-bid efficiency {eff:.10f}, with v2(9) {eff2:.10f}")


def _check_p2() -> Check:
    inst = make_pathological("P2")
    two = run_cca(inst, 2, script=inst.script)
    three = run_cca(inst, 3, script={"cca_prices": inst.script["cca_prices"] + inst.script["extra_prices"]})
    ok = (two.efficiency == 1.0 and abs(two.trace[-1].inferred_scw - 1.2) <= 1e-9
          and abs(three.trace[-1].inferred_scw - 2.0) <= 1e-9 and abs(three.efficiency - 3.1 / 400) <= 1e-12)
    return Check("P2", ok, f"efficiency {two.efficiency} -> {three.efficiency:.5f}, "
                           f"inferred SCW {two.trace[-1].inferred_scw} -> {three.trace[-1].inferred_scw}")


def _check_p3() -> Check:
    inst = make_pathological("P3")
    off = run_mlhca(inst, MechanismConfig(qcca=2, qdq=0, qvq=1, bridge=False), script=inst.script)
    on = run_mlhca(inst, MechanismConfig(qcca=2, qdq=0, qvq=2, bridge=True), script=inst.script)
    after = [r.efficiency for r in on.trace[2:]]
    ok = abs(off.efficiency - 3.1 / 400) <= 1e-12 and all(e == 1.0 for e in after) and on.efficiency == 1.0
    return Check("P3", ok, f"without bridge {off.efficiency:.5f}, with bridge {after}")


def p4_ratio(seeds: int = 1000, m: int = 12, eps: float = 0.01, V: float = 1000.0):
    inst = make_pathological("P4", m=m, eps=eps, V=V)
    dq, vq = [], []
    for s in range(seeds):
        p = np.random.default_rng([s, 4]).uniform(0, 1, m)
        dq.append(run_cca(inst, 1, initial=p, payment="zero").true_scw)
        vq.append(run_random_vq(inst, m, s, payment="zero").true_scw)
    return float(np.mean(dq)), float(np.mean(vq))


def _check_p4(seeds: int = 1000) -> Check:
    dq, vq = p4_ratio(seeds)
    return Check("P4", dq / vq > 100, f"mean SCW random DQ {dq:.3f} / random VQ {vq:.3f} = {dq / vq:.1f}")


def _check_p5() -> Check:
    inst = make_pathological("P5")
    k = len(inst.script["cca_prices"])
    out = run_mlhca(inst, MechanismConfig(qcca=k, qdq=0, qvq=2), script=inst.script)
    return Check("P5", out.efficiency == 1.0, f"final efficiency {out.efficiency}")


def bridge_holds(outcome: AuctionOutcome, tol: float = 0.0) -> bool:
    """Every round from the bridge bid on is at least as efficient as the last demand round."""
    phases = [r.phase for r in outcome.trace]
    if "bridge" not in phases:
        return True
    b = phases.index("bridge")
    last_dq = outcome.trace[b - 1].efficiency if b > 0 else 0.0
    return all(r.efficiency >= last_dq - tol for r in outcome.trace[b:])


def _check_bridge(instances: int = 3) -> Check:
    params = ToyDomainParams(n=4, m=8)
    hp = replace(ADAM_PRESET, epochs=100)
    cfg = MechanismConfig(qcca=3, qdq=1, qvq=3, train_dq=hp, train_vq=hp)
    ok = 0
    for s in range(instances):
        out = run_mlhca(sample_toy_instance(params, 1000 + s), replace(cfg, seed=s))
        ok += bridge_holds(out)
    return Check("bridge-bid", ok == instances, f"{ok}/{instances} runs keep the last-DQ efficiency")


def subgradient_violations(tuples: int, pairs: int, seed: int = 0, caps=(2, 1, 1), n: int = 3):
    rng = np.random.default_rng(seed)
    arch = MvnnArch(caps, (8,))
    from .mvnn import Mvnn
    worst = np.inf
    bad = 0
    for t in range(tuples):
        models = []
        for i in range(n):
            p = init(arch, int(rng.integers(2**31)))
            # random negative biases exercise the bReLU kinks
            p = type(p)(p.weights, tuple(-rng.uniform(0, 0.5, b.shape) for b in p.biases), p.skip)
            models.append(Mvnn(arch, p).scaled(float(rng.uniform(1, 10))))
        for _ in range(pairs):
            p, q = rng.uniform(0, 5, len(caps)), rng.uniform(0, 5, len(caps))
            lhs = w_objective(models, q, caps)
            rhs = w_objective(models, p, caps) + float(w_subgradient(models, p, caps) @ (q - p))
            worst = min(worst, lhs - rhs)
            bad += lhs < rhs - 1e-9
    return bad, worst


def _check_subgradient() -> Check:
    bad, worst = subgradient_violations(50, 100)
    return Check("subgradient", bad == 0, f"{bad} violations in 5000 checks, min slack {worst:.3e}")


VERIFY_CHECKS: dict[str, Callable[[], Check]] = {
    "P1": _check_p1, "P2": _check_p2, "P3": _check_p3, "P4": _check_p4, "P5": _check_p5,
    "bridge-bid": _check_bridge, "subgradient": _check_subgradient,
}


def run_verify(names: Sequence[str] | None = None) -> list[Check]:
    return [VERIFY_CHECKS[k]() for k in (names or VERIFY_CHECKS)]

import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from auctionlab.auctions import (PHASES, MechanismConfig, config_from_json, run_cca, run_mlcca,
                                 run_mlhca, run_random_vq)
from auctionlab.core import InvalidInputError, enumerate_bundles
from auctionlab.lab import bridge_holds
from auctionlab.training import ADAM_PRESET
from auctionlab.valuations import (AdditiveSynergyOracle, Instance, ToyDomainParams,
                                   make_pathological, sample_toy_instance)

FAST = replace(ADAM_PRESET, epochs=60)


def fast_cfg(**kw):
    base = dict(qcca=3, qdq=1, qvq=4, qround=2, widths=(16,), train_dq=FAST, train_vq=FAST)
    base.update(kw)
    return MechanismConfig(**base)


def test_p2_cca_examples():
    inst = make_pathological("P2")
    out = run_cca(inst, 2, script=inst.script)
    assert out.efficiency == 1.0
    prices = inst.script["cca_prices"] + inst.script["extra_prices"]
    out = run_cca(inst, 3, script={"cca_prices": prices})
    assert out.efficiency == pytest.approx(3.1 / 400, abs=1e-15)


def test_p1_grid_raised():
    inst = make_pathological("P1")
    out = run_cca(inst, len(inst.script["cca_prices"]), supplementary="raised", script=inst.script)
    assert abs(out.efficiency - 100 / 184.24) <= 1e-9


def test_p1_ml_cca_never_beats_bound():
    inst = make_pathological("P1")
    cfg = fast_cfg(qcca=8, qdq=3, supplementary="raised")
    assert run_mlcca(inst, cfg).efficiency <= 0.5429


def test_p5_single_forced_vq():
    inst = make_pathological("P5")
    k = len(inst.script["cca_prices"])
    out = run_mlhca(inst, fast_cfg(qcca=k, qdq=0, qvq=2), script=inst.script)
    assert out.efficiency == 1.0
    assert (9,) in out.reports[1].vq_bundles


def test_p3_bridge_keeps_efficiency():
    inst = make_pathological("P3")
    on = run_mlhca(inst, fast_cfg(qcca=2, qdq=0, qvq=2), script=inst.script)
    assert [r.phase for r in on.trace] == ["cca-dq", "cca-dq", "bridge", "ml-vq-marginal"]
    assert all(r.efficiency == 1.0 for r in on.trace[1:])
    off = run_mlhca(inst, fast_cfg(qcca=2, qdq=0, qvq=1, bridge=False), script=inst.script)
    assert off.efficiency == pytest.approx(3.1 / 400, abs=1e-15)


def test_degenerate_phases_match_cca():
    inst = sample_toy_instance(ToyDomainParams(n=3, m=5), 2)
    cca = run_cca(inst, 4)
    for out in (run_mlhca(inst, fast_cfg(qcca=4, qdq=0, qvq=0)), run_mlcca(inst, fast_cfg(qcca=4, qdq=0))):
        assert [(r.phase, r.prices, r.allocation) for r in out.trace] == \
               [(r.phase, r.prices, r.allocation) for r in cca.trace]
        assert out.allocation == cca.allocation and out.payments == cca.payments


def test_single_bidder_cca_is_efficient():
    o = AdditiveSynergyOracle((1, 2), [3.0, 1.0])
    assert run_cca(Instance((1, 2), (o,)), 3).efficiency == 1.0


def test_supplementary_heuristics():
    inst = sample_toy_instance(ToyDomainParams(n=3, m=5), 4)
    clock = run_cca(inst, 6)
    raised = run_cca(inst, 6, supplementary="raised")
    pm = run_cca(inst, 6, supplementary="profit-max", profit_max=3)
    for i in range(inst.n):
        dq_bundles = {r.bundle for r in raised.reports[i].dq}
        assert raised.reports[i].vq_bundles == dq_bundles - {(0,) * inst.m} or \
            raised.reports[i].vq_bundles == dq_bundles
        assert len(pm.reports[i].vq) >= len(raised.reports[i].vq)
    assert clock.trace[-1].phase == "cca-dq"
    assert raised.efficiency >= clock.efficiency - 1e-12
    assert pm.efficiency >= raised.efficiency - 1e-12


def test_random_vq_full_revelation():
    inst = sample_toy_instance(ToyDomainParams(n=2, m=3, cap_high=2), 5)
    out = run_random_vq(inst, len(enumerate_bundles(inst.caps)), 0)
    assert out.efficiency == pytest.approx(1.0)
    with pytest.raises(InvalidInputError):
        run_random_vq(inst, -1, 0)


def test_p4_monte_carlo_directions():
    inst = make_pathological("P4")
    vq = [run_random_vq(inst, 12, s, payment="zero").efficiency for s in range(300)]
    dq = [run_cca(inst, 1, initial=np.random.default_rng([s, 4]).uniform(0, 1, 12), payment="zero").efficiency
          for s in range(300)]
    assert np.mean(vq) < 0.05 and np.mean(dq) > 0.99


@pytest.mark.parametrize("seed", [0, 1])
def test_mlhca_invariants(seed):
    inst = sample_toy_instance(ToyDomainParams(n=3, m=6), 100 + seed)
    out = run_mlhca(inst, fast_cfg(seed=seed))
    assert set(r.phase for r in out.trace) <= set(PHASES)
    assert bridge_holds(out)
    vq_phase = [r for r in out.trace if r.phase in ("bridge", "ml-vq-main", "ml-vq-marginal")]
    scw = [r.true_scw for r in vq_phase]
    assert all(b >= a - 1e-9 for a, b in zip(scw, scw[1:]))
    # no bidder is asked the same bundle twice
    for i in range(inst.n):
        asked = [r.queries[i] for r in vq_phase if r.queries[i] is not None]
        assert len(asked) == len(set(asked))
    assert 0.0 <= out.efficiency <= 1.0 + 1e-12
    assert len(out.trace) == out.config["qcca"] + out.config["qdq"] + out.config["qvq"] or out.cleared


def test_mlhca_deterministic():
    inst = sample_toy_instance(ToyDomainParams(n=3, m=5), 8)
    cfg = fast_cfg(seed=3)
    assert run_mlhca(inst, cfg).dumps() == run_mlhca(inst, cfg).dumps()


def test_cleared_outcomes_are_efficient():
    hits = 0
    for seed in range(3):
        # every bidder values every item, so clearing prices exist for additive values
        inst = sample_toy_instance(ToyDomainParams(n=4, m=4, interest=1.0, synergy_density=0.0), seed)
        out = run_mlcca(inst, fast_cfg(qcca=3, qdq=10, seed=seed))
        if out.cleared:
            hits += 1
            assert out.efficiency == pytest.approx(1.0, abs=1e-12)
            assert out.trace[-1].clearing
    assert hits >= 1


def test_outcome_serialisation(tmp_path):
    inst = make_pathological("P2")
    out = run_cca(inst, 2, script=inst.script)
    doc = json.loads(out.dumps())
    for key in ("config", "instance", "cleared", "allocation", "payments", "trace"):
        assert key in doc
    assert doc["instance"] == "P2" and len(doc["trace"]) == 2
    path = tmp_path / "t.csv"
    out.write_trace_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert [r["phase"] for r in rows] == ["cca-dq", "cca-dq"]
    assert rows[1]["prices"] == "1.2;1.0"


def test_config_validation():
    with pytest.raises(InvalidInputError, match="bogus"):
        config_from_json({"bogus": 1})
    with pytest.raises(InvalidInputError):
        MechanismConfig(qround=0)
    with pytest.raises(InvalidInputError):
        MechanismConfig(payment="first-price")
    with pytest.raises(InvalidInputError):
        run_cca(make_pathological("P1"), 1, supplementary="nope")
    cfg = config_from_json({"qcca": 2, "train_vq": {"epochs": 5}, "widths": [4]})
    assert cfg.qcca == 2 and cfg.train_vq.epochs == 5 and cfg.widths == (4,)

import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auctionlab.core import InvalidInputError
from auctionlab.mvnn import Mvnn, MvnnArch, MvnnParams
from auctionlab.pricing import (PriceEngineConfig, cca_next_price, indirect_utility, is_clearing,
                                ml_next_price, predicted_demands, w_objective, w_subgradient,
                                write_descent_csv)
from auctionlab.valuations import (AdditiveSynergyOracle, ToyDomainParams, make_pathological,
                                   sample_toy_instance)
from auctionlab.lab import subgradient_violations


def test_cca_next_price():
    assert cca_next_price((1, 1), [(0, 1), (0, 0)], (1, 1)) == (1.0, 1.0)
    assert cca_next_price((1, 1), [(1, 0), (1, 0)], (1, 1), 0.05) == (1.05, 1.0)
    assert cca_next_price((0, 1), [(1, 0), (1, 0)], (1, 1)) == (0.0, 1.0)


@given(st.lists(st.floats(0, 100), min_size=3, max_size=3),
       st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=4))
def test_cca_price_monotone(p, demands):
    q = cca_next_price(p, demands, (2, 2, 2))
    assert all(b >= a for a, b in zip(p, q))


def test_indirect_utility_p1():
    o1, o2 = make_pathological("P1").oracles
    assert indirect_utility(o1, (0,)) == 100.0
    assert indirect_utility(o1, (1e6,)) == 0.0
    assert indirect_utility(o2, (9.4,)) == pytest.approx(0.0, abs=1e-12)


def test_w_objective_examples():
    inst = make_pathological("P1")
    assert w_objective(inst.oracles, (9.4,), inst.caps) == pytest.approx(184.6, abs=1e-9)
    assert w_objective(inst.oracles, (0,), inst.caps) == pytest.approx(100 + 94)
    zero = AdditiveSynergyOracle((2, 3), [0.0, 0.0])
    assert w_objective([zero], (1.5, 2.0), (2, 3)) == pytest.approx(9.0)


def test_w_subgradient_examples():
    inst = make_pathological("P1")
    assert w_subgradient(inst.oracles, (5,), inst.caps).tolist() == [-1.0]
    zero = AdditiveSynergyOracle((2, 3), [0.0, 0.0])
    assert w_subgradient([zero], (1, 1), (2, 3)).tolist() == [2.0, 3.0]
    full = AdditiveSynergyOracle((2, 3), [5.0, 5.0])
    assert w_subgradient([full], (1, 1), (2, 3)).tolist() == [0.0, 0.0]


def test_is_clearing():
    assert is_clearing([(1, 0), (0, 1)], (1, 1))
    assert not is_clearing([(1, 0), (0, 0)], (1, 1))
    inst = make_pathological("P1")
    d = [inst.demand(i, (9.2,)) for i in range(2)]
    assert d == [(1,), (10,)] and not is_clearing(d, inst.caps)


def test_descent_returns_start_when_clearing():
    o = AdditiveSynergyOracle((1, 1), [5.0, 5.0])
    p, trace = ml_next_price([o], (1.0, 2.0), PriceEngineConfig(gamma=0.1))
    assert p == (1.0, 2.0) and len(trace) == 1


def test_one_step_over_demand():
    o = AdditiveSynergyOracle((1,), [5.0])
    _, trace = ml_next_price([o, o, o], (1.0,), PriceEngineConfig(gamma=0.1, mu=0.5, steps=1))
    assert trace[0].over_demand == (2,)
    assert trace[1].prices[0] == pytest.approx(1.3, abs=1e-12)


def test_one_dimensional_threshold():
    arch = MvnnArch((1,), (1,), skip=True)
    # M(x) = 10 x via the skip row only
    params = MvnnParams((np.zeros((1, 1)), np.zeros((1, 1))), (np.zeros(1),), np.array([10.0]))
    model = Mvnn(arch, params)
    cfg = PriceEngineConfig(gamma=0.5, mu=0.5, steps=200)
    # two such bidders over-demand the single unit until the price reaches 10
    p, trace = ml_next_price([model, model], (0.0,), cfg)
    g = 0.5 * 1.5
    assert 10 - g <= trace[-1].prices[0] <= 10 + g
    assert 10 - g <= p[0] <= 10 + g
    assert all(s.prices[0] >= 0 for s in trace)


def test_descent_prices_non_negative_and_best_w():
    inst = sample_toy_instance(ToyDomainParams(n=3, m=4), 2)
    p, trace = ml_next_price(inst.oracles, np.full(4, 20.0), PriceEngineConfig(gamma=0.5, steps=60))
    assert all(min(s.prices) >= 0 for s in trace)
    feas = [s for s in trace if not any(s.over_demand)]
    pool = feas or trace
    assert w_objective(inst.oracles, p, inst.caps) == pytest.approx(min(s.w for s in pool))


def test_price_config_validation():
    for kw in ({"cca_increment": 0}, {"gamma": -1.0}, {"mu": -0.1}, {"steps": 0}):
        with pytest.raises(InvalidInputError):
            PriceEngineConfig(**kw)


def test_descent_csv(tmp_path):
    inst = sample_toy_instance(ToyDomainParams(n=2, m=3), 0)
    _, trace = ml_next_price(inst.oracles, np.ones(3), PriceEngineConfig(steps=5))
    path = tmp_path / "d.csv"
    write_descent_csv(trace, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "p_1", "p_2", "p_3", "W", "over_demand_1", "over_demand_2", "over_demand_3"]
    assert len(rows) == len(trace) + 1


def test_subgradient_inequality_networks():
    bad, _ = subgradient_violations(10, 50, seed=3)
    assert bad == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_subgradient_inequality_oracles(seed):
    inst = sample_toy_instance(ToyDomainParams(n=3, m=4, cap_high=2), seed)
    rng = np.random.default_rng(seed)
    for _ in range(20):
        p, q = rng.uniform(0, 15, 4), rng.uniform(0, 15, 4)
        lhs = w_objective(inst.oracles, q, inst.caps)
        g = w_subgradient(inst.oracles, p, inst.caps)
        assert lhs >= w_objective(inst.oracles, p, inst.caps) + g @ (q - p) - 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_clearing_implies_efficiency(seed):
    # additive oracles on unit items clear at many prices; check each hit exactly
    inst = sample_toy_instance(ToyDomainParams(n=3, m=4, synergy_density=0.0), seed)
    rng = np.random.default_rng(seed)
    for _ in range(30):
        p = rng.uniform(0, 10, 4)
        d = predicted_demands(inst.oracles, p)
        if is_clearing(d, inst.caps):
            assert inst.scw(d) == pytest.approx(inst.optimum[1], abs=1e-9)

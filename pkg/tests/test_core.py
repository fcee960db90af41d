import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auctionlab.core import (BidderReports, EnumerationTooLargeError, InvalidInputError,
                             bundle_index, bundle_space_size, enumerate_bundles, inferred_value,
                             is_feasible)
from auctionlab.valuations import ToyDomainParams, sample_toy_instance

from oracles import inferred as oracle_inferred


def test_inferred_value_empty_reports():
    assert inferred_value(BidderReports(), (1, 0)) == 0.0


def test_inferred_value_vq_is_identity():
    r = BidderReports(vq=[((1, 0), 7.5)])
    assert inferred_value(r, (1, 0)) == 7.5


def test_inferred_value_p2_bidder_one():
    r = BidderReports(dq=[((1, 0), (1, 1)), ((1, 0), (1.2, 1))])
    assert inferred_value(r, (1, 0)) == pytest.approx(1.2, abs=1e-12)
    assert inferred_value(r, (0, 1)) == 0.0


def test_inferred_value_prefers_vq_over_dq():
    r = BidderReports(dq=[((1, 0), (3, 0))], vq=[((1, 0), 2.0)])
    assert inferred_value(r, (1, 0)) == 2.0


def test_inferred_value_dimension_mismatch():
    r = BidderReports(vq=[((1, 0), 1.0)])
    with pytest.raises(InvalidInputError):
        inferred_value(r, (1, 0, 0))


def test_duplicate_value_reports_collapse_and_conflicts_raise():
    r = BidderReports(vq=[((1,), 2.0), ((1,), 2.0)])
    assert len(r.vq) == 1
    with pytest.raises(InvalidInputError):
        BidderReports(vq=[((1,), 2.0), ((1,), 3.0)])


def test_report_validation():
    with pytest.raises(InvalidInputError):
        BidderReports(vq=[((1,), -1.0)])
    with pytest.raises(InvalidInputError):
        BidderReports(dq=[((1, 0), (1.0,))])
    with pytest.raises(InvalidInputError):
        BidderReports(dq=[((1,), (-1.0,))])
    with pytest.raises(InvalidInputError):
        BidderReports(vq=[((1,), 1.0), ((1, 0), 1.0)])


@pytest.mark.parametrize("alloc,caps,ok", [
    (((1, 0), (0, 1)), (1, 1), True),
    (((1, 0), (1, 0)), (1, 1), False),
    (((1,), (9,)), (10,), True),
])
def test_is_feasible(alloc, caps, ok):
    assert is_feasible(alloc, caps) is ok


def test_is_feasible_length_mismatch():
    with pytest.raises(InvalidInputError):
        is_feasible(((1, 0, 0),), (1, 1))


def test_enumerate_small_cases():
    assert enumerate_bundles((1,)).tolist() == [[0], [1]]
    assert enumerate_bundles((1, 1)).tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]
    assert enumerate_bundles((10,)).ravel().tolist() == list(range(11))


def test_enumerate_cap_error_names_cap():
    with pytest.raises(EnumerationTooLargeError, match="16"):
        enumerate_bundles((1,) * 5, cap=16)


def test_invalid_capacities():
    with pytest.raises(InvalidInputError):
        enumerate_bundles(())
    with pytest.raises(InvalidInputError):
        enumerate_bundles((1, 0))


@given(st.lists(st.integers(1, 3), min_size=1, max_size=4))
def test_enumeration_size_order_and_index(caps):
    b = enumerate_bundles(caps)
    assert len(b) == bundle_space_size(caps) == int(np.prod([c + 1 for c in caps]))
    assert len({tuple(r) for r in b}) == len(b)
    assert np.all(b >= 0) and np.all(b <= np.asarray(caps))
    assert [tuple(r) for r in b] == sorted(tuple(r) for r in b)
    assert np.array_equal(bundle_index(b, caps), np.arange(len(b)))


report_strategy = st.tuples(
    st.lists(st.tuples(st.tuples(st.integers(0, 2), st.integers(0, 1)),
                       st.tuples(st.floats(0, 10), st.floats(0, 10))), max_size=6),
    st.lists(st.tuples(st.tuples(st.integers(0, 2), st.integers(0, 1)), st.floats(0, 50)), max_size=4),
)


@given(report_strategy, report_strategy)
def test_inferred_value_matches_oracle_and_grows(base, extra):
    dq, vq = base
    # keep one value per bundle so the reports are consistent
    vq = list({b: (b, v) for b, v in vq}.values())
    r = BidderReports(dq, vq)
    for x in enumerate_bundles((2, 1)):
        x = tuple(int(v) for v in x)
        assert inferred_value(r, x) == pytest.approx(oracle_inferred(dq, vq, x), abs=1e-12)
    # extending with more demand reports never lowers an inferred value
    bigger = BidderReports(list(dq) + list(extra[0]), vq)
    for x in enumerate_bundles((2, 1)):
        assert inferred_value(bigger, x) >= inferred_value(r, x) - 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_truthful_inferred_values_never_exceed_truth(seed):
    inst = sample_toy_instance(ToyDomainParams(n=1, m=4, cap_high=2), seed)
    o = inst.oracles[0]
    rng = np.random.default_rng(seed)
    r = BidderReports()
    for _ in range(8):
        p = rng.uniform(0, 12, inst.m)
        r = r.with_dq(inst.demand(0, p), p)
    for x in enumerate_bundles(inst.caps):
        assert inferred_value(r, x) <= o(x) + 1e-9

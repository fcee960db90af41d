import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auctionlab.core import EnumerationTooLargeError, InvalidInputError, enumerate_bundles
from auctionlab.mvnn import (Mvnn, MvnnArch, MvnnParams, argmax_utility, dumps_checkpoint,
                             forward, forward_batch, init, load_checkpoint, project_params,
                             weighted_grad)

from oracles import numeric_grad


def tiny():
    arch = MvnnArch((2,), (1,), skip=False)
    params = MvnnParams((np.array([[1.0]]), np.array([[1.0]])), (np.array([0.0]),))
    return params, arch


def test_hand_evaluated_network():
    params, arch = tiny()
    assert forward(params, arch, (0,)) == 0.0
    assert forward(params, arch, (1,)) == 0.5
    assert forward(params, arch, (2,)) == 1.0


def test_hand_evaluated_argmax():
    params, arch = tiny()
    # utilities 0, 0.3, 0.6
    assert argmax_utility(params, arch, (0.2,)) == (2,)
    assert argmax_utility(params, arch, (100.0,)) == (0,)


def test_bounded_relu_cap():
    arch = MvnnArch((1,), (1,), cutoffs=(0.5,), skip=False)
    params = MvnnParams((np.array([[3.0]]), np.array([[2.0]])), (np.array([-0.5]),))
    # pre-activation 3 - 0.5 = 2.5, capped at 0.5, times 2
    assert forward(params, arch, (1,)) == 1.0


def test_init_deterministic_and_feasible():
    arch = MvnnArch((1, 2, 3), (8, 4))
    a, b = init(arch, 7), init(arch, 7)
    assert a.equals(b) and a.is_feasible()
    assert not a.equals(init(arch, 8))
    assert project_params(a).equals(a)
    assert forward(a, arch, (0, 0, 0)) == 0.0
    assert a.skip is not None and np.all(a.skip <= 1 / 3)
    for w, fan in zip(a.weights, arch.layer_sizes[:-1]):
        assert np.all((w >= 0) & (w <= 2 / fan))


def test_project_params():
    p = MvnnParams((np.array([[-0.3, 0.7]]), np.array([[1.0]])), (np.array([0.2]),), np.array([-1.0, 2.0]))
    q = project_params(p)
    assert q.weights[0].tolist() == [[0.0, 0.7]]
    assert q.biases[0].tolist() == [0.0]
    assert q.skip.tolist() == [0.0, 2.0]
    assert project_params(q).equals(q)


def test_arch_validation():
    with pytest.raises(InvalidInputError):
        MvnnArch((1,), (0,))
    with pytest.raises(InvalidInputError):
        MvnnArch((1,), (2,), cutoffs=(0.0,))
    with pytest.raises(InvalidInputError):
        MvnnArch((1,), (2, 2), cutoffs=(1.0,))
    arch = MvnnArch((1, 1), (2,))
    with pytest.raises(InvalidInputError):
        forward(init(arch, 0), arch, (1, 1, 1))
    with pytest.raises(InvalidInputError):
        Mvnn(MvnnArch((1, 1), (3,)), init(arch, 0))


def test_argmax_cap():
    arch = MvnnArch((1,) * 23, (2,))
    with pytest.raises(EnumerationTooLargeError):
        argmax_utility(init(arch, 0), arch, np.zeros(23))


def test_free_goods_and_prohibitive_prices():
    arch = MvnnArch((2, 1, 3), (6,))
    params = init(arch, 1)
    assert argmax_utility(params, arch, np.zeros(3)) == (2, 1, 3)
    assert argmax_utility(params, arch, np.full(3, 1e6)) == (0, 0, 0)


def random_params(arch, rng):
    p = init(arch, int(rng.integers(2**31)))
    # exercise negative biases and weights beyond the init range
    return MvnnParams(tuple(w * rng.uniform(0, 3) for w in p.weights),
                      tuple(-rng.uniform(0, 1, b.shape) for b in p.biases), p.skip)


def test_monotonicity_and_normalisation_many_pairs():
    rng = np.random.default_rng(0)
    caps = (3, 1, 2, 1)
    archs = [MvnnArch(caps, (8,)), MvnnArch(caps, (5, 4), cutoffs=(0.7, 2.0)), MvnnArch(caps, (6,), skip=False)]
    zero = np.zeros((1, 4))
    for k in range(100):
        arch = archs[k % 3]
        params = random_params(arch, rng)
        assert forward_batch(params, arch, zero)[0] == 0.0
        y = rng.integers(0, np.array(caps) + 1, size=(10, 4))
        x = rng.integers(0, y + 1)
        fx, fy = forward_batch(params, arch, x), forward_batch(params, arch, y)
        assert np.all(fx <= fy + 1e-12)
        assert np.all(fy <= forward_batch(params, arch, np.array([caps]))[0] + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_argmax_matches_scan(seed):
    rng = np.random.default_rng(seed)
    arch = MvnnArch((2, 1, 2), (6,))
    params = random_params(arch, rng)
    p = rng.uniform(0, 1, 3)
    bundles = enumerate_bundles(arch.caps)
    u = np.array([forward(params, arch, b) - float(p @ b) for b in bundles])
    x = argmax_utility(params, arch, p)
    assert forward(params, arch, x) - float(p @ np.array(x)) >= u.max() - 1e-12


@pytest.mark.parametrize("widths,skip", [((5,), True), ((4, 3), True), ((3,), False)])
def test_gradient_matches_finite_differences(widths, skip):
    rng = np.random.default_rng(1)
    arch = MvnnArch((2, 3), widths, skip=skip)
    p = init(arch, 3)
    params = MvnnParams(tuple(w + 0.3 for w in p.weights),
                        tuple(-rng.uniform(0.05, 0.3, b.shape) for b in p.biases), p.skip)
    X = np.array([[1, 2], [2, 3], [0, 1]], dtype=float)
    coefs = np.array([0.7, -1.3, 2.0])
    grads, out = weighted_grad(params, arch, X, coefs)
    assert np.allclose(out, forward_batch(params, arch, X))
    num = numeric_grad(lambda: float(coefs @ forward_batch(params, arch, X)), params.arrays())
    for g, n in zip(grads, num):
        assert np.allclose(g, n, atol=1e-6)


def test_checkpoint_round_trip_bit_exact():
    arch = MvnnArch((2, 1, 3), (7, 3), cutoffs=(1.0, 0.5))
    params = random_params(arch, np.random.default_rng(5))
    back, arch2 = load_checkpoint(json.loads(dumps_checkpoint(params, arch)))
    assert arch2 == arch and back.equals(params)
    X = enumerate_bundles(arch.caps)
    assert np.array_equal(forward_batch(back, arch2, X), forward_batch(params, arch, X))


def test_scaled_model():
    arch = MvnnArch((1, 2), (4,))
    m = Mvnn(arch, init(arch, 0))
    assert np.allclose(m.scaled(3.0).table, 3.0 * m.table)
    assert m((1, 2)) == m.table[-1]

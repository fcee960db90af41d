"""Monotone value networks.

A network maps a bundle x to

    M(x) = W^K phi(... phi(W^1 (D x) + b^1) ...) + w_skip . (D x)

with D = diag(1/c), non-negative weights, non-positive biases and the bounded
ReLU phi(z) = min(t, max(0, z)). Those sign constraints make M monotone with
M(0) = 0. Everything is plain numpy with hand-written backprop; networks are
tiny and bundle spaces are enumerated exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
import numpy as np

from .core import (InvalidInputError, argmax_first, as_bundle, as_capacities, as_prices,
                   bundle_index, enumerate_bundles)

UTILITY_TIE_TOL = 1e-12


@dataclass(frozen=True)
class MvnnArch:
    caps: tuple[int, ...]
    widths: tuple[int, ...] = (16,)
    cutoffs: tuple[float, ...] | None = None
    skip: bool = True

    def __post_init__(self):
        object.__setattr__(self, "caps", as_capacities(self.caps))
        widths = tuple(int(w) for w in self.widths)
        if any(w < 1 for w in widths):
            raise InvalidInputError("hidden widths must be >= 1")
        cut = (1.0,) * len(widths) if self.cutoffs is None else tuple(float(t) for t in self.cutoffs)
        if len(cut) != len(widths):
            raise InvalidInputError("need one cutoff per hidden layer")
        if any(t <= 0 for t in cut):
            raise InvalidInputError("cutoffs must be positive")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "cutoffs", cut)

    @property
    def m(self) -> int:
        return len(self.caps)

    @property
    def scale(self) -> np.ndarray:
        """Diagonal of the input normalisation D."""
        return 1.0 / np.asarray(self.caps, dtype=float)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.m,) + self.widths + (1,)

    def to_json(self):
        return {"caps": list(self.caps), "widths": list(self.widths),
                "cutoffs": list(self.cutoffs), "skip": self.skip}


@dataclass(frozen=True)
class MvnnParams:
    """Layer weights ``W[k]`` of shape (out, in), hidden biases, optional skip row."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    skip: np.ndarray | None = None

    def arrays(self) -> list[np.ndarray]:
        out = list(self.weights) + list(self.biases)
        if self.skip is not None:
            out.append(self.skip)
        return out

    def copy(self) -> "MvnnParams":
        return MvnnParams(tuple(w.copy() for w in self.weights), tuple(b.copy() for b in self.biases),
                          None if self.skip is None else self.skip.copy())

    def is_feasible(self) -> bool:
        ok = all(np.all(w >= 0) for w in self.weights) and all(np.all(b <= 0) for b in self.biases)
        return bool(ok and (self.skip is None or np.all(self.skip >= 0)))

    def equals(self, other: "MvnnParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def init(arch: MvnnArch, seed: int) -> MvnnParams:
    """Weights U(0, 2/fan_in), zero biases, skip weights U(0, 1/m)."""
    rng = np.random.default_rng(seed)
    sizes = arch.layer_sizes
    weights = tuple(rng.uniform(0.0, 2.0 / sizes[k], size=(sizes[k + 1], sizes[k]))
                    for k in range(len(sizes) - 1))
    biases = tuple(np.zeros(w) for w in arch.widths)
    skip = rng.uniform(0.0, 1.0 / arch.m, size=arch.m) if arch.skip else None
    return MvnnParams(weights, biases, skip)


def project_params(params: MvnnParams) -> MvnnParams:
    """Clamp weights to >= 0 and biases to <= 0. Idempotent."""
    return MvnnParams(tuple(np.maximum(w, 0.0) for w in params.weights),
                      tuple(np.minimum(b, 0.0) for b in params.biases),
                      None if params.skip is None else np.maximum(params.skip, 0.0))


def project_inplace(params: MvnnParams) -> None:
    for w in params.weights:
        np.maximum(w, 0.0, out=w)
    for b in params.biases:
        np.minimum(b, 0.0, out=b)
    if params.skip is not None:
        np.maximum(params.skip, 0.0, out=params.skip)


def _check(params: MvnnParams, arch: MvnnArch):
    sizes = arch.layer_sizes
    if len(params.weights) != len(sizes) - 1 or len(params.biases) != len(arch.widths):
        raise InvalidInputError("parameters do not match the architecture depth")
    for k, w in enumerate(params.weights):
        if w.shape != (sizes[k + 1], sizes[k]):
            raise InvalidInputError(f"layer {k} weight shape {w.shape} != {(sizes[k + 1], sizes[k])}")
    if (params.skip is not None) != arch.skip:
        raise InvalidInputError("skip weights present iff the architecture has a skip connection")


def forward_batch(params: MvnnParams, arch: MvnnArch, bundles: np.ndarray) -> np.ndarray:
    """Network outputs for a (N, m) array of bundles."""
    x = np.asarray(bundles, dtype=float)
    if x.shape[-1] != arch.m:
        raise InvalidInputError(f"bundles have {x.shape[-1]} items, network expects {arch.m}")
    z0 = x * arch.scale
    h = z0
    for w, b, t in zip(params.weights[:-1], params.biases, arch.cutoffs):
        h = np.clip(h @ w.T + b, 0.0, t)
    out = h @ params.weights[-1][0]
    if params.skip is not None:
        out = out + z0 @ params.skip
    return out


def forward(params: MvnnParams, arch: MvnnArch, x) -> float:
    b = as_bundle(x, arch.caps)
    return float(forward_batch(params, arch, np.asarray([b]))[0])


def weighted_grad(params: MvnnParams, arch: MvnnArch, bundles: np.ndarray,
                  coefs: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradient of sum_k coefs[k] * M(bundles[k]) w.r.t. every parameter array.

    Returns ``(grads, outputs)`` with grads aligned to ``params.arrays()``.
    The bReLU derivative is taken as 1 strictly inside (0, t) and 0 elsewhere.
    """
    x = np.asarray(bundles, dtype=float)
    coefs = np.asarray(coefs, dtype=float)
    z0 = x * arch.scale
    acts = [z0]
    masks = []
    h = z0
    for w, b, t in zip(params.weights[:-1], params.biases, arch.cutoffs):
        pre = h @ w.T + b
        masks.append((pre > 0) & (pre < t))
        h = np.clip(pre, 0.0, t)
        acts.append(h)
    out = h @ params.weights[-1][0]
    if params.skip is not None:
        out = out + z0 @ params.skip

    n_hidden = len(arch.widths)
    gw = [None] * (n_hidden + 1)
    gb = [None] * n_hidden
    gw[-1] = (coefs @ acts[-1])[None, :]
    delta = coefs[:, None] * params.weights[-1][0][None, :]
    for k in range(n_hidden - 1, -1, -1):
        delta = delta * masks[k]
        gb[k] = delta.sum(axis=0)
        gw[k] = delta.T @ acts[k]
        if k > 0:
            delta = delta @ params.weights[k]
    grads = gw + gb
    if params.skip is not None:
        grads.append(coefs @ z0)
    return grads, out


class Mvnn:
    """A network bound to its architecture, with its full value table cached.

    :meth:`scaled` multiplies the final layer and the skip row, which scales
    the whole function because the output layer is linear.
    """

    def __init__(self, arch: MvnnArch, params: MvnnParams):
        _check(params, arch)
        self.arch = arch
        self.params = params

    @property
    def caps(self):
        return self.arch.caps

    @cached_property
    def table(self) -> np.ndarray:
        t = forward_batch(self.params, self.arch, enumerate_bundles(self.arch.caps))
        t.setflags(write=False)
        return t

    def __call__(self, x) -> float:
        return float(self.table[bundle_index(as_bundle(x, self.caps), self.caps)])

    def scaled(self, factor: float) -> "Mvnn":
        p = self.params.copy()
        p.weights[-1][...] *= factor
        if p.skip is not None:
            p.skip[...] *= factor
        return Mvnn(self.arch, p)

    def to_json(self) -> dict:
        return checkpoint(self.params, self.arch)


def argmax_utility(params: MvnnParams, arch: MvnnArch, p) -> tuple[int, ...]:
    prices = np.asarray(as_prices(p, arch.m))
    bundles = enumerate_bundles(arch.caps)
    u = forward_batch(params, arch, bundles) - bundles @ prices
    return tuple(int(v) for v in bundles[argmax_first(u, UTILITY_TIE_TOL)])


def checkpoint(params: MvnnParams, arch: MvnnArch) -> dict:
    return {"arch": arch.to_json(),
            "weights": [w.tolist() for w in params.weights],
            "biases": [b.tolist() for b in params.biases],
            "skip": None if params.skip is None else params.skip.tolist()}


def load_checkpoint(doc: dict) -> tuple[MvnnParams, MvnnArch]:
    a = doc["arch"]
    arch = MvnnArch(tuple(a["caps"]), tuple(a["widths"]), tuple(a["cutoffs"]), bool(a["skip"]))
    params = MvnnParams(tuple(np.array(w, dtype=float).reshape(-1, s) for w, s in
                              zip(doc["weights"], arch.layer_sizes[:-1])),
                        tuple(np.array(b, dtype=float) for b in doc["biases"]),
                        None if doc["skip"] is None else np.array(doc["skip"], dtype=float))
    _check(params, arch)
    return params, arch


def dumps_checkpoint(params: MvnnParams, arch: MvnnArch) -> str:
    return json.dumps(checkpoint(params, arch))

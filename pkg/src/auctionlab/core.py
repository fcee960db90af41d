"""Domain types shared by every module: bundles, reports, allocations.

Bundles are plain tuples of non-negative ints so they can key dicts and sets.
Anything that needs the whole bundle space works on the array returned by
:func:`enumerate_bundles`, whose rows are in lexicographic order; the row index
of a bundle is its mixed-radix code (see :func:`bundle_index`).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

Bundle = tuple[int, ...]
Allocation = tuple[Bundle, ...]

ENUMERATION_CAP = 2**22
TOL = 1e-9


class AuctionLabError(Exception):
    """Base class for errors raised by auctionlab."""


class InvalidInputError(AuctionLabError, ValueError):
    pass


class EnumerationTooLargeError(AuctionLabError):
    pass


class ExactOracleUnavailableError(AuctionLabError):
    pass


class NoFeasibleQueryError(AuctionLabError):
    pass


def as_capacities(caps: Iterable[int]) -> tuple[int, ...]:
    out = tuple(int(c) for c in caps)
    if len(out) == 0:
        raise InvalidInputError("capacities must contain at least one item")
    if any(c < 1 for c in out):
        raise InvalidInputError(f"every capacity must be >= 1, got {out}")
    return out


def as_bundle(x: Iterable[int], caps: Sequence[int] | None = None) -> Bundle:
    """Validate and normalise a bundle to a tuple of ints."""
    out = tuple(int(v) for v in np.asarray(x).ravel())
    if any(v < 0 for v in out):
        raise InvalidInputError(f"bundle entries must be non-negative, got {out}")
    if caps is not None:
        if len(out) != len(caps):
            raise InvalidInputError(
                f"bundle has {len(out)} entries but there are {len(caps)} items")
        if any(v > c for v, c in zip(out, caps)):
            raise InvalidInputError(f"bundle {out} exceeds capacities {tuple(caps)}")
    return out


def as_prices(p: Iterable[float], m: int | None = None) -> tuple[float, ...]:
    out = tuple(float(v) for v in np.asarray(p, dtype=float).ravel())
    if m is not None and len(out) != m:
        raise InvalidInputError(f"price vector has {len(out)} entries, expected {m}")
    if any(not np.isfinite(v) or v < 0 for v in out):
        raise InvalidInputError(f"prices must be finite and non-negative, got {out}")
    return out


def zero_bundle(m: int) -> Bundle:
    return (0,) * m


@dataclass(frozen=True)
class DemandReport:
    """A bidder's answer ``bundle`` to the linear demand query ``prices``."""

    bundle: Bundle
    prices: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "bundle", as_bundle(self.bundle))
        object.__setattr__(self, "prices", as_prices(self.prices, len(self.bundle)))

    @property
    def payment(self) -> float:
        """Total price of the demanded bundle, a lower bound on its value."""
        return float(np.dot(self.bundle, self.prices))


@dataclass(frozen=True)
class ValueReport:
    bundle: Bundle
    value: float

    def __post_init__(self):
        object.__setattr__(self, "bundle", as_bundle(self.bundle))
        value = float(self.value)
        if not np.isfinite(value) or value < 0:
            raise InvalidInputError(f"reported value must be finite and >= 0, got {value}")
        object.__setattr__(self, "value", value)


@dataclass(frozen=True)
class BidderReports:
    """Everything one bidder has told the auctioneer so far.

    Duplicate value reports for a bundle are collapsed; two value reports for
    the same bundle with different values are rejected.
    """

    dq: tuple[DemandReport, ...] = ()
    vq: tuple[ValueReport, ...] = ()

    def __post_init__(self):
        dq = tuple(r if isinstance(r, DemandReport) else DemandReport(*r) for r in self.dq)
        vq_in = tuple(r if isinstance(r, ValueReport) else ValueReport(*r) for r in self.vq)
        seen: dict[Bundle, float] = {}
        vq = []
        for r in vq_in:
            if r.bundle in seen:
                if abs(seen[r.bundle] - r.value) > TOL:
                    raise InvalidInputError(
                        f"conflicting value reports for bundle {r.bundle}: "
                        f"{seen[r.bundle]} vs {r.value}")
                continue
            seen[r.bundle] = r.value
            vq.append(r)
        dims = {len(r.bundle) for r in dq} | {len(r.bundle) for r in vq}
        if len(dims) > 1:
            raise InvalidInputError(f"reports mix bundle dimensions {sorted(dims)}")
        object.__setattr__(self, "dq", dq)
        object.__setattr__(self, "vq", tuple(vq))

    @property
    def m(self) -> int | None:
        for r in self.dq + self.vq:
            return len(r.bundle)
        return None

    def __len__(self) -> int:
        return len(self.dq) + len(self.vq)

    def with_dq(self, bundle: Iterable[int], prices: Iterable[float]) -> "BidderReports":
        return BidderReports(self.dq + (DemandReport(tuple(bundle), tuple(prices)),), self.vq)

    def with_vq(self, bundle: Iterable[int], value: float) -> "BidderReports":
        return BidderReports(self.dq, self.vq + (ValueReport(tuple(bundle), value),))

    @cached_property
    def vq_bundles(self) -> frozenset[Bundle]:
        return frozenset(r.bundle for r in self.vq)

    @cached_property
    def inferred_values(self) -> Mapping[Bundle, float]:
        """Inferred value of every bundle that appears in some report.

        Bundles absent from the mapping have inferred value 0.
        """
        out: dict[Bundle, float] = {}
        for r in self.dq:
            out[r.bundle] = max(out.get(r.bundle, 0.0), r.payment)
        for r in self.vq:
            out[r.bundle] = r.value
        return out

    def inferred_value(self, bundle: Iterable[int]) -> float:
        x = as_bundle(bundle)
        if self.m is not None and len(x) != self.m:
            raise InvalidInputError(
                f"bundle {x} has dimension {len(x)}, reports have dimension {self.m}")
        return self.inferred_values.get(x, 0.0)


def inferred_value(reports: BidderReports, bundle: Iterable[int]) -> float:
    """Largest lower bound on the bidder's value for ``bundle`` implied by ``reports``.

    The exact value if the bundle was value-queried, otherwise the highest total
    price at which the bidder demanded exactly this bundle (0 if never).
    """
    return reports.inferred_value(bundle)


def is_feasible(allocation: Sequence[Sequence[int]], caps: Sequence[int]) -> bool:
    caps = as_capacities(caps)
    a = np.asarray(allocation, dtype=np.int64)
    if a.ndim != 2 or a.shape[1] != len(caps):
        raise InvalidInputError(
            f"allocation must be n x {len(caps)}, got shape {a.shape}")
    if np.any(a < 0):
        raise InvalidInputError("allocation contains negative counts")
    return bool(np.all(a.sum(axis=0) <= np.asarray(caps)))


def bundle_space_size(caps: Sequence[int]) -> int:
    return int(np.prod([c + 1 for c in caps], dtype=object))


def check_enumerable(caps: Sequence[int], cap: int = ENUMERATION_CAP) -> int:
    size = bundle_space_size(caps)
    if size > cap:
        raise EnumerationTooLargeError(
            f"bundle space has {size} bundles, above the enumeration cap of {cap}")
    return size


@lru_cache(maxsize=64)
def _enumerate(caps: tuple[int, ...]) -> np.ndarray:
    grid = np.array(list(itertools.product(*(range(c + 1) for c in caps))), dtype=np.int64)
    grid.setflags(write=False)
    return grid


def enumerate_bundles(caps: Sequence[int], cap: int = ENUMERATION_CAP) -> np.ndarray:
    """All bundles as rows of an int array, lexicographic order.

    Raises :class:`EnumerationTooLargeError` when the space exceeds ``cap``.
    The returned array is shared and read-only.
    """
    caps = as_capacities(caps)
    check_enumerable(caps, cap)
    return _enumerate(caps)


def radix_weights(caps: Sequence[int]) -> np.ndarray:
    w = np.ones(len(caps), dtype=np.int64)
    for j in range(len(caps) - 2, -1, -1):
        w[j] = w[j + 1] * (caps[j + 1] + 1)
    return w


def bundle_index(x: Sequence[int] | np.ndarray, caps: Sequence[int]) -> int | np.ndarray:
    """Row of ``x`` in :func:`enumerate_bundles` (vectorised over leading axes)."""
    idx = np.asarray(x, dtype=np.int64) @ radix_weights(caps)
    return int(idx) if np.ndim(idx) == 0 else idx


def argmax_first(values: np.ndarray, tol: float = 0.0) -> int:
    """Index of the first entry within ``tol`` of the maximum.

    With rows in lexicographic order this is the lexicographically smallest
    maximiser.
    """
    best = np.max(values)
    return int(np.flatnonzero(values >= best - tol)[0])


def utility_tol(scale: float) -> float:
    """Tie tolerance for utility comparisons of magnitude ``scale``."""
    return 1e-12 * max(1.0, abs(scale))


def allocation_to_tuple(allocation: Iterable[Iterable[int]]) -> Allocation:
    return tuple(tuple(int(v) for v in b) for b in allocation)


@dataclass(frozen=True)
class Market:
    """Capacities plus the cached bundle space; convenience for the solvers."""

    caps: tuple[int, ...]
    bundles: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "caps", as_capacities(self.caps))
        object.__setattr__(self, "bundles", enumerate_bundles(self.caps))

    @property
    def m(self) -> int:
        return len(self.caps)

    def index(self, x) -> int:
        return bundle_index(x, self.caps)

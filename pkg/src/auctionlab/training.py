"""Mixed training of a monotone value network on demand and value reports.

Each epoch first takes one SGD step per demand report on the hinge

    ( [M(x_hat) - <p, x_hat>] - [M(x) - <p, x>] )^+,

where x is the reported bundle and x_hat the network's own utility maximiser
at p, then SGD steps on shuffled batches of value reports with squared error.
x_hat is recomputed every ``cache_every`` epochs and reused in between; its
dependence on the parameters is ignored in the gradient.

Training runs in normalised currency: values and prices are divided by the
largest report magnitude, and the result is mapped back by scaling the output
layer and skip row, which is exact because the output layer is linear.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (BidderReports, DemandReport, InvalidInputError, ValueReport, argmax_first,
                   enumerate_bundles)
from .mvnn import (UTILITY_TIE_TOL, Mvnn, MvnnArch, MvnnParams, argmax_utility, forward,
                   forward_batch, init, project_inplace, weighted_grad)


@dataclass(frozen=True)
class TrainHyperparams:
    epochs: int = 200
    lr: float = 0.05
    l2: float = 1e-6
    cache_every: int = 5
    batch_size: int = 4
    seed: int = 0
    optimizer: str = "sgd"
    # learning rate decays geometrically to lr * lr_final over the epochs
    lr_final: float = 0.01

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.lr <= 0:
            raise InvalidInputError("learning rate must be positive")
        if self.l2 < 0:
            raise InvalidInputError("l2 coefficient must be >= 0")
        if self.cache_every < 1 or self.batch_size < 1:
            raise InvalidInputError("cache_every and batch_size must be >= 1")
        if not 0 < self.lr_final <= 1:
            raise InvalidInputError("lr_final must lie in (0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidInputError("optimizer must be 'sgd' or 'adam'")


# Opt-in adaptive preset used by the mechanisms; fits toy reports far better
# than plain SGD at the same epoch budget.
ADAM_PRESET = TrainHyperparams(epochs=300, lr=0.02, optimizer="adam")


@dataclass(frozen=True)
class TrainResult:
    params: MvnnParams
    loss: float
    dq_loss: float
    vq_loss: float
    model: Mvnn


def dq_loss(params: MvnnParams, arch: MvnnArch, r: DemandReport):
    """Hinge on the predicted utility gap; returns ``(loss, x_hat)``."""
    x_hat = argmax_utility(params, arch, r.prices)
    p = np.asarray(r.prices)
    u_hat = forward(params, arch, x_hat) - float(np.dot(p, x_hat))
    u_rep = forward(params, arch, r.bundle) - float(np.dot(p, r.bundle))
    return max(0.0, u_hat - u_rep), x_hat


def vq_loss(params: MvnnParams, arch: MvnnArch, r: ValueReport) -> float:
    return (forward(params, arch, r.bundle) - r.value) ** 2


def report_scale(reports: BidderReports) -> float:
    mags = [r.value for r in reports.vq] + [r.payment for r in reports.dq]
    s = max(mags, default=0.0)
    return s if s > 0 else 1.0


def data_loss(model: Mvnn, reports: BidderReports) -> tuple[float, float]:
    """Unregularised summed DQ hinge and VQ squared-error losses of ``model``."""
    bundles = enumerate_bundles(model.caps)
    table = model.table
    dq = 0.0
    for r in reports.dq:
        p = np.asarray(r.prices)
        u = table - bundles @ p
        dq += max(0.0, float(np.max(u)) - (model(r.bundle) - float(np.dot(p, r.bundle))))
    vq = sum((model(r.bundle) - r.value) ** 2 for r in reports.vq)
    return dq, float(vq)


class _Adam:
    def __init__(self, arrays, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mixed_train(reports: BidderReports, arch: MvnnArch, hp: TrainHyperparams,
                params: MvnnParams | None = None) -> TrainResult:
    """Train a network on ``reports``; returns parameters in original currency."""
    theta = init(arch, hp.seed) if params is None else params.copy()
    if len(reports) == 0:
        model = Mvnn(arch, theta)
        return TrainResult(theta, 0.0, 0.0, 0.0, model)

    scale = report_scale(reports)
    bundles = enumerate_bundles(arch.caps)
    dq_x = np.array([r.bundle for r in reports.dq], dtype=float).reshape(-1, arch.m)
    dq_p = np.array([r.prices for r in reports.dq], dtype=float).reshape(-1, arch.m) / scale
    vq_x = np.array([r.bundle for r in reports.vq], dtype=float).reshape(-1, arch.m)
    vq_v = np.array([r.value for r in reports.vq], dtype=float) / scale
    n_rep = len(reports)
    rng = np.random.default_rng([hp.seed, 1])

    arrays = theta.arrays()
    n_weights = len(theta.weights)
    # L2 acts on weights and the skip row, not on biases
    decay = [True] * n_weights + [False] * len(theta.biases) + ([True] if theta.skip is not None else [])
    l2 = 2.0 * hp.l2 / n_rep
    adam = _Adam(arrays, hp.lr) if hp.optimizer == "adam" else None
    lr = hp.lr

    def step(grads):
        if l2:
            grads = [g + l2 * a if d else g for g, a, d in zip(grads, arrays, decay)]
        if adam is None:
            for a, g in zip(arrays, grads):
                a -= lr * g
        else:
            adam.lr = lr
            adam.step(arrays, grads)
        project_inplace(theta)

    def decay_only():
        # inactive hinge: plain weight decay, optimiser state untouched so
        # stale momentum is not replayed
        if l2:
            for a, d in zip(arrays, decay):
                if d:
                    a -= lr * l2 * a
            project_inplace(theta)

    x_hat = np.zeros_like(dq_x)
    coefs2 = np.array([1.0, -1.0])
    for epoch in range(hp.epochs):
        lr = hp.lr * hp.lr_final ** (epoch / max(1, hp.epochs - 1))
        if len(dq_x) and epoch % hp.cache_every == 0:
            table = forward_batch(theta, arch, bundles)
            util = table[None, :] - dq_p @ bundles.T
            for r in range(len(dq_x)):
                x_hat[r] = bundles[argmax_first(util[r], UTILITY_TIE_TOL)]
        for r in range(len(dq_x)):
            pair = np.stack([x_hat[r], dq_x[r]])
            if np.array_equal(pair[0], pair[1]):
                decay_only()
                continue
            out = forward_batch(theta, arch, pair)
            gap = (out[0] - dq_p[r] @ pair[0]) - (out[1] - dq_p[r] @ pair[1])
            if gap <= 0:
                decay_only()
                continue
            grads, _ = weighted_grad(theta, arch, pair, coefs2)
            step(grads)
        if len(vq_x):
            order = rng.permutation(len(vq_x))
            for k in range(0, len(order), hp.batch_size):
                idx = order[k:k + hp.batch_size]
                pred = forward_batch(theta, arch, vq_x[idx])
                coefs = 2.0 * (pred - vq_v[idx]) / len(idx)
                grads, _ = weighted_grad(theta, arch, vq_x[idx], coefs)
                step(grads)

    model = Mvnn(arch, theta).scaled(scale)
    dq, vq = data_loss(model, reports)
    return TrainResult(model.params, dq + vq, dq, vq, model)


@dataclass(frozen=True)
class InconsistencyResult:
    loss: float
    flag: bool
    threshold: float
    restarts: int


def mean_report_magnitude(reports: BidderReports) -> float:
    mags = [r.value for r in reports.vq] + [r.payment for r in reports.dq]
    return float(np.mean(mags)) if mags else 0.0


def detect_inconsistency(reports: BidderReports, arch: MvnnArch, hp: TrainHyperparams,
                         restarts: int = 10, threshold_frac: float = 0.05) -> InconsistencyResult:
    """Smallest data loss over ``restarts`` seeded trainings, flagged against a threshold.

    A fit with near-zero loss certifies that some monotone network explains
    every report. A loss that stays above ``threshold_frac`` times the mean
    report magnitude on every restart means no consistent fit was found; it
    does not prove that none exists.
    """
    if restarts < 1:
        raise InvalidInputError("restarts must be >= 1")
    threshold = threshold_frac * mean_report_magnitude(reports)
    if len(reports) == 0:
        return InconsistencyResult(0.0, False, threshold, restarts)
    best = min(mixed_train(reports, arch, replace(hp, seed=hp.seed + k)).loss for k in range(restarts))
    return InconsistencyResult(best, best > threshold, threshold, restarts)

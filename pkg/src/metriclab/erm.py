"""Pairwise empirical risk and subgradient training of the sub-networks.

The empirical objective is the U-statistic
    E_S(d) = 1/(n(n-1)) * sum_{i != j} loss(tau(y_i, y_j) * d(x_i, x_j)),
computed exactly over unordered pairs (the metric and the reducing function
are both symmetric, so each unordered pair carries both ordered terms).

Training is plain subgradient descent on the sub-network parameters only;
the product and sign gadgets stay fixed, except that an optional annealing
schedule swaps in larger sign-approximator widths early so gradients stay
alive while the output would otherwise saturate at +-1.  The returned
parameters are the best-iterate snapshot (lowest recorded epoch risk), so
this is a trained proxy for the empirical minimizer, not a certified one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ParameterError
from .gadgets import build_sign_approx
from .losses import LossFunction
from .structured import (
    StructuredMetricNet,
    aggregate_complexity,
    pair_backward,
    pair_forward,
    pair_values,
)

PAIR_STRATEGIES = ("all-pairs", "uniform-subsample")
_CHUNK = 1 << 17


@dataclass
class TrainConfig:
    epochs: int = 100
    pair_batch: int = 512
    lr_init: float = 0.5
    lr_decay: float = 1.0
    a_schedule: list | None = None  # per-epoch a values; last value persists
    seed: int = 0
    pair_strategy: str = "all-pairs"
    pairs_per_epoch: int | None = None  # uniform-subsample only
    init: str = "uniform_scaled"  # builder scheme: symmetric uniform / sqrt(fan_in)

    def __post_init__(self):
        if self.epochs < 1 or self.pair_batch < 1:
            raise ParameterError("epochs and pair_batch must be >= 1")
        if self.lr_init < 0.0 or self.lr_decay <= 0.0:
            raise ParameterError("learning-rate schedule must be positive")
        if self.pair_strategy not in PAIR_STRATEGIES:
            raise ParameterError(f"pair_strategy must be one of {PAIR_STRATEGIES}")
        if self.a_schedule is not None:
            a = np.asarray(self.a_schedule, dtype=np.float64)
            if a.size == 0 or np.any(a <= 0.0) or np.any(np.diff(a) > 0.0):
                raise ParameterError("a_schedule must be positive and non-increasing")


@dataclass
class TrainReport:
    risk: np.ndarray
    grad_norm: np.ndarray
    active_fraction: np.ndarray
    a_values: np.ndarray
    final_risk: float
    best_epoch: int

    def rows(self):
        for e in range(self.risk.size):
            yield (e, self.risk[e], self.grad_norm[e], self.active_fraction[e], self.a_values[e])


def geometric_a_schedule(epochs: int, start: float = 3.0, decay: float = 0.93,
                         target: float = 0.1) -> list:
    """Annealing schedule for the sign width: wide early (so the linear band
    covers the initial pre-activations and gradients stay alive), geometric
    decay to the target hypothesis class."""
    if start <= 0 or not 0 < decay <= 1 or target <= 0:
        raise ParameterError("schedule parameters must be positive (decay in (0, 1])")
    return [max(target, start * decay**e) for e in range(epochs)]


def hinge_subgradient(tau, d_value):
    """d/dd of (1 + tau*d)_+ : tau on the active branch, 0 at and past the kink."""
    tau = np.asarray(tau, dtype=np.float64)
    d_value = np.asarray(d_value, dtype=np.float64)
    out = np.where(1.0 + tau * d_value > 0.0, tau, 0.0)
    return float(out) if out.ndim == 0 else out


def _pair_loss_values(net, X, y, loss, iu, ju):
    trace = pair_forward(net, X[iu], X[ju])
    tau = np.where(y[iu] == y[ju], 1.0, -1.0)
    return loss.eval(tau * trace.d), trace, tau


def _metric_values(metric, Xa, Xb):
    if isinstance(metric, StructuredMetricNet):
        return pair_values(metric, Xa, Xb)
    return np.asarray(metric(Xa, Xb), dtype=np.float64)


def empirical_risk(metric, data, loss: LossFunction, strategy: str = "all-pairs",
                   seed: int = 0, num_pairs: int | None = None) -> float:
    """U-statistic pair risk over ordered pairs i != j.

    The metric may be a StructuredMetricNet or any batched pair function.
    Both orderings of a pair contribute the same term (tau and the metric
    are symmetric), so the exact average runs over unordered pairs; the
    subsample strategy draws ordered pairs uniformly and is unbiased.
    """
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n < 2:
        raise ParameterError(f"pair risk needs n >= 2 samples, got {n}")
    if strategy == "all-pairs":
        iu, ju = np.triu_indices(n, k=1)
        total = 0.0
        for lo in range(0, iu.size, _CHUNK):
            i, j = iu[lo:lo + _CHUNK], ju[lo:lo + _CHUNK]
            tau = np.where(y[i] == y[j], 1.0, -1.0)
            total += float(loss.eval(tau * _metric_values(metric, X[i], X[j])).sum())
        return total / iu.size
    if strategy == "uniform-subsample":
        rng = np.random.default_rng(seed)
        k = num_pairs if num_pairs is not None else min(n * (n - 1), 16384)
        i, j = _sample_ordered_pairs(rng, n, k)
        tau = np.where(y[i] == y[j], 1.0, -1.0)
        return float(loss.eval(tau * _metric_values(metric, X[i], X[j])).mean())
    raise ParameterError(f"unknown strategy {strategy!r}")


def _sample_ordered_pairs(rng, n, k):
    i = rng.integers(n, size=k)
    j = rng.integers(n, size=k)
    clash = i == j
    while clash.any():
        j[clash] = rng.integers(n, size=int(clash.sum()))
        clash = i == j
    return i, j


def _epoch_a(config: TrainConfig, epoch: int, default_a: float) -> float:
    if config.a_schedule is None:
        return default_a
    sched = config.a_schedule
    return float(sched[min(epoch, len(sched) - 1)])


def _snapshot(net: StructuredMetricNet):
    return [[(l.weights.copy(), l.bias.copy()) for l in h.layers] for h in net.subnets]


def _restore(net: StructuredMetricNet, snap):
    for h, layers in zip(net.subnets, snap):
        for layer, (w, b) in zip(h.layers, layers):
            layer.weights[...] = w
            layer.bias[...] = b


def train(net: StructuredMetricNet, data, config: TrainConfig,
          loss: LossFunction, budget=None) -> tuple[StructuredMetricNet, TrainReport]:
    """Subgradient descent on the sub-networks; returns the best iterate.

    Deterministic for a fixed config seed.  Raises DivergenceError (with the
    epoch index) on non-finite losses or gradients.
    """
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n = X.shape[0]
    if n < 2:
        raise ParameterError(f"training needs n >= 2 samples, got {n}")
    if budget is not None and not budget.admits(aggregate_complexity(net)):
        raise ParameterError("network exceeds its hypothesis budget")

    work = net.copy()
    target_a = net.sign.a
    rng = np.random.default_rng(config.seed)
    iu_all, ju_all = np.triu_indices(n, k=1)

    risks, gnorms, actives, a_vals = [], [], [], []
    best = (math.inf, None, -1)
    for epoch in range(config.epochs):
        a_now = _epoch_a(config, epoch, target_a)
        if a_now != work.sign.a:
            work.sign = build_sign_approx(a_now)
        lr = config.lr_init * config.lr_decay**epoch

        if config.pair_strategy == "all-pairs":
            order = rng.permutation(iu_all.size)
            i_stream, j_stream = iu_all[order], ju_all[order]
            # unordered pairs carry both ordered terms of the U-statistic
        else:
            k = config.pairs_per_epoch if config.pairs_per_epoch is not None else 16384
            i_stream, j_stream = _sample_ordered_pairs(rng, n, k)

        batch_risks, batch_sizes, batch_gnorms, batch_active = [], [], [], []
        for lo in range(0, i_stream.size, config.pair_batch):
            iu = i_stream[lo:lo + config.pair_batch]
            ju = j_stream[lo:lo + config.pair_batch]
            vals, trace, tau = _pair_loss_values(work, X, y, loss, iu, ju)
            obj = float(vals.mean())
            if not math.isfinite(obj):
                raise DivergenceError(f"non-finite objective at epoch {epoch}", epoch=epoch)
            upstream = tau * np.asarray(loss.subgradient(tau * trace.d)) / iu.size
            grads = pair_backward(work, trace, upstream)
            gsq = 0.0
            for h, (wg, bg) in zip(work.subnets, grads):
                for layer, gw, gb in zip(h.layers, wg, bg):
                    if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
                        raise DivergenceError(f"non-finite gradient at epoch {epoch}", epoch=epoch)
                    gsq += float((gw * gw).sum() + (gb * gb).sum())
                    if lr != 0.0:
                        layer.weights -= lr * gw
                        layer.bias -= lr * gb
            batch_risks.append(obj)
            batch_sizes.append(iu.size)
            batch_gnorms.append(math.sqrt(gsq))
            batch_active.append(float(np.mean(np.abs(trace.t_pre) <= a_now)))

        # pair-weighted epoch risk: invariant to the shuffle when lr = 0
        risks.append(float(np.average(batch_risks, weights=batch_sizes)))
        gnorms.append(float(np.mean(batch_gnorms)))
        actives.append(float(np.average(batch_active, weights=batch_sizes)))
        a_vals.append(a_now)
        if risks[-1] < best[0]:
            best = (risks[-1], _snapshot(work), epoch)

    if best[1] is not None:
        _restore(work, best[1])
    work.sign = net.sign if work.sign.a == target_a else build_sign_approx(target_a)
    report = TrainReport(
        risk=np.array(risks),
        grad_norm=np.array(gnorms),
        active_fraction=np.array(actives),
        a_values=np.array(a_vals),
        final_risk=best[0],
        best_epoch=best[2],
    )
    return work, report

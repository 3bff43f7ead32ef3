"""Exact-distribution risk evaluation and the learning-curve sweep.

Labels are always integrated out analytically: the synthetic tasks expose
eta(x, x') exactly, so every estimator below averages conditional
expectations over input pairs only.  This changes no expected value and
removes the label-sampling component of the Monte Carlo variance.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as student_t

from .errors import ContractError, ExecutionError, ParameterError
from .erm import TrainConfig, train
from .losses import LossFunction, hinge_loss
from .structured import (
    HypothesisBudget,
    StructuredMetricNet,
    aggregate_complexity,
    make_structured_net,
    pair_values,
)
from .synthetic import (
    SyntheticTask,
    estimate_noise_exponent,
    eta_pairs,
    hinge_metric_values,
    make_task,
    sample_dataset,
    sample_inputs,
)

D_SUP_TOL = 1e-9


def as_pair_fn(metric):
    if isinstance(metric, StructuredMetricNet):
        return lambda X, Xp: pair_values(metric, X, Xp)
    if callable(metric):
        return metric
    raise ParameterError(f"cannot evaluate {type(metric).__name__} as a pair metric")


def _mean_se(vals: np.ndarray) -> tuple[float, float]:
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def _draw_pairs(task: SyntheticTask, mc_pairs: int, seed):
    rng = np.random.default_rng(seed)
    return sample_inputs(task, mc_pairs, rng), sample_inputs(task, mc_pairs, rng)


def generalization_risk(metric, task: SyntheticTask, loss: LossFunction,
                        mc_pairs: int, seed) -> tuple[float, float]:
    """Monte Carlo risk with labels integrated out:
    E[ eta*l(d) + (1 - eta)*l(-d) ] over input pairs."""
    if mc_pairs < 100:
        raise ParameterError("need at least 100 Monte Carlo pairs")
    fn = as_pair_fn(metric)
    X, Xp = _draw_pairs(task, mc_pairs, seed)
    e = eta_pairs(task, X, Xp)
    d = np.asarray(fn(X, Xp), dtype=np.float64)
    return _mean_se(e * loss.eval(d) + (1.0 - e) * loss.eval(-d))


def excess_risk_identity(metric, task: SyntheticTask, mc_pairs: int, seed) -> tuple[float, float]:
    """Monte Carlo estimate of E[ |2 eta - 1| * |d - sgn(1 - 2 eta)| ].

    Valid for the hinge loss and metrics bounded by 1 in sup norm; a metric
    leaving [-1, 1] violates the identity's contract and is rejected.
    """
    if mc_pairs < 100:
        raise ParameterError("need at least 100 Monte Carlo pairs")
    fn = as_pair_fn(metric)
    X, Xp = _draw_pairs(task, mc_pairs, seed)
    e = eta_pairs(task, X, Xp)
    d = np.asarray(fn(X, Xp), dtype=np.float64)
    if np.max(np.abs(d)) > 1.0 + D_SUP_TOL:
        raise ContractError("excess-risk identity requires sup|d| <= 1")
    return _mean_se(np.abs(2.0 * e - 1.0) * np.abs(d - np.sign(1.0 - 2.0 * e)))


@dataclass
class RiskReport:
    risk: float
    risk_se: float
    bayes: float
    bayes_se: float
    excess_direct: float
    excess_direct_se: float
    excess_identity: float
    excess_identity_se: float
    mc_pairs: int
    seed: int

    @property
    def identity_gap(self) -> float:
        return abs(self.excess_direct - self.excess_identity)

    @property
    def identity_gap_limit(self) -> float:
        return 3.0 * math.hypot(self.excess_direct_se, self.excess_identity_se)

    def consistent(self) -> bool:
        return (self.identity_gap <= self.identity_gap_limit
                and self.excess_direct >= -3.0 * self.excess_direct_se)


def risk_report(metric, task: SyntheticTask, loss: LossFunction,
                mc_pairs: int, seed: int) -> RiskReport:
    """Direct and identity-based excess risk on independent MC streams."""
    streams = [np.random.SeedSequence(seed, spawn_key=(k,)) for k in range(3)]
    risk, risk_se = generalization_risk(metric, task, loss, mc_pairs, streams[0])
    X, Xp = _draw_pairs(task, mc_pairs, streams[1])
    e = eta_pairs(task, X, Xp)
    bayes, bayes_se = _mean_se(2.0 * np.minimum(e, 1.0 - e))
    ident, ident_se = excess_risk_identity(metric, task, mc_pairs, streams[2])
    return RiskReport(
        risk=risk, risk_se=risk_se, bayes=bayes, bayes_se=bayes_se,
        excess_direct=risk - bayes, excess_direct_se=math.hypot(risk_se, bayes_se),
        excess_identity=ident, excess_identity_se=ident_se,
        mc_pairs=mc_pairs, seed=seed,
    )


@dataclass
class VarianceExpectationRow:
    q_mean: float
    q_mean_se: float
    q_sq: float
    q_sq_se: float
    bound_rhs: float
    margin: float
    passed: bool


@dataclass
class VarianceExpectationReport:
    theta: float
    c_theta: float
    beta: float
    M: float
    rows: list
    pass_fraction: float


def variance_expectation_check(metrics, task: SyntheticTask, theta: float, c_theta: float,
                               mc_pairs: int, seed: int = 0,
                               loss: LossFunction | None = None) -> VarianceExpectationReport:
    """Check E[q^2] <= M * E[q]^beta for the shifted hinge-loss class,
    with beta = theta/(theta+1) and M = 2^(3/(theta+1)) * c_theta^(1/(theta+1))."""
    if theta <= 0.0 or c_theta <= 0.0:
        raise ParameterError("noise parameters must be positive")
    loss = loss if loss is not None else hinge_loss()
    beta = theta / (theta + 1.0)
    M = 2.0 ** (3.0 / (theta + 1.0)) * c_theta ** (1.0 / (theta + 1.0))

    X, Xp = _draw_pairs(task, mc_pairs, seed)
    e = eta_pairs(task, X, Xp)
    d_rho = hinge_metric_values(e, "theorem")
    l_pos_rho, l_neg_rho = loss.eval(d_rho), loss.eval(-d_rho)

    rows = []
    for metric in metrics:
        d = np.asarray(as_pair_fn(metric)(X, Xp), dtype=np.float64)
        dl_pos = loss.eval(d) - l_pos_rho
        dl_neg = loss.eval(-d) - l_neg_rho
        q = e * dl_pos + (1.0 - e) * dl_neg
        q2 = e * dl_pos**2 + (1.0 - e) * dl_neg**2
        q_mean, q_se = _mean_se(q)
        q_sq, q2_se = _mean_se(q2)
        if q_mean < -3.0 * q_se:
            raise ContractError(
                f"E[q] = {q_mean:.4g} negative beyond noise; d_rho must be optimal"
            )
        rhs = M * max(q_mean, 0.0) ** beta
        rows.append(VarianceExpectationRow(
            q_mean, q_se, q_sq, q2_se, rhs, rhs - q_sq, q_sq <= rhs
        ))
    frac = float(np.mean([r.passed for r in rows])) if rows else math.nan
    return VarianceExpectationReport(theta, c_theta, beta, M, rows, frac)


# ---------------------------------------------------------------------------
# learning-curve sweep
# ---------------------------------------------------------------------------

def reference_exponent(p: int, r: int, theta: float) -> float:
    """The target rate exponent -(theta+1) r / (p + (theta+2) r)."""
    return -(theta + 1.0) * r / (p + (theta + 2.0) * r)


def theorem_budget(n: int, p: int, r: int, theta: float) -> HypothesisBudget:
    """Budget recipe with unit constants: depth from the displayed formula,
    W = U = ceil(exp(L))."""
    if n < 3:
        raise ParameterError("budget recipe needs n >= 3")
    L = max(1, math.ceil(p / (p + (theta + 2.0) * r) * math.log(n / math.log(n))))
    W = math.ceil(math.exp(L))
    return HypothesisBudget(L_max=L, W_max=W, U_max=W)


def subnet_shape_for_budget(budget: HypothesisBudget) -> tuple[int, int]:
    """Map a (tiny, unit-constant) budget onto trainable sub-network sizes.

    At desk scale the recipe's W is smaller than the fixed gadgets alone, so
    the budget sizes the trainable part: depth = L, width ~ sqrt(W) with a
    floor of 4 (narrower nets get trapped on dead-unit plateaus).  The full
    aggregate complexity is reported per sweep row.
    """
    return budget.L_max, max(4, math.ceil(math.sqrt(budget.W_max)))


@dataclass
class SweepRow:
    n: int
    seed: int
    excess: float
    stderr: float
    epochs: int
    subnet_depth: int
    subnet_width: int
    agg_L: int
    agg_W: int
    agg_U: int
    diverged: bool = False
    wall_time: float = 0.0  # excluded from the deterministic CSV contract


@dataclass
class SweepResult:
    rows: list
    n_values: np.ndarray
    medians: np.ndarray
    median_stderr: np.ndarray
    slope: float
    intercept: float
    slope_se: float
    slope_upper95: float
    ref_exponent: float
    theta_hat: float
    adjacent_non_increasing: list = field(default_factory=list)

    def monotone_within_noise(self) -> bool:
        return all(self.adjacent_non_increasing)


@dataclass(frozen=True)
class _SweepJob:
    task_spec: dict
    n: int
    seed_index: int
    base_seed: int
    depth: int
    width: int
    m: int
    epsilon: float
    a: float
    clamp: bool
    a_schedule: tuple | None
    epochs: int
    pair_batch: int
    lr_init: float
    lr_decay: float
    pair_strategy: str
    pairs_per_epoch: int | None
    init_scale: float
    mc_pairs: int


def _run_sweep_job(job: _SweepJob) -> SweepRow:
    t0 = time.perf_counter()
    task = make_task(**job.task_spec)
    ss = np.random.SeedSequence(job.base_seed, spawn_key=(job.n, job.seed_index))
    data_seed, init_seed, train_seed, eval_seed = ss.spawn(4)
    data = sample_dataset(task, job.n, seed=data_seed)
    net = make_structured_net(
        p=task.p, m=job.m, depth=job.depth, width=job.width, epsilon=job.epsilon,
        a=job.a, clamp=job.clamp, seed=init_seed, init_scale=job.init_scale,
    )
    cfg = TrainConfig(
        epochs=job.epochs, pair_batch=job.pair_batch, lr_init=job.lr_init,
        lr_decay=job.lr_decay, a_schedule=list(job.a_schedule) if job.a_schedule else None,
        seed=int(train_seed.generate_state(1)[0]), pair_strategy=job.pair_strategy,
        pairs_per_epoch=job.pairs_per_epoch,
    )
    agg = None
    try:
        trained, _ = train(net, data, cfg, hinge_loss())
        agg = aggregate_complexity(trained)
        excess, se = excess_risk_identity(trained, task, job.mc_pairs, eval_seed)
        diverged = False
    except ExecutionError:
        excess, se, diverged = math.nan, math.nan, True
    if agg is None:
        agg = aggregate_complexity(net)
    return SweepRow(
        n=job.n, seed=job.seed_index, excess=excess, stderr=se, epochs=job.epochs,
        subnet_depth=job.depth, subnet_width=job.width,
        agg_L=agg.depth, agg_W=agg.nonzero_weights, agg_U=agg.units,
        diverged=diverged, wall_time=time.perf_counter() - t0,
    )


def rate_sweep(task: SyntheticTask, n_list, seeds, train_config: TrainConfig,
               mc_pairs: int = 100_000, m: int = 2, epsilon: float = 1e-2,
               a: float = 0.1, clamp: bool = True, init_scale: float = 1.0,
               theta: float | None = None, noise_t_grid=None,
               noise_mc_pairs: int = 200_000, budgets=None, jobs: int = 1) -> SweepResult:
    """Train-and-evaluate ladder over sample sizes with a log-log slope fit.

    Per-n budgets follow the unit-constant recipe unless supplied; every
    (n, seed) job is independently and deterministically seeded, so results
    do not depend on the number of workers.
    """
    n_list = sorted(set(int(n) for n in n_list))
    if len(n_list) < 4:
        raise ParameterError("need at least 4 distinct sample sizes")
    # an octave ladder of >= 4 sizes (256..2048) is the smallest accepted span
    if max(n_list) / min(n_list) < 8.0:
        raise ParameterError("sample sizes must span at least a factor of 8")
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ParameterError("need at least 3 seeds")
    if task.spec is None:
        raise ParameterError("rate_sweep needs a task built by make_task (picklable spec)")

    if theta is None:
        grid = noise_t_grid if noise_t_grid is not None else np.geomspace(0.02, 0.3, 8)
        fit = estimate_noise_exponent(task, noise_mc_pairs, grid, seed=task.seed + 7919)
        theta = fit.theta_hat
    if not math.isfinite(theta) or theta <= 0.0:
        raise ExecutionError(f"unusable noise exponent {theta} for the budget recipe")

    jobs_list = []
    for n in n_list:
        budget = budgets[n] if budgets is not None else theorem_budget(n, task.p, task.model.r, theta)
        depth, width = subnet_shape_for_budget(budget)
        for si in seeds:
            jobs_list.append(_SweepJob(
                task_spec=task.spec, n=n, seed_index=si, base_seed=train_config.seed,
                depth=depth, width=width, m=m, epsilon=epsilon, a=a, clamp=clamp,
                a_schedule=tuple(train_config.a_schedule) if train_config.a_schedule else None,
                epochs=train_config.epochs, pair_batch=train_config.pair_batch,
                lr_init=train_config.lr_init, lr_decay=train_config.lr_decay,
                pair_strategy=train_config.pair_strategy,
                pairs_per_epoch=train_config.pairs_per_epoch,
                init_scale=init_scale, mc_pairs=mc_pairs,
            ))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_sweep_job, jobs_list))
    else:
        rows = [_run_sweep_job(j) for j in jobs_list]
    rows.sort(key=lambda r: (r.n, r.seed))

    surviving = {}
    for row in rows:
        if not row.diverged:
            surviving.setdefault(row.n, []).append(row)
    if len(surviving) < 4:
        raise ExecutionError(f"only {len(surviving)} sample sizes survived training")

    n_vals, medians, med_se = [], [], []
    for n in sorted(surviving):
        group = sorted(surviving[n], key=lambda r: r.excess)
        med_row = group[len(group) // 2]
        n_vals.append(n)
        medians.append(max(med_row.excess, 1e-12))
        # the median-of-seeds statistic carries Monte Carlo noise AND
        # seed-to-seed training spread; 1.2533 * sd / sqrt(k) is the
        # normal-approximation standard error of a sample median
        spread = float(np.std([r.excess for r in group], ddof=1)) if len(group) > 1 else 0.0
        med_se.append(math.hypot(med_row.stderr, 1.2533 * spread / math.sqrt(len(group))))
    n_vals = np.array(n_vals, dtype=np.float64)
    medians = np.array(medians)
    med_se = np.array(med_se)

    x = np.log(n_vals)
    yv = np.log(medians)
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (yv - yv.mean())) / sxx)
    intercept = float(yv.mean() - slope * xbar)
    resid = yv - (intercept + slope * x)
    dof = max(x.size - 2, 1)
    slope_se = math.sqrt(float(resid @ resid) / dof / sxx)
    tcrit = float(student_t.ppf(0.95, dof))

    adjacent = []
    for k in range(len(n_vals) - 1):
        limit = math.hypot(med_se[k], med_se[k + 1])
        adjacent.append(bool(medians[k + 1] <= medians[k] + limit))

    return SweepResult(
        rows=rows, n_values=n_vals, medians=medians, median_stderr=med_se,
        slope=slope, intercept=intercept, slope_se=slope_se,
        slope_upper95=slope + tcrit * slope_se,
        ref_exponent=reference_exponent(task.p, task.model.r, theta),
        theta_hat=theta, adjacent_non_increasing=adjacent,
    )

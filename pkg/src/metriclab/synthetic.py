"""Synthetic similarity tasks with analytically known label posteriors.

Every task exposes the conditional label-distribution vector P_x exactly, so
the pair-agreement probability eta(x, x') = <P_x, P_x'>, the hinge-loss true
metric sgn(1 - 2*eta), and the Bayes risk are all computable without
estimation error.  Inputs live on [0, 1]^p; the marginal is uniform unless a
task supplies its own sampler.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ExecutionError, ParameterError

_SIMPLEX_TOL = 1e-12


@dataclass
class ConditionalModel:
    """Deterministic map x -> P_x plus its declared smoothness budget."""

    m: int
    prob: callable  # (n, p) array -> (n, m) array of simplex rows
    r: int
    sobolev_budget: float
    name: str = "custom"

    def __post_init__(self):
        if self.m < 2:
            raise ParameterError(f"need at least 2 labels, got m={self.m}")
        if self.r < 1:
            raise ParameterError(f"smoothness tag must be >= 1, got r={self.r}")
        if self.sobolev_budget > 1.0 + 1e-12:
            raise ParameterError(
                f"claimed Sobolev budget {self.sobolev_budget} exceeds the allowed bound 1"
            )


@dataclass
class SyntheticTask:
    p: int
    model: ConditionalModel
    seed: int = 0
    marginal: callable | None = None  # (rng, n) -> (n, p); uniform when None
    spec: dict | None = None  # make_task() kwargs, kept for picklable rebuilds

    def rng(self, salt: int = 0) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(salt,)))


@dataclass
class PairSample:
    x: np.ndarray
    xp: np.ndarray
    y: int
    yp: int
    tau: int = field(init=False)

    def __post_init__(self):
        self.tau = 1 if self.y == self.yp else -1


def _check_inputs(X, p: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != p:
        raise DomainError(f"inputs must have dimension {p}, got shape {X.shape}")
    if np.any(X < 0.0) or np.any(X > 1.0) or not np.isfinite(X).all():
        raise DomainError("inputs must lie in [0, 1]^p")
    return X


def conditional_probs(task: SyntheticTask, X) -> np.ndarray:
    """P_x rows for a batch of inputs, validated against the simplex."""
    Xb = _check_inputs(X, task.p)
    P = np.asarray(task.model.prob(Xb), dtype=np.float64)
    if P.shape != (Xb.shape[0], task.model.m):
        raise ParameterError(
            f"model returned shape {P.shape}, expected {(Xb.shape[0], task.model.m)}"
        )
    if np.any(P < -_SIMPLEX_TOL):
        raise ParameterError(f"model {task.model.name} produced negative probabilities")
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > _SIMPLEX_TOL:
        raise ParameterError(f"model {task.model.name} rows do not sum to 1")
    return P


def sample_inputs(task: SyntheticTask, n: int, rng: np.random.Generator) -> np.ndarray:
    if task.marginal is not None:
        X = np.asarray(task.marginal(rng, n), dtype=np.float64)
        return _check_inputs(X, task.p)
    return rng.random((n, task.p))


def eta(task: SyntheticTask, x, xp) -> float:
    """Pair-agreement probability <P_x, P_x'>; symmetric in its arguments."""
    px = conditional_probs(task, x)[0]
    pxp = conditional_probs(task, xp)[0]
    return float(px @ pxp)


def eta_pairs(task: SyntheticTask, X, Xp) -> np.ndarray:
    """Vectorized eta over row-aligned batches of pairs."""
    P = conditional_probs(task, X)
    Pp = conditional_probs(task, Xp)
    return np.einsum("ij,ij->i", P, Pp)


def hinge_metric_values(etas: np.ndarray, convention: str = "theorem") -> np.ndarray:
    """sgn(1 - 2*eta) with the chosen convention at eta = 1/2.

    theorem form: sgn(0) := 0; infimum form: the smallest minimizer, -1.
    """
    etas = np.asarray(etas, dtype=np.float64)
    if convention == "theorem":
        return np.sign(1.0 - 2.0 * etas)
    if convention == "infimum":
        return np.where(etas >= 0.5, -1.0, 1.0)
    raise ParameterError(f"unknown convention {convention!r}")


def true_metric_hinge(task: SyntheticTask, x, xp, convention: str = "theorem") -> float:
    return float(hinge_metric_values(np.array([eta(task, x, xp)]), convention)[0])


def true_metric_fn(task: SyntheticTask, convention: str = "theorem"):
    """The true metric as a batched pair function, for risk evaluation."""

    def metric(X, Xp):
        return hinge_metric_values(eta_pairs(task, X, Xp), convention)

    return metric


def bayes_risk_hinge(task: SyntheticTask, mc_samples: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of E[2 min(eta, 1 - eta)] with its standard error."""
    if mc_samples < 2:
        raise ParameterError("need at least 2 Monte Carlo samples")
    rng = np.random.default_rng(seed)
    e = eta_pairs(task, sample_inputs(task, mc_samples, rng), sample_inputs(task, mc_samples, rng))
    vals = 2.0 * np.minimum(e, 1.0 - e)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_samples))


def sample_dataset(task: SyntheticTask, n: int, seed: int | None = None):
    """n i.i.d. draws (x, y); y sampled from the categorical law P_x."""
    if n < 2:
        raise ParameterError(f"need n >= 2 samples, got {n}")
    rng = np.random.default_rng(seed) if seed is not None else task.rng()
    X = sample_inputs(task, n, rng)
    P = conditional_probs(task, X)
    u = rng.random(n)
    y = (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1)
    return X, y.astype(np.int64)


@dataclass
class NoiseExponentFit:
    theta_hat: float
    c_theta_hat: float
    theta_se: float
    log_c_se: float
    theta_lower: float
    theta_upper: float
    c_theta_upper: float
    t_used: np.ndarray
    f_values: np.ndarray
    residuals: np.ndarray
    r_squared: float
    mc_pairs: int
    hard_margin: bool = False


def estimate_noise_exponent(task: SyntheticTask, mc_pairs: int, t_grid,
                            seed: int | None = None) -> NoiseExponentFit:
    """Fit Prob{|eta - 1/2| <= t} ~ C * t^theta by log-log least squares.

    A task whose margin mass never reaches the grid (all F(t) = 0) is
    reported with the hard-margin sentinel theta = inf.
    """
    t_grid = np.asarray(sorted(t_grid), dtype=np.float64)
    if t_grid.size < 4:
        raise ParameterError("need at least 4 grid points")
    if np.any(t_grid <= 0.0) or np.any(t_grid >= 0.5):
        raise ParameterError("t_grid values must lie in (0, 1/2)")
    if mc_pairs < 10_000:
        raise ParameterError("need at least 1e4 Monte Carlo pairs")

    rng = np.random.default_rng(seed) if seed is not None else task.rng(salt=1)
    e = eta_pairs(task, sample_inputs(task, mc_pairs, rng), sample_inputs(task, mc_pairs, rng))
    margins = np.sort(np.abs(e - 0.5))
    F = np.searchsorted(margins, t_grid, side="right") / mc_pairs

    usable = F > 0.0
    if not usable.any():
        return NoiseExponentFit(
            math.inf, math.nan, math.nan, math.nan, math.inf, math.inf, math.nan,
            t_grid, F, np.array([]), math.nan, mc_pairs, hard_margin=True,
        )
    if usable.sum() < 2:
        raise ExecutionError("too few grid points with positive margin mass to fit")

    x = np.log(t_grid[usable])
    ylog = np.log(F[usable])
    n = x.size
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    slope = float(np.sum((x - xbar) * (ylog - ylog.mean())) / sxx)
    intercept = float(ylog.mean() - slope * xbar)
    resid = ylog - (intercept + slope * x)
    dof = max(n - 2, 1)
    sigma2 = float(resid @ resid) / dof
    slope_se = math.sqrt(sigma2 / sxx)
    int_se = math.sqrt(sigma2 * (1.0 / n + xbar**2 / sxx))
    sst = float(np.sum((ylog - ylog.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / sst if sst > 0 else 1.0
    return NoiseExponentFit(
        theta_hat=slope,
        c_theta_hat=math.exp(intercept),
        theta_se=slope_se,
        log_c_se=int_se,
        theta_lower=slope - 1.96 * slope_se,
        theta_upper=slope + 1.96 * slope_se,
        c_theta_upper=math.exp(intercept + 1.96 * int_se),
        t_used=t_grid[usable],
        f_values=F,
        residuals=resid,
        r_squared=r2,
        mc_pairs=mc_pairs,
    )


# ---------------------------------------------------------------------------
# built-in model families
# ---------------------------------------------------------------------------

def cosine_model(p: int, A: float, k: int, r: int) -> ConditionalModel:
    """Two labels, p1(x) = 1/2 + A * prod_j cos(2 pi k x_j).

    Validity of the smoothness budget is enforced analytically:
    every order-<=r partial derivative is bounded by A * (2 pi k)^r,
    which must not exceed 1/2.
    """
    if not 0.0 < A <= 0.5:
        raise ParameterError(f"amplitude A must lie in (0, 1/2], got {A}")
    if k < 1:
        raise ParameterError(f"frequency k must be >= 1, got {k}")
    if A * (2.0 * math.pi * k) ** r > 0.5 + 1e-12:
        raise ParameterError(
            f"A*(2 pi k)^r = {A * (2.0 * math.pi * k) ** r:.4g} exceeds 1/2; "
            "smoothness budget not certifiable"
        )

    def prob(X):
        p1 = 0.5 + A * np.cos(2.0 * math.pi * k * X).prod(axis=1)
        return np.column_stack([p1, 1.0 - p1])

    return ConditionalModel(2, prob, r, sobolev_budget=max(0.5 + A, A * (2 * math.pi * k) ** r),
                            name=f"cosine(A={A},k={k})")


def linear_model() -> ConditionalModel:
    """Two labels on p = 1: p1(x) = x.  Sobolev norm exactly 1 at r = 1."""

    def prob(X):
        p1 = X[:, 0]
        return np.column_stack([p1, 1.0 - p1])

    return ConditionalModel(2, prob, r=1, sobolev_budget=1.0, name="linear")


def three_label_ramp_model(beta: float = 0.8, rho: float = 0.05) -> ConditionalModel:
    """Three labels on p = 1 with P_x = [s(x), beta - s(x), 1 - beta].

    s(x) ramps linearly around the root s0 of 2 s^2 - 2 beta s + c = 0
    (c = beta^2 + (1-beta)^2 - 1/2), which centers eta at exactly 1/2, so
    eta - 1/2 = lambda (w + w') + 2 w w' with lambda = 2 s0 - beta and
    w uniform on [-rho, rho].  For rho << |lambda| the margin density is
    triangular, hence approximately uniform near zero (noise exponent ~ 1).
    """
    if not 0.5 < beta < 1.0:
        raise ParameterError(f"beta must lie in (1/2, 1), got {beta}")
    c = beta**2 + (1.0 - beta) ** 2 - 0.5
    disc = beta**2 - 2.0 * c
    if disc <= 0.0:
        raise ParameterError(f"beta={beta} admits no centering root")
    s0 = (beta - math.sqrt(disc)) / 2.0
    if not (rho > 0.0 and s0 - rho >= 0.0 and s0 + rho <= beta):
        raise ParameterError(f"ramp halfwidth rho={rho} leaves the simplex for beta={beta}")
    if 2.0 * rho > 1.0:
        raise ParameterError("ramp slope exceeds the smoothness budget")

    def prob(X):
        s = s0 + rho * (2.0 * X[:, 0] - 1.0)
        return np.column_stack([s, beta - s, np.full(X.shape[0], 1.0 - beta)])

    return ConditionalModel(3, prob, r=1, sobolev_budget=1.0,
                            name=f"three_label_ramp(beta={beta},rho={rho})")


def counterexample_model() -> ConditionalModel:
    """Three labels on p = 1 reproducing the self-similarity counterexample:
    P_x = [3/5, 1/5, 1/5] on [0, 1/2), [1, 0, 0] on [1/2, 1]."""
    va = np.array([0.6, 0.2, 0.2])
    vb = np.array([1.0, 0.0, 0.0])

    def prob(X):
        return np.where(X[:, :1] < 0.5, va, vb)

    return ConditionalModel(3, prob, r=1, sobolev_budget=1.0, name="counterexample")


def two_value_model(p1_left: float = 0.9, p1_right: float = 0.1) -> ConditionalModel:
    """Two labels on p = 1 with piecewise-constant p1 switching at x = 1/2."""
    for v in (p1_left, p1_right):
        if not 0.0 <= v <= 1.0:
            raise ParameterError(f"piece value {v} outside [0, 1]")

    def prob(X):
        p1 = np.where(X[:, 0] < 0.5, p1_left, p1_right)
        return np.column_stack([p1, 1.0 - p1])

    return ConditionalModel(2, prob, r=1, sobolev_budget=1.0,
                            name=f"two_value({p1_left},{p1_right})")


def constant_model(p_vec) -> ConditionalModel:
    """Location-independent P_x; useful for exact-value checks."""
    p_vec = np.asarray(p_vec, dtype=np.float64)
    if np.any(p_vec < 0.0) or abs(float(p_vec.sum()) - 1.0) > _SIMPLEX_TOL:
        raise ParameterError("constant model needs a simplex vector")

    def prob(X):
        return np.tile(p_vec, (X.shape[0], 1))

    return ConditionalModel(max(2, p_vec.size), prob, r=1, sobolev_budget=1.0,
                            name="constant")


def atom_marginal(atoms, weights=None):
    """Discrete marginal over fixed input atoms (rows of `atoms`)."""
    atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
    if weights is None:
        weights = np.full(atoms.shape[0], 1.0 / atoms.shape[0])

    def sampler(rng, n):
        idx = rng.choice(atoms.shape[0], size=n, p=weights)
        return atoms[idx]

    return sampler


MODEL_FAMILIES = {
    "cosine": cosine_model,
    "linear": linear_model,
    "three_label_ramp": three_label_ramp_model,
    "counterexample": counterexample_model,
    "two_value": two_value_model,
}


def make_task(family: str, p: int = 1, seed: int = 0, **params) -> SyntheticTask:
    """Instantiate a built-in family by name."""
    if family not in MODEL_FAMILIES:
        raise ParameterError(f"unknown task family {family!r}; known: {sorted(MODEL_FAMILIES)}")
    if family == "cosine":
        model = cosine_model(p=p, **params)
    elif family == "linear":
        if p != 1:
            raise ParameterError("linear family is defined on p = 1")
        model = linear_model(**params)
    else:
        if p != 1:
            raise ParameterError(f"{family} family is defined on p = 1")
        model = MODEL_FAMILIES[family](**params)
    spec = {"family": family, "p": p, "seed": seed, **params}
    return SyntheticTask(p=p, model=model, seed=seed, spec=spec)


def write_dataset_csv(path, X: np.ndarray, y: np.ndarray, comments=()) -> None:
    """CSV export with header x_1..x_p, y and optional provenance comments."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow([f"x_{j + 1}" for j in range(X.shape[1])] + ["y"])
        for row, label in zip(X, y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])

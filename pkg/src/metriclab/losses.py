"""Convex pair losses and the true-metric minimizer laboratory.

For a loss l and conditional probability eta, the pointwise objective is
    Q(eta, t) = eta * l(t) + (1 - eta) * l(-t),
and the true metric value at a pair is the infimum of argmin_t Q(eta, t).
The oracle below minimizes Q on a grid with one local refinement pass.

Minimizer selection: genuinely flat argmin sets (piecewise-linear losses)
are detected by their width and resolved to their smallest element; the
shallow numerical flats of strictly convex losses (width ~1e-4 at double
precision) resolve to the grid argmin instead, so the oracle stays within
one refined step of the unique minimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ParameterError, PropertyViolation, RangeTooSmallError

T_RANGE = (-20.0, 20.0)
COARSE_STEP = 1e-4
REFINE_STEP = 1e-6
PLATEAU_TOL = 1e-12
PLATEAU_WIDTH_THRESHOLD = 0.01  # narrower flats are numerical, not genuine
ORACLE_SLACK = 2.0 * REFINE_STEP


@dataclass
class LossFunction:
    """Loss with evaluation, subgradient and the Assumption-style flags."""

    name: str
    eval: callable
    subgradient: callable
    convex: bool = True
    non_decreasing: bool = True
    non_negative: bool = True
    analytic_tstar: callable | None = None

    def __post_init__(self):
        if not (self.convex and self.non_decreasing and self.non_negative):
            raise ParameterError(f"loss {self.name}: all three loss flags must be true")

    def validate(self, probe_grid=None) -> None:
        """Spot-check nonnegativity, monotonicity and midpoint convexity."""
        t = np.linspace(-10.0, 10.0, 2001) if probe_grid is None else np.asarray(probe_grid)
        v = self.eval(t)
        if np.any(v < -1e-12):
            raise PropertyViolation(f"loss {self.name} is negative on the probe grid")
        if np.any(np.diff(v) < -1e-9):
            raise PropertyViolation(f"loss {self.name} is decreasing on the probe grid")
        mid = self.eval((t[:-1] + t[1:]) / 2.0)
        if np.any(mid > (v[:-1] + v[1:]) / 2.0 + 1e-9):
            raise PropertyViolation(f"loss {self.name} fails midpoint convexity")


def _hinge_analytic(eta: float, convention: str = "infimum") -> float:
    if eta < 0.5:
        return 1.0
    if eta > 0.5:
        return -1.0
    return -1.0 if convention == "infimum" else 0.0


def hinge_loss() -> LossFunction:
    return LossFunction(
        name="hinge",
        eval=lambda t: np.maximum(1.0 + t, 0.0),
        subgradient=lambda t: np.where(1.0 + t > 0.0, 1.0, 0.0),
        analytic_tstar=_hinge_analytic,
    )


def modified_least_squares_loss() -> LossFunction:
    return LossFunction(
        name="modified_least_squares",
        eval=lambda t: np.maximum(1.0 + t, 0.0) ** 2,
        subgradient=lambda t: 2.0 * np.maximum(1.0 + t, 0.0),
        analytic_tstar=lambda eta: 1.0 - 2.0 * eta,
    )


def _log_ratio(eta: float) -> float:
    if eta <= 0.0:
        return math.inf
    if eta >= 1.0:
        return -math.inf
    return math.log((1.0 - eta) / eta)


def logistic_loss() -> LossFunction:
    return LossFunction(
        name="logistic",
        eval=lambda t: np.logaddexp(0.0, t),
        subgradient=lambda t: expit(t),
        analytic_tstar=_log_ratio,
    )


def exponential_loss() -> LossFunction:
    return LossFunction(
        name="exponential",
        eval=np.exp,
        subgradient=np.exp,
        analytic_tstar=lambda eta: 0.5 * _log_ratio(eta),
    )


LOSSES = {
    "hinge": hinge_loss,
    "modified_least_squares": modified_least_squares_loss,
    "logistic": logistic_loss,
    "exponential": exponential_loss,
}


def get_loss(name: str) -> LossFunction:
    if name not in LOSSES:
        raise ParameterError(f"unknown loss {name!r}; registered: {sorted(LOSSES)}")
    return LOSSES[name]()


def q_value(loss: LossFunction, eta: float, t):
    """Q(eta, t) = eta*l(t) + (1-eta)*l(-t)."""
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    t = np.asarray(t, dtype=np.float64)
    return eta * loss.eval(t) + (1.0 - eta) * loss.eval(-t)


def _select_infimum(ts: np.ndarray, qs: np.ndarray, step: float) -> tuple[float, float]:
    qs = np.where(np.isfinite(qs), qs, np.inf)
    idx = int(np.argmin(qs))
    qmin = float(qs[idx])
    attain = ts[qs <= qmin + PLATEAU_TOL]
    if attain[-1] - attain[0] > PLATEAU_WIDTH_THRESHOLD:
        return float(attain[0]), qmin
    return float(ts[idx]), qmin


def _grid_infimum_minimize(objective, t_range=T_RANGE, t_step=COARSE_STEP,
                           refine_step=REFINE_STEP) -> tuple[float, float]:
    """Minimize a scalar objective on a grid; returns (minimizer, min value).

    Applies the infimum convention to genuine plateaus and raises
    RangeTooSmallError when the minimizer sits at the search boundary.
    """
    t_lo, t_hi = t_range
    if t_step <= 0.0 or t_hi <= t_lo:
        raise ParameterError("invalid grid range or step")
    n = int(round((t_hi - t_lo) / t_step)) + 1
    ts = t_lo + np.arange(n) * t_step
    winner, qmin = _select_infimum(ts, objective(ts), t_step)

    lo = max(t_lo, winner - t_step)
    hi = min(t_hi, winner + t_step)
    m = int(round((hi - lo) / refine_step)) + 1
    fine = lo + np.arange(m) * refine_step
    fwinner, fqmin = _select_infimum(fine, objective(fine), refine_step)
    qmin = min(qmin, fqmin)

    if fwinner <= t_lo + t_step or fwinner >= t_hi - t_step:
        err = RangeTooSmallError(
            f"minimizer {fwinner:.6g} at search boundary of [{t_lo}, {t_hi}]"
        )
        err.side = "lower" if fwinner <= t_lo + t_step else "upper"
        raise err
    return fwinner, qmin


def tstar_oracle(loss: LossFunction, eta: float, t_range=T_RANGE,
                 t_step=COARSE_STEP) -> float:
    """Infimum of argmin_t Q(eta, t), located by grid search."""
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    return _grid_infimum_minimize(lambda t: q_value(loss, eta, t), t_range, t_step)[0]


def q_minimum(loss: LossFunction, eta: float, t_range=T_RANGE,
              t_step=COARSE_STEP) -> float:
    """min_t Q(eta, t) over the search grid."""
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    return _grid_infimum_minimize(lambda t: q_value(loss, eta, t), t_range, t_step)[1]


def tstar_analytic(loss: LossFunction, eta: float, hinge_convention: str = "infimum"):
    """Closed-form minimizer where one is registered; None otherwise."""
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta}")
    if loss.analytic_tstar is None:
        return None
    if loss.name == "hinge":
        return loss.analytic_tstar(eta, hinge_convention)
    return loss.analytic_tstar(eta)


@dataclass
class MinimizerProfile:
    eta_grid: np.ndarray
    tstar: np.ndarray
    q_min: np.ndarray
    analytic: np.ndarray  # NaN where no closed form
    t_range: tuple
    t_step: float
    loss_name: str = ""


def check_monotone(loss: LossFunction, eta_grid, t_range=T_RANGE,
                   t_step=COARSE_STEP, slack: float = ORACLE_SLACK) -> MinimizerProfile:
    """Profile t*(eta) over a sorted grid and assert it never increases."""
    eta_grid = np.asarray(eta_grid, dtype=np.float64)
    if np.any(np.diff(eta_grid) < 0.0):
        raise ParameterError("eta_grid must be sorted ascending")
    tstars, qmins, analytic = [], [], []
    for eta in eta_grid:
        t, q = _grid_infimum_minimize(lambda u: q_value(loss, eta, u), t_range, t_step)
        tstars.append(t)
        qmins.append(q)
        a = tstar_analytic(loss, float(eta))
        analytic.append(np.nan if a is None else a)
    tstars = np.array(tstars)
    rises = np.nonzero(np.diff(tstars) > slack)[0]
    if rises.size:
        raise PropertyViolation(
            f"t* increases for loss {loss.name} at eta indices {rises.tolist()}"
        )
    return MinimizerProfile(
        eta_grid, tstars, np.array(qmins), np.array(analytic), t_range, t_step, loss.name
    )


def _check_simplex(v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise ParameterError(f"{what} must be a probability vector")
    if np.any(v < -1e-12) or abs(float(v.sum()) - 1.0) > 1e-9:
        raise ParameterError(f"{what} is not on the probability simplex")
    return v


@dataclass
class SelfDistanceReport:
    eta_cross: float
    eta_self_x: float
    eta_self_xp: float
    d_cross: float
    d_self_x: float
    d_self_xp: float
    precondition_holds: bool
    conclusion_holds: bool

    @property
    def is_counterexample(self) -> bool:
        return self.precondition_holds and not self.conclusion_holds


def _tstar_or_sentinel(loss: LossFunction, eta: float) -> float:
    """t*(eta), with unbounded argmin sets mapped to signed infinity."""
    try:
        return tstar_oracle(loss, eta)
    except RangeTooSmallError as err:
        return -math.inf if getattr(err, "side", "lower") == "lower" else math.inf


def check_self_distance(loss: LossFunction, p_x, p_xp) -> SelfDistanceReport:
    """Test whether self-distances stay below the cross distance.

    The guarantee only applies when eta(x,x') <= min(eta(x,x), eta(x',x'));
    outside that precondition the report records whether the conclusion
    fails too (counterexample detection).  Deterministic label vectors give
    eta = 1, whose infimum minimizer is -inf; the sentinel keeps the
    comparisons meaningful.
    """
    p_x = _check_simplex(p_x, "P_x")
    p_xp = _check_simplex(p_xp, "P_x'")
    eta_cross = float(p_x @ p_xp)
    eta_x = float(p_x @ p_x)
    eta_xp = float(p_xp @ p_xp)
    d_cross = _tstar_or_sentinel(loss, eta_cross)
    d_x = _tstar_or_sentinel(loss, eta_x)
    d_xp = _tstar_or_sentinel(loss, eta_xp)
    pre = eta_cross <= min(eta_x, eta_xp) + 1e-12
    concl = max(d_x, d_xp) <= d_cross + ORACLE_SLACK
    return SelfDistanceReport(eta_cross, eta_x, eta_xp, d_cross, d_x, d_xp, pre, concl)


@dataclass
class BiasShiftReport:
    eta: float
    b: float
    shifted_tstar: float
    expected: float
    deviation: float
    passed: bool


def check_bias_shift(loss: LossFunction, eta: float, b: float,
                     t_range=T_RANGE, tol: float = ORACLE_SLACK) -> BiasShiftReport:
    """Verify argmin_t eta*l(t-b) + (1-eta)*l(b-t) = b + t*(eta)."""
    if not 0.0 < eta < 1.0:
        raise ParameterError(f"eta must lie in (0, 1), got {eta}")

    def shifted(t):
        return eta * loss.eval(t - b) + (1.0 - eta) * loss.eval(b - t)

    got, _ = _grid_infimum_minimize(shifted, t_range)
    expected = b + tstar_oracle(loss, eta, t_range)
    dev = abs(got - expected)
    return BiasShiftReport(eta, b, got, expected, dev, dev <= tol)


def continuous_label_degeneracy(loss: LossFunction, t_range=T_RANGE) -> float:
    """The constant the true metric collapses to under continuous labels.

    Equals the infimum of argmin_t l(-t); +inf when that argmin is empty
    (strictly decreasing l(-t), e.g. the exponential loss).
    """
    try:
        return tstar_oracle(loss, 0.0, t_range)
    except RangeTooSmallError:
        return math.inf

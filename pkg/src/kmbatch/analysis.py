"""Quantitative verification: a-priori rate bounds, slope fits, floors, audits.

The centerpiece is ``inequality_audit``: along a real solver trajectory it
enumerates every possible batch outcome at each step and checks, with exact
conditional expectations, the unbiasedness and variance laws of the sampled
average and the per-step descent and drift inequalities that drive the
convergence guarantees (with the exact pointwise variance standing in for the
global certificate, which it never exceeds on the certified region).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import EnumerationBudgetError, check_rng
from .operators import OperatorFamily
from .schedules import BatchSchedule, ConstantBatch, StepSchedule
from .solver import AggregateTrace

__all__ = [
    "alpha_over_batch_tail",
    "min_residual_bound",
    "RateFit",
    "fit_rate",
    "RateReport",
    "FloorEstimate",
    "floor_estimate",
    "floor_decrease_pvalue",
    "dominance_check",
    "nonexpansivity_slack",
    "AuditReport",
    "inequality_audit",
]


def nonexpansivity_slack(
    family: OperatorFamily,
    n_pairs: int = 1000,
    random_state=None,
    span: float = 2.0,
) -> float:
    """Worst randomized nonexpansivity slack over every component.

    Returns ``min_i min_pairs (||x - y|| - ||T_i(x) - T_i(y)||)``; a
    genuinely nonexpansive family keeps this above roughly -1e-12, while a
    component with Lipschitz constant above 1 drives it clearly negative.
    """
    rng = check_rng(random_state)
    worst = math.inf
    for _ in range(int(n_pairs)):
        x = span * rng.standard_normal(family.dim)
        y = span * rng.standard_normal(family.dim)
        gap = float(np.linalg.norm(x - y))
        tx = family.apply_all(x)
        ty = family.apply_all(y)
        comp_gap = float(np.linalg.norm(tx - ty, axis=1).max())
        worst = min(worst, gap - comp_gap)
    return worst


def _alpha_over_batch_summable(step: StepSchedule, batch: BatchSchedule) -> bool:
    # alpha_k <= 1 always, so increasing uncapped laws dominate: the
    # polynomial law has power > 1 and the exponential law a geometric tail.
    # Constant or capped batches leave sum alpha_k / b_k divergent for every
    # supported step law (decay exponents are at most 1).
    if isinstance(batch, ConstantBatch) or batch.cap is not None:
        return False
    return True


def alpha_over_batch_tail(
    step: StepSchedule,
    batch: BatchSchedule,
    rel_tol: float = 1e-12,
    window: int = 1000,
    max_terms: int = 2_000_000,
) -> float:
    """Tail-converged value of sum_k alpha_k / b_k.

    Terms are accumulated until the increment over ``window`` consecutive
    terms drops below ``rel_tol`` relative to the running total.
    """
    if not _alpha_over_batch_summable(step, batch):
        raise ValueError("sum alpha_k / b_k diverges for this schedule pair")
    total = 0.0
    k = 0
    while k < max_terms:
        chunk = math.fsum(
            step.step_at(j) * batch.inverse_batch(j) for j in range(k, k + window)
        )
        total += chunk
        k += window
        if total > 0.0 and chunk <= rel_tol * total:
            return total
    raise ValueError(f"series did not stabilize within {max_terms} terms")


def min_residual_bound(
    dist0: float,
    sigma: float,
    step: StepSchedule,
    batch: BatchSchedule,
    K: int,
) -> float:
    """A-priori bound on the best expected residual within K steps.

    Evaluates sqrt(dist0^2 + sigma^2 * S) / sqrt(sum_{k<K} alpha_k (1 - alpha_k))
    with S the full tail of sum alpha_k / b_k.  With sigma = 0 the tail term
    vanishes and no summability is required; otherwise a schedule pair with a
    divergent tail makes the bound vacuous and raises ValueError.
    """
    dist0 = float(dist0)
    sigma = float(sigma)
    if dist0 < 0.0 or sigma < 0.0:
        raise ValueError("dist0 and sigma must be nonnegative")
    tail = 0.0 if sigma == 0.0 else alpha_over_batch_tail(step, batch)
    denom = step.sum_alpha_one_minus_alpha(K)
    if denom <= 0.0:
        raise ValueError("step sum is zero; bound undefined")
    return math.sqrt(dist0 * dist0 + sigma * sigma * tail) / math.sqrt(denom)


@dataclass(frozen=True)
class RateFit:
    slope: float
    stderr: float


def fit_rate(K_grid, residuals) -> RateFit:
    """Least-squares slope of log(residual) against log(K), with standard error."""
    ks = np.asarray(K_grid, dtype=float)
    rs = np.asarray(residuals, dtype=float)
    if ks.shape != rs.shape or ks.ndim != 1 or ks.size < 4:
        raise ValueError("need at least 4 (K, residual) pairs")
    if np.any(rs <= 0.0):
        raise ValueError("residuals must be positive for a log-log fit")
    if np.any(ks <= 0.0):
        raise ValueError("K values must be positive")
    coeffs, cov = np.polyfit(np.log(ks), np.log(rs), 1, cov=True)
    return RateFit(slope=float(coeffs[0]), stderr=float(math.sqrt(max(cov[0, 0], 0.0))))


@dataclass(frozen=True)
class RateReport:
    """Per-K minima, the matching a-priori bounds, and the fitted decay slope."""

    K_grid: tuple[int, ...]
    min_mean_residual: tuple[float, ...]
    bound: tuple[float | None, ...]
    stderrs: tuple[float, ...]
    slope: float
    slope_stderr: float

    def rows(self):
        for K, m, b, se in zip(self.K_grid, self.min_mean_residual, self.bound, self.stderrs):
            yield K, m, b, se


def dominance_check(min_mean: float, stderr: float, bound: float) -> bool:
    """Is min_mean <= bound within the 3-standard-error statistical slack?"""
    if min_mean <= 0.0:
        return True
    return min_mean <= bound * (1.0 + 3.0 * stderr / min_mean)


@dataclass(frozen=True)
class FloorEstimate:
    """Plateau level of the mean residual over the trailing window."""

    value: float
    plateau: bool
    window_slope: float
    window_slope_stderr: float
    per_seed: np.ndarray

    @property
    def conclusive(self) -> bool:
        return self.plateau


_FLOOR_BLOCKS = 8


def floor_estimate(
    agg: AggregateTrace,
    window_fraction: float = 0.25,
    max_plateau_slope: float = 0.02,
) -> FloorEstimate:
    """Mean residual over the final fraction of iterations, across seeds.

    Stabilization is judged on the log-log slope of the across-seed mean
    over the trailing window, fitted on block means so that the slope's
    standard error reflects the level's autocorrelated wander.  A plateau is
    declared when the data cannot demonstrate decay steeper than
    ``max_plateau_slope`` per decade (upper confidence bound of the slope at
    two standard errors): a still-converging run has a smooth, steep window
    and is rejected, while a noise-sustained level wanders without trend and
    passes.  Runs already at numerical zero count as flat.
    """
    ks = agg.ks
    k_max = ks[-1]
    window = ks >= (1.0 - window_fraction) * k_max
    if window.sum() < 2 * _FLOOR_BLOCKS:
        raise ValueError("trace too short for a plateau window")
    value = float(agg.residual_matrix[:, window].mean())
    per_seed = agg.residual_matrix[:, window].mean(axis=1)
    mean = agg.mean_residual[window]
    if np.all(mean <= 1e-14):
        return FloorEstimate(value, True, 0.0, 0.0, per_seed)
    blocks = np.array_split(np.arange(mean.shape[0]), _FLOOR_BLOCKS)
    block_k = np.array([ks[window][b].mean() for b in blocks])
    block_r = np.array([mean[b].mean() for b in blocks])
    if np.any(block_r <= 0.0):
        return FloorEstimate(value, False, math.inf, math.inf, per_seed)
    coeffs, cov = np.polyfit(np.log(block_k), np.log(block_r), 1, cov=True)
    slope = float(coeffs[0])
    stderr = float(math.sqrt(max(cov[0, 0], 0.0)))
    plateau = slope + 2.0 * stderr >= -max_plateau_slope
    return FloorEstimate(value, plateau, slope, stderr, per_seed)


def floor_decrease_pvalue(floors_coarse, floors_fine) -> float:
    """One-sided Wilcoxon signed-rank p-value for paired floors_fine < floors_coarse."""
    coarse = np.asarray(floors_coarse, dtype=float)
    fine = np.asarray(floors_fine, dtype=float)
    if coarse.shape != fine.shape or coarse.ndim != 1:
        raise ValueError("paired floor arrays must share one shape")
    return float(stats.wilcoxon(coarse - fine, alternative="greater").pvalue)


@dataclass(frozen=True)
class AuditReport:
    """Outcome of the exact enumeration audit along one trajectory."""

    steps: int
    violations: int
    unbiased_max_err: float
    variance_max_err: float
    ms_nonexpansive_min_slack: float
    sandwich_lower_min_slack: float
    sandwich_upper_min_slack: float
    descent_min_slack: float
    drift_min_slack: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def lines(self):
        yield f"steps audited          : {self.steps}"
        yield f"violations             : {self.violations}"
        yield f"unbiasedness max error : {self.unbiased_max_err:.3e}"
        yield f"variance law max error : {self.variance_max_err:.3e}"
        yield f"mean-square nonexp.    : min slack {self.ms_nonexpansive_min_slack:.3e}"
        yield f"residual sandwich low  : min slack {self.sandwich_lower_min_slack:.3e}"
        yield f"residual sandwich high : min slack {self.sandwich_upper_min_slack:.3e}"
        yield f"descent inequality     : min slack {self.descent_min_slack:.3e}"
        yield f"drift inequality       : min slack {self.drift_min_slack:.3e}"


def inequality_audit(
    family: OperatorFamily,
    x_star,
    step: StepSchedule,
    batch: BatchSchedule,
    n_steps: int,
    x0=None,
    random_state=None,
    exact_tol: float = 1e-12,
    slack_tol: float = 1e-10,
    outcome_budget: int = 100,
) -> AuditReport:
    """Exhaustive per-step audit of the sampled-average stochastic calculus.

    At each step of a genuine trajectory, all n^b ordered batch outcomes are
    enumerated and the following are checked with exact conditional
    expectations (V1 denotes the exact single-draw variance at the current
    point, which never exceeds the certified global bound on its region):

    * the enumeration mean of the sampled average equals the mean map
      (within ``exact_tol``) and its variance equals V1/b;
    * E||T_batch(x) - x*||^2 <= ||x - x*||^2 + V1/b  (mean-square
      nonexpansivity toward the fixed point);
    * ||x - T(x)||^2 <= E||x - T_batch(x)||^2 <= ||x - T(x)||^2 + V1/b;
    * E||x_next - x*||^2 <= ||x - x*||^2 + alpha V1/b
      - alpha (1 - alpha) ||x - T(x)||^2  (descent);
    * E||x_next - T(x_next)|| <= ||x - T(x)|| + 2 sqrt(V1/b)  (drift).

    Slacks below ``-slack_tol`` count as violations.
    """
    from .core import check_vector
    from .solver import km_step

    x_star = check_vector(x_star, family.dim, name="x_star")
    n = family.n_components
    rng = check_rng(random_state)
    x = (
        x_star + rng.unit_vector(family.dim)
        if x0 is None
        else check_vector(x0, family.dim, name="x0").copy()
    )
    violations = 0
    unbiased_max = 0.0
    variance_max = 0.0
    slacks = {
        "ms": math.inf,
        "lo": math.inf,
        "hi": math.inf,
        "descent": math.inf,
        "drift": math.inf,
    }

    for k in range(int(n_steps)):
        alpha = step.step_at(k)
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"step size {alpha} at k={k} outside (0, 1]")
        b = batch.batch_at(k)
        if n**b > outcome_budget:
            raise EnumerationBudgetError(
                f"step k={k} needs {n ** b} outcomes (budget {outcome_budget})"
            )
        outputs = family.apply_all(x)
        tbar = outputs.mean(axis=0)
        resid_sq = float(np.square(x - tbar).sum())
        dist_sq = float(np.square(x - x_star).sum())
        v1 = float(np.square(outputs - tbar).sum()) / n
        vb = v1 / b

        mean_tb = np.zeros(family.dim)
        e_var = 0.0
        e_to_star = 0.0
        e_self = 0.0
        e_next_dist = 0.0
        e_next_resid = 0.0
        total = n**b
        for combo in itertools.product(range(n), repeat=b):
            tb = outputs[list(combo)].mean(axis=0)
            mean_tb += tb
            e_var += float(np.square(tb - tbar).sum())
            e_to_star += float(np.square(tb - x_star).sum())
            e_self += float(np.square(x - tb).sum())
            x_next = (1.0 - alpha) * x + alpha * tb
            e_next_dist += float(np.square(x_next - x_star).sum())
            e_next_resid += float(
                np.linalg.norm(x_next - family.mean(x_next, validate=False))
            )
        mean_tb /= total
        e_var /= total
        e_to_star /= total
        e_self /= total
        e_next_dist /= total
        e_next_resid /= total

        unbiased_err = float(np.linalg.norm(mean_tb - tbar))
        variance_err = abs(e_var - vb)
        unbiased_max = max(unbiased_max, unbiased_err)
        variance_max = max(variance_max, variance_err)
        checks = {
            "ms": dist_sq + vb - e_to_star,
            "lo": e_self - resid_sq,
            "hi": resid_sq + vb - e_self,
            "descent": dist_sq + alpha * vb - alpha * (1.0 - alpha) * resid_sq - e_next_dist,
            "drift": math.sqrt(resid_sq) + 2.0 * math.sqrt(vb) - e_next_resid,
        }
        for name, slack in checks.items():
            slacks[name] = min(slacks[name], slack)
            if slack < -slack_tol:
                violations += 1
        if unbiased_err > exact_tol:
            violations += 1
        if variance_err > exact_tol:
            violations += 1

        x = km_step(family, x, alpha, rng.draw_indices(n, b))

    return AuditReport(
        steps=int(n_steps),
        violations=violations,
        unbiased_max_err=unbiased_max,
        variance_max_err=variance_max,
        ms_nonexpansive_min_slack=slacks["ms"],
        sandwich_lower_min_slack=slacks["lo"],
        sandwich_upper_min_slack=slacks["hi"],
        descent_min_slack=slacks["descent"],
        drift_min_slack=slacks["drift"],
    )

"""The mini-batch stochastic Krasnosel'skii-Mann loop as an sklearn-style estimator.

Each iteration draws a batch of component indices, averages the sampled
component maps at the current point, and relaxes toward that average:

    x_{k+1} = (1 - alpha_k) x_k + alpha_k * T_batch(x_k).

``MiniBatchKM.fit`` runs the loop on an OperatorFamily and records the exact
mean-map residual along the way.  Batch sizes may grow without bound; the
sampled average is then realized through equivalent multiplicity counts so a
step costs O(n) regardless of the batch size.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .core import NumericFailureError, RngStream, TraceRecord, check_vector
from .operators import OperatorFamily
from .schedules import BatchSchedule, ConstantBatch, ConstantStep, StepSchedule

__all__ = ["km_step", "RunTrace", "MiniBatchKM", "AggregateTrace", "aggregate_traces"]

# Batch-size tiers for realizing one sampled average.  Up to _INDEX_TIER the
# indices are drawn explicitly; up to _COUNT_TIER the multiplicities are drawn
# as one multinomial (identical distribution, O(n) cost); up to _MEAN_TIER the
# multinomial proportions are realized through their Gaussian limit (error
# o(1/b), far below float64 at these sizes); beyond that the proportions are
# uniform to machine precision and the exact mean map is used.
_INDEX_TIER = 8192
_COUNT_TIER = 2**62
_MEAN_TIER = 2**110


def km_step(family: OperatorFamily, x, alpha: float, indices, check: bool = True) -> np.ndarray:
    """One relaxed step toward the average of the indexed components.

    ``check=False`` relaxes the step-size precondition so the boundary
    values can be exercised in tests: alpha = 0 reproduces x exactly and
    alpha = 1 the sampled average exactly.
    """
    alpha = float(alpha)
    if check and not 0.0 < alpha <= 1.0:
        raise ValueError("step size must lie in (0, 1]")
    x = check_vector(x, family.dim)
    if alpha == 0.0:
        return x.copy()
    if alpha == 1.0:
        return family.minibatch(x, indices)
    return (1.0 - alpha) * x + alpha * family.minibatch(x, indices)


@dataclass(frozen=True)
class RunTrace:
    """Recorded measurements of one solver run."""

    records: tuple[TraceRecord, ...]
    final_iterate: np.ndarray
    config_digest: str
    region_violations: tuple[int, ...] = ()

    @property
    def ks(self) -> np.ndarray:
        return np.array([r.k for r in self.records], dtype=int)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.records])

    @property
    def batches(self) -> np.ndarray:
        return np.array([float(r.batch) for r in self.records])

    @property
    def dists(self) -> np.ndarray:
        return np.array(
            [math.nan if r.dist_to_fixed is None else r.dist_to_fixed for r in self.records]
        )

    @property
    def has_dists(self) -> bool:
        return all(r.dist_to_fixed is not None for r in self.records)


def _sample_weights(family, b, rng, outputs):
    """Realize the sampled-average weights for one batch of size b."""
    n = family.n_components
    if b <= _COUNT_TIER:
        counts = rng.index_counts(n, b)
        return counts / float(b)
    if b <= _MEAN_TIER:
        g = rng.standard_normal(n)
        scale = math.exp(-0.5 * (math.log(n) + math.log(b)))
        return 1.0 / n + (g - g.mean()) * scale
    return np.full(n, 1.0 / n)


class MiniBatchKM(BaseEstimator):
    """Mini-batch stochastic Krasnosel'skii-Mann fixed point solver.

    Parameters
    ----------
    step : StepSchedule, optional
        Step-size law alpha_k.  Defaults to a constant 0.5.
    batch : BatchSchedule, optional
        Batch-size law b_k.  Defaults to a constant batch of 1.
    n_steps : int
        Number of iterations K.
    seed, stream : int
        Key of the deterministic sample stream; runs that should be
        statistically independent use distinct streams.
    residual_cadence : int
        Record the exact mean-map residual every this many iterations
        (iteration 0 and K are always recorded).
    sampler : callable, optional
        Testing hook ``(k, n, b, rng) -> indices`` replacing i.i.d. uniform
        sampling; forcing the full index range turns the loop into the
        deterministic iteration on the mean map.

    Attributes
    ----------
    x_ : ndarray
        Final iterate after ``fit``.
    trace_ : RunTrace
        Per-iteration records, including ``||x_k - x*||`` when the family
        carries a known fixed point.
    n_features_in_ : int
        Dimension of the family the estimator was fitted on.
    """

    def __init__(
        self,
        step: StepSchedule | None = None,
        batch: BatchSchedule | None = None,
        n_steps: int = 100,
        seed: int = 0,
        stream: int = 0,
        residual_cadence: int = 1,
        sampler=None,
    ):
        self.step = step
        self.batch = batch
        self.n_steps = n_steps
        self.seed = seed
        self.stream = stream
        self.residual_cadence = residual_cadence
        self.sampler = sampler

    def _digest(self, family, step, batch, x0, region) -> str:
        h = hashlib.sha256()
        for line in family.describe_lines():
            h.update(line.encode())
            h.update(b"\n")
        parts = [
            step.describe(),
            batch.describe(),
            f"n_steps={int(self.n_steps)}",
            f"seed={int(self.seed)} stream={int(self.stream)}",
            f"cadence={int(self.residual_cadence)}",
            "sampler=custom" if self.sampler is not None else "sampler=iid",
            "x0 " + " ".join(repr(float(v)) for v in x0),
        ]
        if region is not None:
            center, radius = region
            parts.append(
                "region " + " ".join(repr(float(v)) for v in center) + f" {radius!r}"
            )
        h.update("\n".join(parts).encode())
        return h.hexdigest()

    def fit(self, family: OperatorFamily, x0=None, region=None):
        """Run K iterations on ``family`` starting from ``x0`` (zeros by default).

        ``region=(center, radius)`` optionally marks the region on which the
        family's variance certificate is valid; iterations that leave it are
        flagged in ``trace_.region_violations`` and the run continues.
        """
        if not isinstance(family, OperatorFamily):
            raise TypeError("fit expects an OperatorFamily")
        step = self.step if self.step is not None else ConstantStep(0.5)
        batch = self.batch if self.batch is not None else ConstantBatch(1)
        K = int(self.n_steps)
        if K < 1:
            raise ValueError("n_steps must be a positive integer")
        cadence = int(self.residual_cadence)
        if cadence < 1:
            raise ValueError("residual_cadence must be a positive integer")
        x = (
            np.zeros(family.dim)
            if x0 is None
            else check_vector(x0, family.dim, name="x0").copy()
        )
        if region is not None:
            center = check_vector(region[0], family.dim, name="region center")
            radius = float(region[1])
            if radius <= 0.0:
                raise ValueError("region radius must be positive")
            region = (center, radius)
        hint = family.fixed_point_hint
        rng = RngStream(self.seed, self.stream)
        n = family.n_components
        records: list[TraceRecord] = []
        violations: list[int] = []
        digest = self._digest(family, step, batch, x, region)

        for k in range(K + 1):
            outputs = family.apply_all(x, validate=False)
            if not np.all(np.isfinite(outputs)):
                raise NumericFailureError(k, f"component output overflow at step {k}")
            if k == K or k % cadence == 0:
                tbar = outputs.mean(axis=0)
                residual = float(np.linalg.norm(x - tbar))
                dist = None if hint is None else float(np.linalg.norm(x - hint))
                if not math.isfinite(residual) or (dist is not None and not math.isfinite(dist)):
                    raise NumericFailureError(k, f"trace quantity overflow at step {k}")
                records.append(
                    TraceRecord(
                        k=k,
                        alpha=step.step_at(k),
                        batch=batch.batch_at(k),
                        residual=residual,
                        dist_to_fixed=dist,
                    )
                )
            if k == K:
                break
            alpha = step.step_at(k)
            if not 0.0 < alpha <= 1.0:
                raise ValueError(f"step size {alpha} at k={k} outside (0, 1]")
            b = batch.batch_at(k)
            if self.sampler is not None:
                idx = family._check_indices(self.sampler(k, n, b, rng))
                if np.all(idx == idx[0]):
                    estimate = outputs[idx[0]]
                else:
                    estimate = outputs[idx].mean(axis=0)
            elif b <= _INDEX_TIER:
                idx = rng.draw_indices(n, b)
                estimate = outputs[idx].mean(axis=0)
            else:
                estimate = _sample_weights(family, b, rng, outputs) @ outputs
            x = (1.0 - alpha) * x + alpha * estimate
            if not np.all(np.isfinite(x)):
                raise NumericFailureError(k + 1)
            if region is not None and np.linalg.norm(x - region[0]) > region[1]:
                violations.append(k + 1)

        self.x_ = x
        self.trace_ = RunTrace(
            records=tuple(records),
            final_iterate=x,
            config_digest=digest,
            region_violations=tuple(violations),
        )
        self.n_features_in_ = family.dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "trace_"):
            raise NotFittedError("this MiniBatchKM instance is not fitted yet")

    def residual_trace(self) -> np.ndarray:
        self._check_fitted()
        return self.trace_.residuals


@dataclass(frozen=True)
class AggregateTrace:
    """Per-iteration statistics of the residual across independent runs."""

    ks: np.ndarray
    mean_residual: np.ndarray
    running_min_mean: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    residual_matrix: np.ndarray
    dist_matrix: np.ndarray | None = None
    traces: tuple[RunTrace, ...] = field(default=(), repr=False)

    @property
    def n_runs(self) -> int:
        return self.residual_matrix.shape[0]

    def min_mean_residual(self) -> float:
        return float(self.running_min_mean[-1])

    def stderr_at_argmin(self) -> float:
        """Standard error of the mean residual at the iterate achieving the minimum."""
        j = int(np.argmin(self.mean_residual))
        col = self.residual_matrix[:, j]
        if col.shape[0] < 2:
            return 0.0
        return float(col.std(ddof=1) / math.sqrt(col.shape[0]))


def aggregate_traces(
    family: OperatorFamily,
    estimator: MiniBatchKM,
    seeds,
    x0=None,
    region=None,
    percentiles=(10.0, 90.0),
) -> AggregateTrace:
    """Run one configuration under several sample streams and aggregate.

    ``seeds`` is either an int (streams 0..seeds-1 under the estimator's base
    seed), a sequence of stream ids, or a sequence of RngStream objects.  At
    least two independent runs are required.
    """
    from sklearn.base import clone

    if isinstance(seeds, (int, np.integer)):
        seeds = list(range(int(seeds)))
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("aggregation needs at least 2 seeds")
    traces = []
    for s in seeds:
        est = clone(estimator)
        if isinstance(s, RngStream):
            est.set_params(seed=s.seed, stream=s.stream_id)
        else:
            est.set_params(stream=int(s))
        est.fit(family, x0=x0, region=region)
        traces.append(est.trace_)
    ks = traces[0].ks
    for t in traces[1:]:
        if not np.array_equal(t.ks, ks):
            raise ValueError("runs produced mismatched record grids")
    resid = np.stack([t.residuals for t in traces])
    mean = resid.mean(axis=0)
    lo, hi = np.percentile(resid, percentiles, axis=0)
    dist = np.stack([t.dists for t in traces]) if traces[0].has_dists else None
    return AggregateTrace(
        ks=ks,
        mean_residual=mean,
        running_min_mean=np.minimum.accumulate(mean),
        band_lo=lo,
        band_hi=hi,
        residual_matrix=resid,
        dist_matrix=dist,
        traces=tuple(traces),
    )

"""Shared numeric primitives: validated vectors, seeded index streams, trace records.

Everything downstream works on plain 1-D float64 numpy arrays.  Validation is
done once at API boundaries; inner loops trust their inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericFailureError",
    "EnumerationBudgetError",
    "ScheduleOverflowError",
    "check_vector",
    "vector_norm",
    "RngStream",
    "check_rng",
    "TraceRecord",
]


class NumericFailureError(RuntimeError):
    """An iterate left the finite float64 range.  Carries the failing step."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = int(iteration)
        super().__init__(message or f"non-finite iterate at step {iteration}")


class EnumerationBudgetError(RuntimeError):
    """An exact enumeration would exceed its configured budget."""


class ScheduleOverflowError(RuntimeError):
    """A schedule value exceeds the representable numeric range."""


def check_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float64 array, checking dimension if given."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a nonempty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    return arr


def vector_norm(x) -> float:
    """Euclidean norm of a validated vector."""
    return float(np.linalg.norm(check_vector(x)))


_UINT64_MASK = (1 << 64) - 1


class RngStream:
    """Deterministic Philox-backed random stream.

    The generator is counter-based: the (seed, stream_id) pair is the Philox
    key, so identical pairs replay the identical draw sequence bit for bit on
    any platform, and distinct stream ids give statistically independent
    streams.  A stream is single-owner mutable state; parallel runs must use
    distinct stream ids rather than sharing one instance.
    """

    def __init__(self, seed: int = 0, stream_id: int = 0):
        self.seed = int(seed) & _UINT64_MASK
        self.stream_id = int(stream_id) & _UINT64_MASK
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def draw_indices(self, n: int, b: int) -> np.ndarray:
        """Draw ``b`` i.i.d. uniform component indices in ``[0, n)`` with replacement."""
        if n < 1:
            raise ValueError("n must be a positive integer")
        if b < 1:
            raise ValueError("batch size must be a positive integer")
        return self._gen.integers(0, n, size=int(b))

    def index_counts(self, n: int, b: int) -> np.ndarray:
        """Multiplicities of ``b`` uniform draws on ``[0, n)``, sampled in O(n).

        Distributionally identical to ``np.bincount(draw_indices(n, b))`` but
        independent of ``b`` in cost; used for very large batch sizes.
        """
        if n < 1 or b < 1:
            raise ValueError("n and batch size must be positive integers")
        return self._gen.multinomial(int(b), np.full(n, 1.0 / n))

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def unit_vector(self, dim: int) -> np.ndarray:
        """A uniformly random direction on the unit sphere."""
        v = self._gen.standard_normal(dim)
        nrm = np.linalg.norm(v)
        while nrm < 1e-12:
            v = self._gen.standard_normal(dim)
            nrm = np.linalg.norm(v)
        return v / nrm


def check_rng(random_state) -> RngStream:
    """Coerce ``None`` | int | RngStream to an RngStream (sklearn-style helper).

    ``None`` maps to the fixed seed 0 so that every code path is replayable.
    """
    if random_state is None:
        return RngStream(0)
    if isinstance(random_state, RngStream):
        return random_state
    if isinstance(random_state, (int, np.integer)):
        return RngStream(int(random_state))
    raise TypeError(f"cannot build an RngStream from {random_state!r}")


@dataclass(frozen=True)
class TraceRecord:
    """One per-iteration measurement of a solver run.

    ``residual`` is the exact mean-map residual ``||x_k - T(x_k)||`` and
    ``dist_to_fixed`` is ``||x_k - x*||`` when a reference fixed point is
    known.  ``alpha`` lives in (0, 1]; the right endpoint occurs for the
    diminishing step law at k = 0.
    """

    k: int
    alpha: float
    batch: int
    residual: float
    dist_to_fixed: float | None = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("iteration index must be nonnegative")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("step size must lie in (0, 1]")
        if self.batch < 1:
            raise ValueError("batch size must be positive")
        if not (math.isfinite(self.residual) and self.residual >= 0.0):
            raise ValueError("residual must be finite and nonnegative")
        if self.dist_to_fixed is not None and not (
            math.isfinite(self.dist_to_fixed) and self.dist_to_fixed >= 0.0
        ):
            raise ValueError("dist_to_fixed must be finite and nonnegative")

"""Step-size and batch-size laws with convergence-condition certificates.

The solver needs a step law k -> alpha_k in (0, 1] and a batch law
k -> b_k in N.  Almost-sure convergence requires a divergent sum of
alpha_k (1 - alpha_k) together with a summable sum of 1/sqrt(b_k); the
certificate below classifies a (step, batch) pair analytically and the
partial-sum methods let tests witness both conditions numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import ScheduleOverflowError

__all__ = [
    "StepSchedule",
    "ConstantStep",
    "DiminishingStep",
    "BatchSchedule",
    "ConstantBatch",
    "PolynomialBatch",
    "ExponentialBatch",
    "ScheduleCertificate",
    "certify_conditions",
    "tail_constant",
    "step_sum_lower_bound",
]


def _check_k(k: int) -> int:
    k = int(k)
    if k < 0:
        raise ValueError("iteration index must be nonnegative")
    return k


class StepSchedule:
    """Base class for step-size laws."""

    def step_at(self, k: int) -> float:
        raise NotImplementedError

    def sum_alpha_one_minus_alpha(self, K: int) -> float:
        """Partial sum of alpha_k (1 - alpha_k) for k < K, by direct accumulation."""
        K = int(K)
        if K < 1:
            raise ValueError("K must be positive")
        return math.fsum(
            (lambda a: a * (1.0 - a))(self.step_at(k)) for k in range(K)
        )

    @property
    def divergent_step_sum(self) -> bool:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    def describe(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.to_config().items())


class ConstantStep(StepSchedule):
    """alpha_k = alpha with alpha strictly inside (0, 1)."""

    def __init__(self, alpha: float):
        self.alpha = float(alpha)
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("constant step size must lie strictly in (0, 1)")

    def step_at(self, k):
        _check_k(k)
        return self.alpha

    @property
    def divergent_step_sum(self):
        return True

    def to_config(self):
        return {"step": "constant", "alpha": self.alpha}


class DiminishingStep(StepSchedule):
    """alpha_k = 1 / (k + 1)^decay with decay in (0, 1]; alpha_0 = 1."""

    def __init__(self, decay: float):
        self.decay = float(decay)
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("diminishing decay exponent must lie in (0, 1]")

    def step_at(self, k):
        k = _check_k(k)
        return (k + 1.0) ** (-self.decay)

    @property
    def divergent_step_sum(self):
        return True

    def to_config(self):
        return {"step": "diminishing", "decay": self.decay}


class BatchSchedule:
    """Base class for batch-size laws emitting positive integers."""

    cap: int | None = None

    def batch_at(self, k: int) -> int:
        raise NotImplementedError

    def _log_raw(self, k: int) -> float:
        """log of the real-valued law, for sizes beyond the float range."""
        raise NotImplementedError

    def inverse_sqrt_batch(self, k: int) -> float:
        """1/sqrt(b_k), falling back to log space for astronomically large b_k."""
        try:
            b = self.batch_at(k)
        except ScheduleOverflowError:
            return math.exp(-0.5 * self._log_raw(k))
        if b < 1e300:
            return 1.0 / math.sqrt(b)
        return math.exp(-0.5 * math.log(b))

    def inverse_batch(self, k: int) -> float:
        """1/b_k with the same large-size fallback."""
        try:
            b = self.batch_at(k)
        except ScheduleOverflowError:
            return math.exp(-self._log_raw(k))
        if b < 1e300:
            return 1.0 / b
        return math.exp(-math.log(b))

    def sum_inv_sqrt(self, K: int) -> float:
        """Partial sum of 1/sqrt(b_k) for k < K, by direct accumulation."""
        K = int(K)
        if K < 1:
            raise ValueError("K must be positive")
        return math.fsum(self.inverse_sqrt_batch(k) for k in range(K))

    @property
    def summable_inv_sqrt(self) -> bool:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    def describe(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.to_config().items())


def _apply_cap(b: int, cap: int | None) -> int:
    if cap is not None:
        return min(b, cap)
    return b


def _check_cap(cap) -> int | None:
    if cap is None:
        return None
    cap = int(cap)
    if cap < 1:
        raise ValueError("cap must be a positive integer")
    return cap


class ConstantBatch(BatchSchedule):
    """b_k = b."""

    def __init__(self, size: int):
        self.size = int(size)
        if self.size < 1:
            raise ValueError("constant batch size must be a positive integer")
        self.cap = None

    def batch_at(self, k):
        _check_k(k)
        return self.size

    def _log_raw(self, k):
        return math.log(self.size)

    @property
    def summable_inv_sqrt(self):
        return False

    def to_config(self):
        return {"batch": "constant", "b": self.size}


class PolynomialBatch(BatchSchedule):
    """b_k = max(1, ceil((growth * k + base)^power)) with power > 1.

    Integral parameters are evaluated in exact integer arithmetic so the law
    is reproducible at any k; otherwise float evaluation is used with an
    overflow guard.
    """

    def __init__(self, growth: float, base: float, power: float, cap: int | None = None):
        self.growth = float(growth)
        self.base = float(base)
        self.power = float(power)
        if self.growth <= 0.0:
            raise ValueError("growth must be positive")
        if self.base <= 0.0:
            raise ValueError("base must be positive")
        if self.power <= 1.0:
            raise ValueError("power must exceed 1")
        self.cap = _check_cap(cap)
        self._int_exact = (
            self.growth.is_integer() and self.base.is_integer() and self.power.is_integer()
        )

    def batch_at(self, k):
        k = _check_k(k)
        if self._int_exact:
            raw = (int(self.growth) * k + int(self.base)) ** int(self.power)
            return _apply_cap(max(1, raw), self.cap)
        try:
            value = (self.growth * k + self.base) ** self.power
        except OverflowError:
            value = math.inf
        if math.isinf(value):
            if self.cap is not None:
                return self.cap
            raise ScheduleOverflowError(f"polynomial batch size overflows at k={k}")
        return _apply_cap(max(1, math.ceil(value)), self.cap)

    def _log_raw(self, k):
        return self.power * math.log(self.growth * k + self.base)

    @property
    def summable_inv_sqrt(self):
        # sum (growth*k + base)^(-power/2) converges iff power > 2; the
        # nominal closed-form constant is stated for power > 1 (see notes).
        return self.cap is None and self.power > 2.0

    def to_config(self):
        cfg = {
            "batch": "polynomial",
            "growth": self.growth,
            "b0": self.base,
            "power": self.power,
        }
        if self.cap is not None:
            cfg["cap"] = self.cap
        return cfg


class ExponentialBatch(BatchSchedule):
    """b_k = max(1, ceil(base * rate^k)) with base >= 1 and rate > 1."""

    def __init__(self, base: float, rate: float, cap: int | None = None):
        self.base = float(base)
        self.rate = float(rate)
        if self.base < 1.0:
            raise ValueError("base must be at least 1")
        if self.rate <= 1.0:
            raise ValueError("rate must exceed 1")
        self.cap = _check_cap(cap)
        self._int_exact = self.base.is_integer() and self.rate.is_integer()

    def batch_at(self, k):
        k = _check_k(k)
        if self._int_exact:
            raw = int(self.base) * int(self.rate) ** k
            return _apply_cap(max(1, raw), self.cap)
        try:
            value = self.base * self.rate**k
        except OverflowError:
            value = math.inf
        if math.isinf(value):
            if self.cap is not None:
                return self.cap
            raise ScheduleOverflowError(f"exponential batch size overflows at k={k}")
        return _apply_cap(max(1, math.ceil(value)), self.cap)

    def _log_raw(self, k):
        return math.log(self.base) + k * math.log(self.rate)

    @property
    def summable_inv_sqrt(self):
        return self.cap is None

    def to_config(self):
        cfg = {"batch": "exponential", "b0": self.base, "delta": self.rate}
        if self.cap is not None:
            cfg["cap"] = self.cap
        return cfg


@dataclass(frozen=True)
class ScheduleCertificate:
    """Analytic classification of one (step, batch) pair."""

    divergent_step_sum: bool
    summable_inv_sqrt_batch: bool
    notes: tuple[str, ...] = ()

    @property
    def certified(self) -> bool:
        return self.divergent_step_sum and self.summable_inv_sqrt_batch


def certify_conditions(step: StepSchedule, batch: BatchSchedule) -> ScheduleCertificate:
    """Classify whether the pair meets both convergence conditions.

    The step sum diverges for every supported law.  The batch condition holds
    for uncapped exponential laws and for uncapped polynomial laws with
    power > 2 (comparison with sum k^(-power/2)); a cap makes the sequence
    eventually constant and voids the condition.
    """
    notes: list[str] = []
    divergent = step.divergent_step_sum
    if isinstance(batch, ConstantBatch):
        summable = False
        notes.append("constant batch size leaves sum 1/sqrt(b_k) divergent")
    elif batch.cap is not None:
        summable = False
        notes.append(
            f"cap {batch.cap} makes the batch sequence eventually constant; "
            "sum 1/sqrt(b_k) diverges"
        )
    elif isinstance(batch, PolynomialBatch):
        summable = batch.power > 2.0
        if not summable:
            notes.append(
                f"polynomial power {batch.power} in (1, 2] gives "
                "1/sqrt(b_k) ~ k^(-power/2) with power/2 <= 1, which is not "
                "summable; the nominal closed-form constant assumes power > 1"
            )
    elif isinstance(batch, ExponentialBatch):
        summable = True
        notes.append(
            "nominal closed-form constant rate/((rate-1)*b0) matches "
            "sum 1/b_k; compare with the exact partial sum of 1/sqrt(b_k)"
        )
    else:
        raise TypeError(f"unknown batch schedule {type(batch).__name__}")
    return ScheduleCertificate(divergent, summable, tuple(notes))


def tail_constant(batch: BatchSchedule) -> float:
    """Nominal closed-form constant associated with sum_k 1/sqrt(b_k).

    Polynomial: (2c - 1) / ((c - 1) * min(growth, base)) with c the power.
    Exponential: rate / ((rate - 1) * base).

    For the exponential kind this expression equals the geometric sum of
    1/b_k rather than of 1/sqrt(b_k) (exact value sqrt(rate) /
    (sqrt(base) (sqrt(rate) - 1))), so it can undershoot the true tail;
    ``sum_inv_sqrt`` gives the exact partial sums for comparison.
    """
    if batch.cap is not None:
        raise ValueError("tail constant is defined for uncapped schedules only")
    if isinstance(batch, PolynomialBatch):
        c = batch.power
        return (2.0 * c - 1.0) / ((c - 1.0) * min(batch.growth, batch.base))
    if isinstance(batch, ExponentialBatch):
        return batch.rate / ((batch.rate - 1.0) * batch.base)
    raise ValueError("tail constant is defined for polynomial and exponential kinds")


def step_sum_lower_bound(step: StepSchedule, K: int) -> float:
    """Closed-form lower bound for the partial sum of alpha_k (1 - alpha_k).

    Exact for the constant law; for the diminishing law the bound depends on
    the decay exponent a, with separate expressions for a < 1/2, a = 1/2,
    a in (1/2, 1) and a = 1 (natural logarithms throughout).
    """
    K = int(K)
    if K < 1:
        raise ValueError("K must be positive")
    if isinstance(step, ConstantStep):
        return step.alpha * (1.0 - step.alpha) * K
    if isinstance(step, DiminishingStep):
        a = step.decay
        if a < 0.5:
            return ((K + 1.0) ** (1.0 - a) - 1.0) / (1.0 - a) - K ** (1.0 - 2.0 * a) / (
                1.0 - 2.0 * a
            )
        if a == 0.5:
            return 2.0 * math.sqrt(K + 1.0) - math.log(K) - 3.0
        if a < 1.0:
            return ((K + 1.0) ** (1.0 - a) - 1.0) / (1.0 - a) - 2.0 * a / (2.0 * a - 1.0)
        return math.log(K + 1.0) - 2.0
    raise TypeError(f"unknown step schedule {type(step).__name__}")

"""Flat key = value experiment configuration with strict validation.

The format is line-oriented: ``key = value`` pairs, ``#`` comments, blank
lines ignored.  Unknown keys, duplicate keys, malformed lines and numeric
range errors are rejected with the offending line number so configs stay
diffable and replayable.  See configs/ for documented examples.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .problems import ProblemInstance, make_feasibility, make_minimization, make_zero_point
from .schedules import (
    BatchSchedule,
    ConstantBatch,
    ConstantStep,
    DiminishingStep,
    ExponentialBatch,
    PolynomialBatch,
    StepSchedule,
)

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    """A configuration problem, pointing at the offending line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


_PROBLEM_KEYS = {"kind", "dim", "n_components", "problem_seed"}
_KIND_KEYS = {
    "feasibility": {"spread", "ball_fraction"},
    "zero-point": {"beta_fraction"},
    "minimization": {"eta_fraction"},
}
_STEP_KEYS = {"step", "alpha", "decay"}
_BATCH_KEYS = {"batch", "b", "b0", "delta", "growth", "power", "cap"}
_RUN_KEYS = {"steps", "seeds", "base_seed", "residual_cadence", "output", "K_grid"}
_ALL_KEYS = (
    _PROBLEM_KEYS
    | set().union(*_KIND_KEYS.values())
    | _STEP_KEYS
    | _BATCH_KEYS
    | _RUN_KEYS
)


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    kind: str
    dim: int
    n_components: int
    problem_seed: int = 0
    spread: float = 1.0
    ball_fraction: float = 0.75
    beta_fraction: float = 0.9
    eta_fraction: float = 0.9
    step_kind: str = "constant"
    alpha: float = 0.5
    decay: float = 1.0
    batch_kind: str = "constant"
    b: int = 1
    b0: float = 2.0
    delta: float = 2.0
    growth: float = 1.0
    power: float = 3.0
    cap: int | None = None
    steps: int | None = None
    seeds: int = 1
    base_seed: int = 0
    residual_cadence: int = 1
    output: str | None = None
    K_grid: tuple[int, ...] = field(default_factory=tuple)

    def build_instance(self) -> ProblemInstance:
        if self.kind == "feasibility":
            return make_feasibility(
                self.dim,
                self.n_components,
                random_state=self.problem_seed,
                spread=self.spread,
                ball_fraction=self.ball_fraction,
            )
        if self.kind == "zero-point":
            return make_zero_point(
                self.dim,
                self.n_components,
                random_state=self.problem_seed,
                beta_fraction=self.beta_fraction,
            )
        if self.kind == "minimization":
            return make_minimization(
                self.dim,
                self.n_components,
                random_state=self.problem_seed,
                eta_fraction=self.eta_fraction,
            )
        raise ConfigError(f"unknown problem kind {self.kind!r}")

    def build_step(self) -> StepSchedule:
        if self.step_kind == "constant":
            return ConstantStep(self.alpha)
        if self.step_kind == "diminishing":
            return DiminishingStep(self.decay)
        raise ConfigError(f"unknown step kind {self.step_kind!r}")

    def build_batch(self) -> BatchSchedule:
        if self.batch_kind == "constant":
            return ConstantBatch(self.b)
        if self.batch_kind == "polynomial":
            return PolynomialBatch(self.growth, self.b0, self.power, cap=self.cap)
        if self.batch_kind == "exponential":
            return ExponentialBatch(self.b0, self.delta, cap=self.cap)
        raise ConfigError(f"unknown batch kind {self.batch_kind!r}")


def _parse_pairs(text: str):
    pairs: dict[str, tuple[str, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno)
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in pairs:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        if not value:
            raise ConfigError(f"key {key!r} has no value", lineno)
        pairs[key] = (value, lineno)
    return pairs


def _get(pairs, key, convert, default=None, required=False):
    if key not in pairs:
        if required:
            raise ConfigError(f"missing required key {key!r}")
        return default
    value, lineno = pairs[key]
    try:
        return convert(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key {key!r}: {exc}", lineno) from exc


def _positive_int(value: str) -> int:
    iv = int(value)
    if iv < 1:
        raise ValueError("must be a positive integer")
    return iv


def _int_grid(value: str) -> tuple[int, ...]:
    grid = tuple(_positive_int(tok) for tok in value.split())
    if len(grid) != len(set(grid)) or list(grid) != sorted(grid):
        raise ValueError("must be strictly increasing")
    return grid


def parse_config(text: str) -> ExperimentConfig:
    pairs = _parse_pairs(text)

    kind = _get(pairs, "kind", str, required=True)
    if kind not in _KIND_KEYS:
        raise ConfigError(
            f"kind must be one of {sorted(_KIND_KEYS)}", pairs["kind"][1]
        )
    for other_kind, keys in _KIND_KEYS.items():
        if other_kind == kind:
            continue
        for key in keys:
            if key in pairs and key not in _KIND_KEYS[kind]:
                raise ConfigError(
                    f"key {key!r} only applies to {other_kind} instances",
                    pairs[key][1],
                )

    step_kind = _get(pairs, "step", str, required=True)
    if step_kind not in ("constant", "diminishing"):
        raise ConfigError("step must be constant or diminishing", pairs["step"][1])
    if step_kind == "constant" and "decay" in pairs:
        raise ConfigError("key 'decay' only applies to diminishing steps", pairs["decay"][1])
    if step_kind == "diminishing" and "alpha" in pairs:
        raise ConfigError("key 'alpha' only applies to constant steps", pairs["alpha"][1])

    batch_kind = _get(pairs, "batch", str, required=True)
    if batch_kind not in ("constant", "polynomial", "exponential"):
        raise ConfigError(
            "batch must be constant, polynomial or exponential", pairs["batch"][1]
        )
    batch_key_owners = {
        "b": ("constant",),
        "b0": ("polynomial", "exponential"),
        "delta": ("exponential",),
        "growth": ("polynomial",),
        "power": ("polynomial",),
        "cap": ("polynomial", "exponential"),
    }
    for key, owners in batch_key_owners.items():
        if key in pairs and batch_kind not in owners:
            raise ConfigError(
                f"key {key!r} only applies to {' or '.join(owners)} batches",
                pairs[key][1],
            )

    cfg = ExperimentConfig(
        kind=kind,
        dim=_get(pairs, "dim", _positive_int, required=True),
        n_components=_get(pairs, "n_components", _positive_int, required=True),
        problem_seed=_get(pairs, "problem_seed", int, default=0),
        spread=_get(pairs, "spread", float, default=1.0),
        ball_fraction=_get(pairs, "ball_fraction", float, default=0.75),
        beta_fraction=_get(pairs, "beta_fraction", float, default=0.9),
        eta_fraction=_get(pairs, "eta_fraction", float, default=0.9),
        step_kind=step_kind,
        alpha=_get(pairs, "alpha", float, default=0.5),
        decay=_get(pairs, "decay", float, default=1.0),
        batch_kind=batch_kind,
        b=_get(pairs, "b", _positive_int, default=1),
        b0=_get(pairs, "b0", float, default=2.0),
        delta=_get(pairs, "delta", float, default=2.0),
        growth=_get(pairs, "growth", float, default=1.0),
        power=_get(pairs, "power", float, default=3.0),
        cap=_get(pairs, "cap", _positive_int, default=None),
        steps=_get(pairs, "steps", _positive_int, default=None),
        seeds=_get(pairs, "seeds", _positive_int, default=1),
        base_seed=_get(pairs, "base_seed", int, default=0),
        residual_cadence=_get(pairs, "residual_cadence", _positive_int, default=1),
        output=_get(pairs, "output", str, default=None),
        K_grid=_get(pairs, "K_grid", _int_grid, default=()),
    )

    # Range checks that the schedule constructors would catch late; doing them
    # here keeps the line numbers in the error message.
    try:
        cfg.build_step()
        cfg.build_batch()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())

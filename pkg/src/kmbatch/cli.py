"""Command-line entry point: solve / bench / verify.

solve   -- one run of the mini-batch iteration, trace written as CSV.
bench   -- multi-seed runs over a K grid, rate report CSV plus a verdict line.
verify  -- built-in enumeration audits, schedule certificates and operator
           property checks; exit code 0 only when nothing is violated.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys

import numpy as np

from .analysis import (
    alpha_over_batch_tail,
    dominance_check,
    fit_rate,
    floor_estimate,
    inequality_audit,
    min_residual_bound,
    nonexpansivity_slack,
)
from .config import ConfigError, load_config
from .core import NumericFailureError, RngStream, TraceRecord
from .operators import ComponentOperator, OperatorFamily
from .problems import make_feasibility, make_minimization, make_zero_point
from .schedules import (
    ConstantBatch,
    ConstantStep,
    DiminishingStep,
    ExponentialBatch,
    PolynomialBatch,
    certify_conditions,
    step_sum_lower_bound,
)
from .solver import MiniBatchKM, aggregate_traces

__all__ = ["main", "write_trace_csv", "read_trace_csv", "write_rate_csv"]

TRACE_COLUMNS = ("k", "alpha", "batch", "residual", "dist_to_fixed")
RATE_COLUMNS = ("K", "min_mean_residual", "theoretical_bound", "slope", "stderr")


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_trace_csv(trace, path) -> None:
    """Emit trace records with 17-significant-digit decimals (round-trip exact)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in trace.records:
            writer.writerow(
                [
                    r.k,
                    _fmt(r.alpha),
                    r.batch,
                    _fmt(r.residual),
                    "" if r.dist_to_fixed is None else _fmt(r.dist_to_fixed),
                ]
            )


def read_trace_csv(path) -> list[TraceRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header!r}")
        for row in reader:
            records.append(
                TraceRecord(
                    k=int(row[0]),
                    alpha=float(row[1]),
                    batch=int(row[2]),
                    residual=float(row[3]),
                    dist_to_fixed=None if row[4] == "" else float(row[4]),
                )
            )
    return records


def write_rate_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RATE_COLUMNS)
        for K, min_mean, bound, slope, stderr in rows:
            writer.writerow(
                [
                    K,
                    _fmt(min_mean),
                    "" if bound is None else _fmt(bound),
                    _fmt(slope) if slope is not None else "",
                    _fmt(stderr) if stderr is not None else "",
                ]
            )


def _resolve_out(args, cfg) -> str:
    out = args.out or cfg.output
    if not out:
        raise ConfigError("no output path (set 'output' in the config or pass --out)")
    return out


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    if cfg.steps is None:
        raise ConfigError("missing required key 'steps'")
    out = _resolve_out(args, cfg)
    base_seed = cfg.base_seed if args.base_seed is None else args.base_seed
    instance = cfg.build_instance()
    est = MiniBatchKM(
        step=cfg.build_step(),
        batch=cfg.build_batch(),
        n_steps=cfg.steps,
        seed=base_seed,
        stream=0,
        residual_cadence=cfg.residual_cadence,
    )
    est.fit(instance.family, x0=instance.x0, region=instance.region)
    write_trace_csv(est.trace_, out)
    if not args.quiet:
        trace = est.trace_
        print(
            f"solve: kind={cfg.kind} d={cfg.dim} n={cfg.n_components} K={cfg.steps} "
            f"final_residual={trace.records[-1].residual:.6e} "
            f"region_violations={len(trace.region_violations)} -> {out}"
        )
    return 0


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    if not cfg.K_grid:
        raise ConfigError("bench needs a 'K_grid' entry")
    seeds = cfg.seeds if args.seeds is None else args.seeds
    if seeds < 2:
        raise ConfigError("bench needs at least 2 seeds")
    base_seed = cfg.base_seed if args.base_seed is None else args.base_seed
    out = _resolve_out(args, cfg)
    instance = cfg.build_instance()
    step, batch = cfg.build_step(), cfg.build_batch()
    certificate = certify_conditions(step, batch)
    sigma = instance.constants.get("sigma", instance.family.sigma_bound)
    dist0 = instance.initial_distance()

    mins, stderrs, bounds = [], [], []
    last_agg = None
    for K in cfg.K_grid:
        est = MiniBatchKM(
            step=step,
            batch=batch,
            n_steps=K,
            seed=base_seed,
            residual_cadence=cfg.residual_cadence,
        )
        agg = aggregate_traces(
            instance.family, est, seeds, x0=instance.x0, region=instance.region
        )
        mins.append(agg.min_mean_residual())
        stderrs.append(agg.stderr_at_argmin())
        try:
            bounds.append(min_residual_bound(dist0, sigma, step, batch, K))
        except ValueError:
            bounds.append(None)
        last_agg = agg

    slope = stderr = None
    if len(cfg.K_grid) >= 4 and all(m > 0 for m in mins):
        fit = fit_rate(cfg.K_grid, mins)
        slope, stderr = fit.slope, fit.stderr
    write_rate_csv(
        ((K, m, b, slope, stderr) for K, m, b in zip(cfg.K_grid, mins, bounds)), out
    )

    slope_txt = "n/a" if slope is None else f"{slope:.3f}"
    if certificate.certified and all(b is not None for b in bounds):
        dominated = all(
            dominance_check(m, se, b) for m, se, b in zip(mins, stderrs, bounds)
        )
        verdict = "PASS" if dominated else "FAIL"
        line = (
            f"bench: slope={slope_txt} bound-dominance="
            f"{'ok' if dominated else 'violated'} verdict={verdict}"
        )
    else:
        floor = floor_estimate(last_agg)
        floor_txt = f"{floor.value:.6e}" if floor.conclusive else "inconclusive"
        line = (
            f"bench: slope={slope_txt} (non-vanishing) floor={floor_txt} "
            "bound=unavailable verdict=FLOOR"
        )
    if not args.quiet:
        print(line)
    return 0


class _Scaled(ComponentOperator):
    """Verification hook: one component scaled by a factor (breaks nonexpansivity)."""

    def __init__(self, op: ComponentOperator, factor: float):
        self.op = op
        self.factor = float(factor)
        self.dim = op.dim

    def _apply(self, x):
        return self.factor * self.op._apply(x)

    def describe_lines(self):
        return ["scaled", f"factor {self.factor!r}", *self.op.describe_lines()]


def _verify_instances(scale_component=None):
    feas = make_feasibility(2, 2, random_state=11, spread=1.0)
    if scale_component is not None:
        components = list(feas.family.components)
        components[0] = _Scaled(components[0], scale_component)
        feas.family = OperatorFamily(components)
    zero = make_zero_point(3, 3, random_state=12)
    mini = make_minimization(2, 2, random_state=13)
    return feas, zero, mini


def cmd_verify(args) -> int:
    failures = []
    checks = 0

    def check(name, ok, detail=""):
        nonlocal checks
        checks += 1
        status = "ok  " if ok else "FAIL"
        if not args.quiet or not ok:
            print(f"{status} {name}{': ' + detail if detail else ''}")
        if not ok:
            failures.append(name)

    try:
        # Step-size precondition (hook target: --inject-bad-alpha).
        alpha = 0.5 if args.inject_bad_alpha is None else args.inject_bad_alpha
        try:
            ConstantStep(alpha)
            check("step-precondition", True, f"alpha={alpha} admissible")
        except ValueError as exc:
            check("step-precondition", False, str(exc))

        # Schedule certificates on the canonical pairs.
        expected = [
            (ConstantStep(0.5), ConstantBatch(32), True, False),
            (ConstantStep(0.5), PolynomialBatch(1.0, 1.0, 4.0), True, True),
            (ConstantStep(0.5), ExponentialBatch(2.0, 2.0), True, True),
            (DiminishingStep(1.0), ConstantBatch(32), True, False),
            (DiminishingStep(1.0), PolynomialBatch(1.0, 1.0, 4.0), True, True),
            (DiminishingStep(1.0), ExponentialBatch(2.0, 2.0), True, True),
        ]
        ok = True
        for step, batch, want_div, want_sum in expected:
            cert = certify_conditions(step, batch)
            ok &= (
                cert.divergent_step_sum == want_div
                and cert.summable_inv_sqrt_batch == want_sum
            )
        check("schedule-certificates", ok, "6 canonical pairs")

        # Divergence witnesses: partial sums beat the closed-form lower bounds.
        ok = True
        for step in (
            ConstantStep(0.5),
            DiminishingStep(0.25),
            DiminishingStep(0.5),
            DiminishingStep(0.75),
            DiminishingStep(1.0),
        ):
            for K in (10, 100, 1000, 10000):
                partial = step.sum_alpha_one_minus_alpha(K)
                ok &= partial >= step_sum_lower_bound(step, K) - 1e-9
        check("step-sum-lower-bounds", ok, "K in {10,1e2,1e3,1e4}")

        # Summability witness: geometric tails collapse.
        exp = ExponentialBatch(2.0, 2.0)
        s3, s4 = exp.sum_inv_sqrt(1000), exp.sum_inv_sqrt(10000)
        check("batch-tail-collapse", s4 - s3 <= 1e-3 * s3, f"tail {s4 - s3:.3e}")
        capped = ExponentialBatch(2.0, 2.0, cap=64)
        check(
            "cap-voids-certificate",
            not certify_conditions(ConstantStep(0.5), capped).summable_inv_sqrt_batch,
        )

        feas, zero, mini = _verify_instances(args.scale_component)

        # Randomized nonexpansivity of every component (catches --scale-component).
        ok = True
        worst = math.inf
        for inst in (feas, zero, mini):
            slack = nonexpansivity_slack(inst.family, n_pairs=1000, random_state=5)
            worst = min(worst, slack)
            ok &= slack >= -1e-12
        check("nonexpansivity", ok, f"worst slack {worst:.3e} over 1000 pairs/component")

        # Exact unbiasedness and variance scaling of the sampled average.
        ok = True
        for inst in (feas, zero, mini):
            fam = inst.family
            x = inst.x0
            v1 = fam.batch_variance(x, 1, method="exact")
            for b in (2, 3):
                vb = fam.batch_variance(x, b, method="exact")
                ok &= abs(vb - v1 / b) <= 1e-12 * max(1.0, v1)
        check("variance-scaling", ok, "exact enumeration, b in {2,3}")

        # Certified variance bound dominates the sampled variance.
        ok = True
        for inst in (feas, zero, mini):
            rng = RngStream(99)
            sigma_sq = inst.sigma**2
            for _ in range(20):
                u = rng.unit_vector(inst.family.dim)
                x = inst.x_star + inst.r * rng.uniform() * u
                var = inst.family.batch_variance(
                    x, 1, method="monte-carlo", samples=2000, rng=rng
                )
                ok &= var <= sigma_sq * 1.05
        check("sigma-certificates", ok, "monte-carlo spot check")

        # Exhaustive per-step inequality audits.
        audits = [
            ("feasibility", feas, ConstantStep(0.5), ConstantBatch(1), 100),
            ("zero-point", zero, ConstantStep(0.5), ConstantBatch(2), 50),
            ("minimization", mini, DiminishingStep(1.0), ConstantBatch(2), 100),
        ]
        for name, inst, step, batch, steps in audits:
            report = inequality_audit(
                inst.family,
                inst.x_star,
                step,
                batch,
                steps,
                x0=inst.x0,
                random_state=7,
            )
            check(
                f"inequality-audit-{name}",
                report.passed,
                f"{report.steps} steps, {report.violations} violations",
            )
    except (ValueError, TypeError) as exc:
        print(f"FAIL precondition: {exc}")
        return 1

    if failures:
        print(f"verify: {len(failures)}/{checks} checks failed: {', '.join(failures)}")
        return 1
    if not args.quiet:
        print(f"verify: all {checks} checks passed")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kmbatch",
        description="Mini-batch stochastic Krasnosel'skii-Mann experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("solve", cmd_solve), ("bench", cmd_bench)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config path")
        p.add_argument("--out", default=None, help="output CSV path")
        p.add_argument("--seeds", type=int, default=None, help="override seed count")
        p.add_argument("--base-seed", type=int, default=None, help="override base seed")
        p.add_argument("--quiet", action="store_true")
        p.set_defaults(fn=fn)
    v = sub.add_parser("verify")
    v.add_argument("--quiet", action="store_true")
    v.add_argument("--inject-bad-alpha", type=float, default=None, help=argparse.SUPPRESS)
    v.add_argument("--scale-component", type=float, default=None, help=argparse.SUPPRESS)
    v.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from kmbatch import (
    BallProjection,
    BoxProjection,
    CocoerciveStep,
    EnumerationBudgetError,
    GradientStep,
    HalfspaceProjection,
    LinearScale,
    OperatorFamily,
    RngStream,
    power_iteration,
)


def grid_project(feasible, x, span=4.0, levels=5, points=41):
    """Multi-resolution brute-force projection oracle (2-D only)."""
    x = np.asarray(x, dtype=float)
    center = x.copy()
    best = None
    for _ in range(levels):
        g = np.linspace(-span / 2, span / 2, points)
        xx, yy = np.meshgrid(center[0] + g, center[1] + g)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        ok = feasible(pts)
        if not ok.any():
            span *= 2.0
            continue
        cand = pts[ok]
        dist = np.linalg.norm(cand - x, axis=1)
        best = cand[np.argmin(dist)]
        center = best
        span = span * 2.0 / (points - 1) * 2.0
    return best


class TestHalfspace:
    def test_axis_aligned(self):
        op = HalfspaceProjection([1.0, 0.0], 0.0)
        assert np.allclose(op.apply([2.0, 3.0]), [0.0, 3.0])

    def test_inside_is_identity(self):
        op = HalfspaceProjection([1.0, 0.0], 0.0)
        x = np.array([-1.0, 2.0])
        assert np.array_equal(op.apply(x), x)

    def test_against_grid_oracle(self):
        op = HalfspaceProjection([1.0, 1.0], 1.0)
        x = np.array([2.0, 2.0])
        oracle = grid_project(lambda p: p @ np.array([1.0, 1.0]) <= 1.0, x)
        assert np.linalg.norm(op.apply(x) - oracle) <= 1e-3

    def test_zero_normal_rejected(self):
        with pytest.raises(ValueError):
            HalfspaceProjection([0.0, 0.0], 1.0)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            HalfspaceProjection([1.0, 0.0], 0.0).apply([1.0, 2.0, 3.0])


class TestBall:
    def test_radial_scaling(self):
        op = BallProjection([0.0, 0.0], 1.0)
        assert np.allclose(op.apply([3.0, 4.0]), [0.6, 0.8])

    def test_inside_identity_exact(self):
        op = BallProjection([1.0, 1.0], 2.0)
        x = np.array([1.5, 0.5])
        assert np.array_equal(op.apply(x), x)

    def test_center_point(self):
        center = np.array([0.3, -0.7])
        op = BallProjection(center, 0.5)
        assert np.array_equal(op.apply(center), center)

    def test_against_grid_oracle(self):
        op = BallProjection([0.5, -0.5], 1.5)
        x = np.array([3.0, 1.0])
        oracle = grid_project(
            lambda p: np.linalg.norm(p - np.array([0.5, -0.5]), axis=1) <= 1.5, x
        )
        assert np.linalg.norm(op.apply(x) - oracle) <= 1e-3

    def test_nonpositive_radius(self):
        with pytest.raises(ValueError):
            BallProjection([0.0], 0.0)


class TestBox:
    def test_clip(self):
        op = BoxProjection([-1.0, -1.0], [1.0, 1.0])
        assert np.allclose(op.apply([2.0, -3.0]), [1.0, -1.0])

    def test_against_grid_oracle(self):
        op = BoxProjection([-1.0, 0.0], [1.0, 2.0])
        x = np.array([2.5, -1.0])
        oracle = grid_project(
            lambda p: np.all((p >= [-1.0, 0.0]) & (p <= [1.0, 2.0]), axis=1), x
        )
        assert np.linalg.norm(op.apply(x) - oracle) <= 1e-3

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            BoxProjection([1.0], [0.0])


class TestMatrixSteps:
    def test_cocoercive_formula(self):
        m = np.array([[2.0, 0.0], [0.0, 1.0]])
        op = CocoerciveStep(0.5, m, [1.0, 1.0])
        x = np.array([3.0, 1.0])
        expected = x - 0.5 * (m @ (x - np.array([1.0, 1.0])))
        assert np.allclose(op.apply(x), expected)

    def test_cocoercive_beta_range(self):
        m = np.eye(2)
        with pytest.raises(ValueError):
            CocoerciveStep(2.1, m, [0.0, 0.0])
        CocoerciveStep(1.9, m, [0.0, 0.0])

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            CocoerciveStep(0.1, [[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])

    def test_gradient_formula(self):
        a = np.array([[1.0, 2.0], [0.0, 1.0], [1.0, 0.0]])
        y = np.array([1.0, 0.0, 2.0])
        op = GradientStep(0.1, a, y)
        x = np.array([0.5, -0.5])
        expected = x - 0.1 * (a.T @ (a @ x - y))
        assert np.allclose(op.apply(x), expected)

    def test_gradient_eta_range(self):
        a = np.eye(3)
        with pytest.raises(ValueError):
            GradientStep(2.1, a, np.zeros(3))

    def test_identity_design_full_step_flips_sign(self):
        # eta at the top of the admissible range turns the step into ~ -x
        op = GradientStep(2.0 / 1.001, np.eye(2), np.zeros(2))
        x = np.array([1.0, -2.0])
        assert np.allclose(op.apply(x), -x, atol=5e-3)

    def test_power_iteration(self):
        rng = RngStream(9)
        g = rng.standard_normal((6, 6))
        m = g @ g.T
        exact = float(np.linalg.eigvalsh(m).max())
        assert power_iteration(m) == pytest.approx(exact, rel=1e-8)


@pytest.mark.parametrize(
    "op",
    [
        HalfspaceProjection([1.0, -2.0, 0.5], 0.3),
        BallProjection([0.2, -0.4, 1.0], 0.8),
        BoxProjection([-1.0, -0.5, 0.0], [0.5, 1.0, 2.0]),
        CocoerciveStep(
            0.9,
            np.array([[1.0, 0.2, 0.0], [0.2, 0.8, 0.1], [0.0, 0.1, 0.5]]),
            [0.1, 0.2, 0.3],
        ),
        GradientStep(
            0.3,
            np.array([[1.0, 0.0, 1.0], [0.5, 1.0, 0.0], [0.0, 0.3, 1.0], [1.0, 1.0, 1.0]]),
            [1.0, 0.0, 0.5, 0.2],
        ),
        LinearScale(-1.0, 3),
    ],
)
def test_nonexpansivity_randomized(op):
    rng = RngStream(77)
    for _ in range(1000):
        x = 3.0 * rng.standard_normal(3)
        y = 3.0 * rng.standard_normal(3)
        lhs = np.linalg.norm(op.apply(x) - op.apply(y))
        assert lhs <= np.linalg.norm(x - y) + 1e-12


def pm_family(dim=2):
    """The exact-variance test family {x -> x, x -> -x}."""
    return OperatorFamily([LinearScale(1.0, dim), LinearScale(-1.0, dim)])


def random_family(n, dim, seed=1):
    rng = RngStream(seed)
    ops = []
    for i in range(n):
        kind = i % 3
        if kind == 0:
            ops.append(HalfspaceProjection(rng.unit_vector(dim), rng.uniform(-1, 1)))
        elif kind == 1:
            ops.append(BallProjection(rng.standard_normal(dim), 0.5 + rng.uniform()))
        else:
            lo = rng.standard_normal(dim)
            ops.append(BoxProjection(lo, lo + rng.uniform(0.1, 1.0, dim)))
    return OperatorFamily(ops)


class TestMeanMap:
    def test_singleton_equals_component(self):
        fam = OperatorFamily([BallProjection([0.0, 0.0], 1.0)])
        x = np.array([3.0, 4.0])
        assert np.allclose(fam.mean(x), fam.component(0, x))

    def test_plus_minus_cancels(self):
        fam = pm_family()
        for x in ([1.0, 2.0], [-3.0, 0.5]):
            assert np.allclose(fam.mean(x), 0.0)

    def test_against_resummation_oracle(self):
        fam = random_family(5, 3)
        rng = RngStream(4)
        for _ in range(20):
            x = rng.standard_normal(3)
            oracle = sum(fam.component(i, x) for i in range(5)) / 5.0
            assert np.allclose(fam.mean(x), oracle, rtol=1e-15, atol=1e-15)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            random_family(3, 4).mean([1.0, 2.0])

    def test_mixed_dimension_construction_rejected(self):
        with pytest.raises(ValueError):
            OperatorFamily([LinearScale(1.0, 2), LinearScale(1.0, 3)])


class TestMinibatch:
    def test_repeated_single_index_exact(self):
        fam = random_family(4, 3)
        x = RngStream(8).standard_normal(3)
        out = fam.minibatch(x, [2, 2, 2])
        assert np.array_equal(out, fam.component(2, x))

    def test_full_batch_equals_mean_exactly(self):
        fam = random_family(5, 3)
        x = RngStream(9).standard_normal(3)
        assert np.array_equal(fam.minibatch(x, np.arange(5)), fam.mean(x))

    def test_enumeration_mean_is_unbiased(self):
        # Average over all n^b ordered batches equals the mean map.
        fam = random_family(3, 2, seed=6)
        x = RngStream(10).standard_normal(2)
        acc = np.zeros(2)
        for combo in itertools.product(range(3), repeat=2):
            acc += fam.minibatch(x, list(combo))
        assert np.allclose(acc / 9.0, fam.mean(x), atol=1e-12)

    @pytest.mark.parametrize("n,b", [(2, 2), (3, 3), (4, 2)])
    def test_unbiasedness_small_cases(self, n, b):
        fam = random_family(n, 3, seed=n + b)
        x = RngStream(n * 7 + b).standard_normal(3)
        acc = np.zeros(3)
        for combo in itertools.product(range(n), repeat=b):
            acc += fam.minibatch(x, list(combo))
        assert np.allclose(acc / n**b, fam.mean(x), atol=1e-12)

    def test_empty_and_out_of_range(self):
        fam = random_family(3, 2)
        with pytest.raises(ValueError):
            fam.minibatch([0.0, 0.0], [])
        with pytest.raises(ValueError):
            fam.minibatch([0.0, 0.0], [3])
        with pytest.raises(ValueError):
            fam.minibatch([0.0, 0.0], [-1])


class TestResidual:
    def test_fixed_point_hint(self):
        center = np.array([0.5, -0.5])
        fam = OperatorFamily(
            [BallProjection(center, 1.0), HalfspaceProjection([1.0, 0.0], 1.0)],
            fixed_point_hint=center,
        )
        assert fam.residual(center) <= 1e-9

    def test_projection_onto_origin(self):
        fam = OperatorFamily([LinearScale(0.0, 2)])
        assert fam.residual([3.0, 4.0]) == pytest.approx(5.0)

    def test_compositional_oracle(self):
        fam = random_family(4, 3, seed=12)
        rng = RngStream(13)
        for _ in range(10):
            x = rng.standard_normal(3)
            assert fam.residual(x) == pytest.approx(
                float(np.linalg.norm(x - fam.mean(x))), rel=1e-15
            )

    def test_bad_hint_rejected(self):
        with pytest.raises(ValueError):
            OperatorFamily(
                [HalfspaceProjection([1.0, 0.0], 0.0)], fixed_point_hint=[1.0, 0.0]
            )


class TestBatchVariance:
    def test_plus_minus_unit_norm(self):
        fam = pm_family()
        x = np.array([0.6, 0.8])
        assert fam.batch_variance(x, 1) == pytest.approx(1.0, abs=1e-14)

    def test_variance_scaling_law(self):
        # enumeration variance at batch b equals batch-1 variance over b
        for fam, x in [
            (pm_family(), np.array([0.6, 0.8])),
            (random_family(3, 2, seed=20), RngStream(21).standard_normal(2)),
        ]:
            v1 = fam.batch_variance(x, 1)
            for b in (2, 3, 4):
                vb = fam.batch_variance(x, b)
                assert vb == pytest.approx(v1 / b, abs=1e-12)

    def test_deterministic_family_zero(self):
        fam = OperatorFamily([BallProjection([0.0, 0.0], 1.0)])
        for b in (1, 3, 7):
            assert fam.batch_variance([2.0, 1.0], b) == 0.0

    def test_budget_error(self):
        fam = random_family(10, 2)
        with pytest.raises(EnumerationBudgetError):
            fam.batch_variance([0.0, 0.0], 7)

    def test_monte_carlo_tracks_exact(self):
        fam = random_family(4, 3, seed=30)
        x = RngStream(31).standard_normal(3)
        exact = fam.batch_variance(x, 2, method="exact")
        mc = fam.batch_variance(x, 2, method="monte-carlo", samples=40000, rng=RngStream(32))
        assert mc == pytest.approx(exact, rel=0.1)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            pm_family().batch_variance([1.0, 0.0], 1, method="bogus")


class TestSecondMomentInequalities:
    """Exact enumeration checks of the mean-square expansion identities."""

    @pytest.mark.parametrize("n,b", [(2, 1), (3, 2), (4, 3)])
    def test_ms_nonexpansivity_and_sandwich(self, n, b):
        fam = random_family(n, 3, seed=40 + n)
        rng = RngStream(41 + b)
        for _ in range(5):
            x = rng.standard_normal(3)
            y = rng.standard_normal(3)
            outputs = fam.apply_all(x)
            tbar = outputs.mean(axis=0)
            ty = fam.mean(y)
            v1 = float(np.square(outputs - tbar).sum()) / n
            e_cross = 0.0
            e_self = 0.0
            total = n**b
            for combo in itertools.product(range(n), repeat=b):
                tb = outputs[list(combo)].mean(axis=0)
                e_cross += float(np.square(tb - ty).sum())
                e_self += float(np.square(x - tb).sum())
            e_cross /= total
            e_self /= total
            gap_sq = float(np.square(x - y).sum())
            resid_sq = float(np.square(x - tbar).sum())
            # mean-square nonexpansivity with the exact pointwise variance
            assert e_cross <= gap_sq + v1 / b + 1e-12
            # residual sandwich
            assert resid_sq <= e_self + 1e-12
            assert e_self <= resid_sq + v1 / b + 1e-12

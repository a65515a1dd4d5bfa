from __future__ import annotations

import math

import pytest

from kmbatch import (
    ConstantBatch,
    ConstantStep,
    DiminishingStep,
    ExponentialBatch,
    PolynomialBatch,
    ScheduleOverflowError,
    certify_conditions,
    step_sum_lower_bound,
    tail_constant,
)


class TestStepLaws:
    def test_diminishing_values(self):
        assert DiminishingStep(1.0).step_at(3) == pytest.approx(0.25)
        assert DiminishingStep(0.5).step_at(0) == 1.0

    def test_constant_value(self):
        s = ConstantStep(0.5)
        assert all(s.step_at(k) == 0.5 for k in (0, 1, 10, 10**6))

    def test_constant_range(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                ConstantStep(bad)

    def test_diminishing_range(self):
        for bad in (0.0, 1.0001, -1.0):
            with pytest.raises(ValueError):
                DiminishingStep(bad)

    def test_negative_index(self):
        with pytest.raises(ValueError):
            DiminishingStep(1.0).step_at(-1)


class TestBatchLaws:
    def test_polynomial_integral_case(self):
        assert PolynomialBatch(1.0, 2.0, 2.0).batch_at(3) == 25

    def test_exponential_integral_case(self):
        assert ExponentialBatch(4.0, 2.0).batch_at(3) == 32

    def test_constant(self):
        b = ConstantBatch(8)
        assert all(b.batch_at(k) == 8 for k in (0, 5, 1000))

    def test_ceil_rounding(self):
        assert ExponentialBatch(1.5, 2.0).batch_at(0) == 2
        assert PolynomialBatch(0.5, 1.0, 1.5).batch_at(1) == 2  # 1.5^1.5 ~ 1.84

    @pytest.mark.parametrize(
        "batch",
        [
            PolynomialBatch(1.0, 2.0, 2.0),
            PolynomialBatch(0.3, 1.5, 3.5),
            ExponentialBatch(2.0, 2.0),
            ExponentialBatch(1.0, 1.3),
        ],
    )
    def test_nondecreasing(self, batch):
        values = [batch.batch_at(k) for k in range(200)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_integral_parameters_exact_at_large_k(self):
        # exact big-integer evaluation, no float overflow
        assert ExponentialBatch(2.0, 2.0).batch_at(2000) == 2**2001

    def test_float_parameters_overflow(self):
        with pytest.raises(ScheduleOverflowError):
            ExponentialBatch(1.5, 2.5).batch_at(10**6)

    def test_cap_applies(self):
        assert ExponentialBatch(2.0, 2.0, cap=64).batch_at(50) == 64
        assert PolynomialBatch(1.0, 1.0, 3.0, cap=10).batch_at(100) == 10

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            ConstantBatch(0)
        with pytest.raises(ValueError):
            PolynomialBatch(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            ExponentialBatch(0.5, 2.0)
        with pytest.raises(ValueError):
            ExponentialBatch(1.0, 1.0)


class TestStepPartialSums:
    def test_constant_closed_form(self):
        assert ConstantStep(0.5).sum_alpha_one_minus_alpha(100) == pytest.approx(25.0)

    def test_diminishing_termwise_oracle(self):
        s = DiminishingStep(1.0)
        oracle = math.fsum((1.0 / j) * (1.0 - 1.0 / j) for j in range(1, 11))
        assert s.sum_alpha_one_minus_alpha(10) == pytest.approx(oracle, rel=1e-14)

    @pytest.mark.parametrize(
        "step",
        [
            ConstantStep(0.5),
            ConstantStep(0.1),
            DiminishingStep(0.25),
            DiminishingStep(0.5),
            DiminishingStep(0.75),
            DiminishingStep(1.0),
        ],
    )
    @pytest.mark.parametrize("K", [10, 100, 1000, 10000])
    def test_lower_bound_witness(self, step, K):
        partial = step.sum_alpha_one_minus_alpha(K)
        assert partial >= step_sum_lower_bound(step, K) - 1e-9

    def test_log_bound_case(self):
        s = DiminishingStep(1.0)
        for K in (8, 50, 500):
            assert s.sum_alpha_one_minus_alpha(K) >= math.log(K + 1) - 2.0


class TestBatchPartialSums:
    def test_constant_direct(self):
        assert ConstantBatch(4).sum_inv_sqrt(10) == pytest.approx(5.0)

    def test_geometric_series_oracle(self):
        # sqrt(b_k) = 2^k so the partial sums converge to 2
        b = ExponentialBatch(1.0, 4.0)
        assert b.sum_inv_sqrt(60) == pytest.approx(2.0, abs=1e-15)
        assert b.sum_inv_sqrt(10) == pytest.approx(
            math.fsum(2.0**-k for k in range(10)), rel=1e-14
        )

    def test_basel_bound(self):
        # 1/sqrt(b_k) <= (k+1)^-2, so partial sums stay below pi^2/6
        b = PolynomialBatch(1.0, 1.0, 4.0)
        assert b.sum_inv_sqrt(100) <= math.pi**2 / 6.0

    def test_tail_collapse_for_exponential(self):
        b = ExponentialBatch(2.0, 2.0)
        s3, s4 = b.sum_inv_sqrt(1000), b.sum_inv_sqrt(10000)
        assert s4 - s3 <= 1e-3 * s3

    def test_large_k_sums_finite(self):
        assert math.isfinite(ExponentialBatch(2.0, 2.0).sum_inv_sqrt(10000))


class TestCertificates:
    CANONICAL = [
        (ConstantStep(0.5), ConstantBatch(32), True, False),
        (ConstantStep(0.5), PolynomialBatch(1.0, 1.0, 4.0), True, True),
        (ConstantStep(0.5), ExponentialBatch(2.0, 2.0), True, True),
        (DiminishingStep(1.0), ConstantBatch(32), True, False),
        (DiminishingStep(1.0), PolynomialBatch(1.0, 1.0, 4.0), True, True),
        (DiminishingStep(1.0), ExponentialBatch(2.0, 2.0), True, True),
    ]

    @pytest.mark.parametrize("step,batch,div,summ", CANONICAL)
    def test_canonical_pairs(self, step, batch, div, summ):
        cert = certify_conditions(step, batch)
        assert cert.divergent_step_sum == div
        assert cert.summable_inv_sqrt_batch == summ

    def test_polynomial_low_power_not_certified(self):
        # power in (1, 2] leaves sum 1/sqrt(b_k) divergent; noted explicitly
        cert = certify_conditions(ConstantStep(0.5), PolynomialBatch(1.0, 1.0, 1.5))
        assert not cert.summable_inv_sqrt_batch
        assert any("power" in note for note in cert.notes)

    def test_cap_voids_certificate(self):
        for batch in (
            ExponentialBatch(2.0, 2.0, cap=1024),
            PolynomialBatch(1.0, 1.0, 4.0, cap=1024),
        ):
            cert = certify_conditions(ConstantStep(0.5), batch)
            assert not cert.summable_inv_sqrt_batch
            assert any("cap" in note for note in cert.notes)

    def test_certified_property(self):
        assert certify_conditions(ConstantStep(0.5), ExponentialBatch(2.0, 2.0)).certified
        assert not certify_conditions(ConstantStep(0.5), ConstantBatch(4)).certified


class TestTailConstant:
    def test_exponential_value(self):
        assert tail_constant(ExponentialBatch(1.0, 2.0)) == pytest.approx(2.0)

    def test_polynomial_value(self):
        assert tail_constant(PolynomialBatch(1.0, 1.0, 2.0)) == pytest.approx(3.0)

    def test_constant_rejected(self):
        with pytest.raises(ValueError):
            tail_constant(ConstantBatch(4))

    def test_capped_rejected(self):
        with pytest.raises(ValueError):
            tail_constant(ExponentialBatch(2.0, 2.0, cap=8))

    def test_cross_check_against_exact_partial_sum(self):
        # For base 1, rate 4 the nominal constant is 4/3 while the exact sum
        # of 1/sqrt(b_k) converges to 2: the closed form tracks sum 1/b_k and
        # undershoots.  Both values are reported; this freezes the mismatch.
        batch = ExponentialBatch(1.0, 4.0)
        nominal = tail_constant(batch)
        exact = batch.sum_inv_sqrt(10000)
        assert nominal == pytest.approx(4.0 / 3.0)
        assert exact == pytest.approx(2.0, abs=1e-12)
        assert nominal < exact

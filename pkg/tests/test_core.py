from __future__ import annotations

import math

import numpy as np
import pytest

from kmbatch import RngStream, TraceRecord, check_rng, check_vector, vector_norm


class TestDrawIndices:
    def test_single_component_always_zero(self):
        draws = RngStream(0).draw_indices(1, 5)
        assert np.array_equal(draws, np.zeros(5, dtype=int))

    def test_identical_streams_replay(self):
        a = RngStream(7).draw_indices(10, 3)
        b = RngStream(7).draw_indices(10, 3)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(7, 0).draw_indices(100, 20)
        b = RngStream(7, 1).draw_indices(100, 20)
        assert not np.array_equal(a, b)

    def test_stream_advances(self):
        rng = RngStream(3)
        first = rng.draw_indices(10, 4)
        second = rng.draw_indices(10, 4)
        assert not np.array_equal(first, second)

    @pytest.mark.parametrize("n,b", [(0, 1), (1, 0), (-2, 3)])
    def test_invalid_arguments(self, n, b):
        with pytest.raises(ValueError):
            RngStream(0).draw_indices(n, b)

    def test_frequency_window_n4(self):
        # chi-square-style frequency oracle at one million draws
        draws = RngStream(7).draw_indices(4, 10**6)
        freq = np.bincount(draws, minlength=4) / 1e6
        assert np.all(freq >= 0.2475) and np.all(freq <= 0.2525)

    @pytest.mark.parametrize("n", [2, 3, 7, 16])
    def test_frequency_law_five_sigma(self, n):
        m = 10**6
        draws = RngStream(123, 5).draw_indices(n, m)
        freq = np.bincount(draws, minlength=n) / m
        sigma = math.sqrt((1.0 / n) * (1.0 - 1.0 / n) / m)
        assert np.abs(freq - 1.0 / n).max() <= 5.0 * sigma

    def test_index_counts_matches_bincount_distribution(self):
        # multiplicity sampler agrees with direct draws in mean frequency
        rng = RngStream(11)
        counts = sum(rng.index_counts(5, 100) for _ in range(2000))
        freq = counts / (2000 * 100)
        assert np.abs(freq - 0.2).max() < 0.01


class TestVectorHelpers:
    def test_zero_vector_norm(self):
        assert vector_norm([0.0, 0.0, 0.0]) == 0.0

    def test_pythagorean(self):
        assert vector_norm([3.0, 4.0]) == 5.0

    def test_norm_against_compensated_sum_oracle(self):
        rng = RngStream(2024)
        for _ in range(50):
            x = rng.standard_normal(64) * np.exp(rng.uniform(-8, 8, 64))
            oracle = math.sqrt(math.fsum(sorted(float(v) * float(v) for v in x)))
            assert vector_norm(x) == pytest.approx(oracle, rel=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            vector_norm([1.0, math.inf])
        with pytest.raises(ValueError):
            vector_norm([math.nan])

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            check_vector([1.0, 2.0], dim=3)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            check_vector([])


class TestCheckRng:
    def test_passthrough(self):
        rng = RngStream(5, 2)
        assert check_rng(rng) is rng

    def test_int_seed(self):
        assert check_rng(9).seed == 9

    def test_none_is_fixed_seed(self):
        a = check_rng(None).draw_indices(10, 5)
        b = check_rng(None).draw_indices(10, 5)
        assert np.array_equal(a, b)

    def test_rejects_junk(self):
        with pytest.raises(TypeError):
            check_rng("seedy")


class TestTraceRecord:
    def test_valid(self):
        rec = TraceRecord(k=0, alpha=0.5, batch=4, residual=1.0, dist_to_fixed=2.0)
        assert rec.k == 0

    def test_alpha_one_allowed(self):
        TraceRecord(k=0, alpha=1.0, batch=1, residual=0.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(k=-1, alpha=0.5, batch=1, residual=0.0),
            dict(k=0, alpha=0.0, batch=1, residual=0.0),
            dict(k=0, alpha=1.5, batch=1, residual=0.0),
            dict(k=0, alpha=0.5, batch=0, residual=0.0),
            dict(k=0, alpha=0.5, batch=1, residual=-1.0),
            dict(k=0, alpha=0.5, batch=1, residual=math.inf),
            dict(k=0, alpha=0.5, batch=1, residual=0.0, dist_to_fixed=-0.1),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TraceRecord(**kwargs)

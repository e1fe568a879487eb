import numpy as np
import pytest
from scipy.stats import entropy

from scaleadv.stats import (
    EmpiricalCDF,
    SizeDistribution,
    Uniform,
    build_histogram,
    icdf_map,
    js_divergence,
    js_divergence_masses,
    sample_from_histogram,
)


def js_oracle(p, q):
    """Jensen-Shannon via scipy's KL, base 2."""
    p, q = np.asarray(p, float), np.asarray(q, float)
    m = (p + q) / 2
    return 0.5 * entropy(p, m, base=2) + 0.5 * entropy(q, m, base=2)


class TestSizeDistribution:
    def test_validates_edges(self):
        with pytest.raises(ValueError):
            SizeDistribution([0.0, 1.0, 1.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            SizeDistribution([0.0, 2.0, 1.0], [0.5, 0.5])

    def test_validates_masses(self):
        with pytest.raises(ValueError):
            SizeDistribution([0.0, 1.0, 2.0], [0.7, 0.4])
        with pytest.raises(ValueError):
            SizeDistribution([0.0, 1.0, 2.0], [-0.1, 1.1])
        with pytest.raises(ValueError):
            SizeDistribution([0.0, 1.0, 2.0], [0.5])

    def test_accepts_tiny_sum_error(self):
        dist = SizeDistribution([0.0, 1.0, 2.0], [0.5, 0.5 + 1e-12])
        assert dist.k == 2


class TestBuildHistogram:
    def test_masses_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            values = rng.normal(20, 5, rng.integers(1, 500))
            hist = build_histogram(values, 13)
            assert abs(hist.masses.sum() - 1.0) < 1e-12

    def test_identical_values_single_bin(self):
        for k in (2, 5, 50):
            hist = build_histogram([7.25] * 11, k)
            assert np.count_nonzero(hist.masses) == 1
            assert hist.masses.max() == 1.0

    def test_interior_edge_goes_right(self):
        hist = build_histogram([1.0], 2, (0.0, 2.0))
        np.testing.assert_array_equal(hist.masses, [0.0, 1.0])

    def test_out_of_range_clipped_into_boundary_bins(self):
        hist = build_histogram([-5.0, 0.2, 99.0], 2, (0.0, 1.0))
        np.testing.assert_allclose(hist.masses, [2 / 3, 1 / 3])
        assert hist.masses.sum() == pytest.approx(1.0)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            build_histogram([], 4)
        with pytest.raises(ValueError):
            build_histogram([1.0, 2.0], 1)
        with pytest.raises(ValueError):
            build_histogram([1.0, 2.0], 4, (3.0, 3.0))
        with pytest.raises(ValueError):
            build_histogram([np.nan], 4)


class TestJSDivergence:
    def test_self_divergence_zero(self):
        hist = build_histogram(np.random.default_rng(1).normal(10, 2, 300), 20)
        assert js_divergence(hist, hist) == 0.0

    def test_disjoint_support_is_one(self):
        edges = [0.0, 1.0, 2.0]
        p = SizeDistribution(edges, [1.0, 0.0])
        q = SizeDistribution(edges, [0.0, 1.0])
        assert js_divergence(p, q) == 1.0

    def test_hand_value(self):
        # 1/2 kl([.5,.5] || [.625,.375]) + 1/2 kl([.75,.25] || [.625,.375])
        assert js_divergence_masses([0.5, 0.5], [0.75, 0.25]) == pytest.approx(0.0487947, abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            p = rng.dirichlet(np.ones(12))
            q = rng.dirichlet(np.ones(12))
            assert js_divergence_masses(p, q) == pytest.approx(js_divergence_masses(q, p), abs=1e-12)

    def test_matches_scipy_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            k = int(rng.integers(2, 40))
            p = rng.dirichlet(np.ones(k))
            q = rng.dirichlet(np.ones(k))
            q[rng.integers(0, k)] = 0.0  # exercise empty bins
            q = q / q.sum()
            assert js_divergence_masses(p, q) == pytest.approx(js_oracle(p, q), abs=1e-12)

    def test_range_is_unit_interval(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            p = rng.dirichlet(np.ones(6))
            q = rng.dirichlet(np.ones(6))
            assert 0.0 <= js_divergence_masses(p, q) <= 1.0

    def test_rejects_mismatched_edges(self):
        p = SizeDistribution([0.0, 1.0, 2.0], [0.5, 0.5])
        q = SizeDistribution([0.0, 1.5, 2.0], [0.5, 0.5])
        with pytest.raises(ValueError):
            js_divergence(p, q)

    def test_grows_with_shift(self):
        # scaled copies of the same sample drift further in distribution
        rng = np.random.default_rng(3)
        volumes = rng.normal(20, 4, 5000).clip(1, None)
        divergences = []
        for scale in (1.05, 1.1, 1.2, 1.4):
            scaled = volumes * scale**3
            lo, hi = volumes.min(), scaled.max()
            p = build_histogram(volumes, 40, (lo, hi))
            q = build_histogram(scaled, 40, (lo, hi))
            divergences.append(js_divergence(p, q))
        assert divergences == sorted(divergences)


class TestEmpiricalCDF:
    def test_midrank_at_samples(self):
        values = [1.0, 2.0, 5.0, 9.0]
        cdf = EmpiricalCDF(values)
        np.testing.assert_allclose(cdf.cdf(values), [0.125, 0.375, 0.625, 0.875])

    def test_outside_support(self):
        cdf = EmpiricalCDF([1.0, 2.0])
        assert cdf.cdf(0.0) == 0.0
        assert cdf.cdf(3.0) == 1.0
        assert cdf.icdf(0.0) == 1.0
        assert cdf.icdf(1.0) == 2.0

    def test_cumulative_ends_at_one(self):
        cdf = EmpiricalCDF(np.random.default_rng(0).normal(size=17))
        assert cdf.cumulative[-1] == 1.0
        assert (np.diff(cdf.cumulative) >= 0).all()

    def test_ties_counted_half(self):
        cdf = EmpiricalCDF([2.0, 2.0, 2.0, 2.0])
        assert cdf.cdf(2.0) == 0.5
        assert cdf.is_degenerate

    def test_icdf_cdf_identity_on_distinct_samples(self):
        rng = np.random.default_rng(2)
        values = np.unique(rng.normal(0, 10, 200))
        cdf = EmpiricalCDF(values)
        np.testing.assert_allclose(cdf.icdf(cdf.cdf(values)), values, atol=1e-9)

    def test_median(self):
        assert EmpiricalCDF([1.0, 2.0, 3.0]).median == 2.0


class TestUniform:
    def test_endpoints(self):
        u = Uniform(2.0, 6.0)
        assert u.icdf(0.0) == 2.0
        assert u.icdf(1.0) == 6.0
        assert u.icdf(0.5) == 4.0
        assert u.cdf(4.0) == 0.5
        assert u.cdf(-1.0) == 0.0 and u.cdf(7.0) == 1.0

    def test_degenerate_point_mass(self):
        u = Uniform(3.0, 3.0)
        assert u.is_degenerate
        assert u.icdf(0.7) == 3.0

    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            Uniform(2.0, 1.0)


class TestIcdfMap:
    def test_round_trip_identity(self):
        rng = np.random.default_rng(6)
        a = np.unique(rng.normal(10, 3, 150))
        b = np.unique(rng.gamma(4, 2, a.size))
        source, target = EmpiricalCDF(a), EmpiricalCDF(b)
        mapped = icdf_map(a, source, target)
        back = icdf_map(mapped, target, source)
        np.testing.assert_allclose(back, a, atol=1e-9)

    def test_order_preserved(self):
        rng = np.random.default_rng(7)
        values = rng.normal(50, 10, 500)
        mapped = icdf_map(values, EmpiricalCDF(values), Uniform(0.0, 1.0))
        order = np.argsort(values, kind="stable")
        assert (np.diff(np.asarray(mapped)[order]) >= 0).all()

    def test_degenerate_source_warns_and_hits_median(self):
        source = EmpiricalCDF([4.0] * 10)
        with pytest.warns(UserWarning):
            mapped = icdf_map(4.0, source, Uniform(10.0, 20.0))
        assert mapped == 15.0

    def test_scalar_in_scalar_out(self):
        source = EmpiricalCDF([1.0, 2.0, 3.0])
        assert isinstance(icdf_map(2.0, source, Uniform(0, 1)), float)


class TestSampleFromHistogram:
    def test_reproducible(self):
        hist = build_histogram(np.random.default_rng(0).normal(30, 5, 2000), 25)
        a = sample_from_histogram(hist, 500, seed=42)
        b = sample_from_histogram(hist, 500, seed=42)
        np.testing.assert_array_equal(a, b)
        c = sample_from_histogram(hist, 500, seed=43)
        assert not np.array_equal(a, c)

    def test_respects_support(self):
        hist = SizeDistribution([5.0, 6.0, 7.0], [0.0, 1.0])
        samples = sample_from_histogram(hist, 300, seed=1)
        assert ((samples >= 6.0) & (samples <= 7.0)).all()

    def test_masses_respected(self):
        hist = SizeDistribution([0.0, 1.0, 2.0, 3.0], [0.2, 0.3, 0.5])
        samples = sample_from_histogram(hist, 20000, seed=5)
        fractions = np.histogram(samples, bins=3, range=(0, 3))[0] / 20000
        np.testing.assert_allclose(fractions, [0.2, 0.3, 0.5], atol=0.02)

    def test_zero_and_negative(self):
        hist = SizeDistribution([0.0, 1.0, 2.0], [0.5, 0.5])
        assert sample_from_histogram(hist, 0).size == 0
        with pytest.raises(ValueError):
            sample_from_histogram(hist, -1)

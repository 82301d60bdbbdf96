"""Tests for hypersphere geometry: normalization, angles, sampling and separation estimates."""

import math

import numpy as np
import pytest

from src.core.exceptions import DimensionMismatch, GeometryError, InvalidDimension, ZeroVector
from src.services.hypersphere import (
    angle,
    expected_nearest_separation,
    min_pairwise_angle,
    min_pairwise_angle_exhaustive,
    monte_carlo_nearest_separation,
    nearest_angles,
    normalize_columns,
    normalize_columns_backward,
    normalize_columns_with_norms,
    normalize_rows,
    normalize_rows_backward,
    normalize_rows_with_norms,
    pair_angle_cdf,
    poisson_nearest_separation,
    sample_uniform_sphere,
)
from src.utils.gradcheck import numeric_gradient, relative_error


class TestNormalize:

    def test_rows_have_unit_norm(self, rng):
        x = rng.standard_normal((10, 7)) * 3.0
        np.testing.assert_allclose(np.linalg.norm(normalize_rows(x), axis=1), 1.0, atol=1e-12)

    def test_columns_have_unit_norm(self, rng):
        w = rng.standard_normal((7, 10))
        np.testing.assert_allclose(np.linalg.norm(normalize_columns(w), axis=0), 1.0, atol=1e-12)

    def test_single_vector(self):
        np.testing.assert_allclose(normalize_rows(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_zero_row_raises(self):
        with pytest.raises(ZeroVector):
            normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_zero_column_raises(self):
        with pytest.raises(ZeroVector):
            normalize_columns(np.zeros((3, 2)))

    def test_idempotent(self, rng):
        unit = normalize_rows(rng.standard_normal((5, 4)))
        np.testing.assert_allclose(normalize_rows(unit), unit, atol=1e-15)

    def test_rows_backward_matches_finite_differences(self, rng):
        x = rng.standard_normal((3, 4)) * 2.0
        upstream = rng.standard_normal((3, 4))
        unit, norms = normalize_rows_with_norms(x)
        analytic = normalize_rows_backward(unit, norms, upstream)
        numeric = numeric_gradient(lambda p: float(np.sum(upstream * normalize_rows(p))), x)
        assert relative_error(analytic, numeric) < 1e-7

    def test_columns_backward_matches_finite_differences(self, rng):
        w = rng.standard_normal((4, 3)) * 2.0
        upstream = rng.standard_normal((4, 3))
        unit, norms = normalize_columns_with_norms(w)
        analytic = normalize_columns_backward(unit, norms, upstream)
        numeric = numeric_gradient(lambda p: float(np.sum(upstream * normalize_columns(p))), w)
        assert relative_error(analytic, numeric) < 1e-7


class TestAngle:

    def test_orthogonal(self):
        assert angle(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(math.pi / 2)

    def test_identical_and_antipodal(self):
        u = normalize_rows(np.array([1.0, 2.0, 3.0]))
        assert angle(u, u) == pytest.approx(0.0, abs=1e-7)
        assert angle(u, -u) == pytest.approx(math.pi, abs=1e-7)

    def test_rounding_above_one_is_clamped(self):
        u = np.array([1.0 + 1e-15, 0.0])
        assert angle(u, np.array([1.0, 0.0])) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            angle(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0]))


class TestSampleUniformSphere:

    def test_unit_norm_and_shape(self):
        points = sample_uniform_sphere(5, seed=0, size=100)
        assert points.shape == (100, 5)
        np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-12)

    def test_single_vector(self):
        assert sample_uniform_sphere(3, seed=0).shape == (3,)

    def test_deterministic(self):
        np.testing.assert_array_equal(sample_uniform_sphere(4, seed=7, size=10),
                                      sample_uniform_sphere(4, seed=7, size=10))

    def test_mean_near_origin(self):
        points = sample_uniform_sphere(3, seed=1, size=20000)
        assert np.linalg.norm(points.mean(axis=0)) < 0.03

    def test_dimension_below_two(self):
        with pytest.raises(InvalidDimension):
            sample_uniform_sphere(1, seed=0)

    def test_requires_seed(self):
        with pytest.raises(TypeError):
            sample_uniform_sphere(3)


class TestMinPairwiseAngle:

    def test_blocked_scan_matches_exhaustive(self):
        centres = sample_uniform_sphere(5, seed=2, size=50).T
        assert min_pairwise_angle(centres, block_size=7) == pytest.approx(
            min_pairwise_angle_exhaustive(centres), abs=1e-12)

    def test_two_points(self):
        centres = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert min_pairwise_angle(centres) == pytest.approx(math.pi / 2)

    def test_needs_two_columns(self):
        with pytest.raises(GeometryError):
            min_pairwise_angle(np.ones((3, 1)))

    def test_nearest_angles_orthonormal(self):
        np.testing.assert_allclose(nearest_angles(np.eye(4)), math.pi / 2)


class TestExpectedNearestSeparation:

    @pytest.mark.parametrize("n", [10, 100, 1000])
    def test_circle_closed_form(self, n):
        assert expected_nearest_separation(2, n) == pytest.approx(2 * math.pi / n ** 2, rel=1e-12)

    def test_two_dimensional_example(self):
        assert expected_nearest_separation(2, 10) == pytest.approx(0.06283, abs=1e-5)

    def test_decreasing_in_n(self):
        values = [expected_nearest_separation(64, n) for n in (10, 100, 1000, 10000)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_high_dimension_does_not_overflow(self):
        value = expected_nearest_separation(1000, 1e6)
        assert math.isfinite(value) and value > 0

    def test_invalid_arguments(self):
        with pytest.raises(InvalidDimension):
            expected_nearest_separation(1, 10)
        with pytest.raises(GeometryError):
            expected_nearest_separation(3, 1)


class TestPairAngleCdf:

    @pytest.mark.parametrize("theta", [0.3, 1.0, math.pi / 2, 2.5])
    def test_circle_is_uniform(self, theta):
        assert pair_angle_cdf(theta, 2) == pytest.approx(theta / math.pi, abs=1e-12)

    @pytest.mark.parametrize("theta", [0.3, 1.0, 2.5])
    def test_sphere_is_cap_area(self, theta):
        assert pair_angle_cdf(theta, 3) == pytest.approx((1 - math.cos(theta)) / 2, abs=1e-12)


class TestNearestSeparationOracles:

    @pytest.mark.parametrize("n,trials", [(10, 4000), (100, 2000)])
    def test_monte_carlo_agrees_on_circle(self, n, trials):
        estimate = monte_carlo_nearest_separation(2, n, trials, seed=11)
        assert estimate.mean == pytest.approx(expected_nearest_separation(2, n), rel=0.10)
        assert estimate.trials == trials

    def test_result_independent_of_workers(self):
        serial = monte_carlo_nearest_separation(3, 30, 12, seed=5, workers=1)
        threaded = monte_carlo_nearest_separation(3, 30, 12, seed=5, workers=3)
        assert serial.mean == threaded.mean
        assert serial.std == threaded.std

    def test_poisson_close_to_closed_form_on_circle(self):
        assert poisson_nearest_separation(2, 100) == pytest.approx(expected_nearest_separation(2, 100), rel=0.05)

    @pytest.mark.slow
    def test_high_dimension_regime(self):
        estimate = monte_carlo_nearest_separation(128, 10_000, 20, seed=0, workers=2)
        closed = expected_nearest_separation(128, 10_000)
        # the small-angle power law under-estimates once the separation is around a radian
        assert closed < estimate.mean
        assert closed == pytest.approx(estimate.mean, rel=0.25)
        assert poisson_nearest_separation(128, 10_000) == pytest.approx(estimate.mean, rel=0.10)

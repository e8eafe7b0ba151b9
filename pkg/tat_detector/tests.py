import numpy as np
from django.test import SimpleTestCase

from config.exceptions import InvariantError
from tat_detector.domain import DetectorConfig, RadiusFamily, Sinogram
from tat_detector.services import (
    add_noise,
    cylinder_residual_large,
    cylinder_residual_small,
    detector_points,
    forward_operator,
    measurement_matrix,
    ring_average,
    sweep_small_radius,
    theta_grid,
)
from tat_field.domain import Phantom
from tat_field.serializers.spec_serializers import ConstantSpeedSpec, GaussianComponent, PhantomSpec
from tat_field.services import make_grid, make_phantom, sample_speed
from tat_wave.services import cfl_time_step, pml_profile

SMALL = DetectorConfig(mode='small', R=2.0, r=0.8, n_theta=8, T=1.6)
LARGE = DetectorConfig(mode='large', r=2.0, n_theta=8, T=1.4)


class DetectorConfigTests(SimpleTestCase):
    def test_small_needs_clearance(self):
        with self.assertRaises(InvariantError):
            DetectorConfig(mode='small', R=1.5, r=0.8)

    def test_large_needs_unit_centres(self):
        with self.assertRaises(InvariantError):
            DetectorConfig(mode='large', R=2.0, r=2.0)

    def test_large_needs_big_radius(self):
        with self.assertRaises(InvariantError):
            DetectorConfig(mode='large', r=1.5)

    def test_quadrature_floor(self):
        with self.assertRaises(InvariantError):
            DetectorConfig(mode='small', R=2.0, r=0.8, n_alpha=32)

    def test_bad_arc(self):
        with self.assertRaises(InvariantError):
            DetectorConfig(mode='small', R=2.0, r=0.8, arc=(0.0, -1.0))

    def test_arc_angles_are_interior(self):
        config = DetectorConfig(mode='small', R=2.0, r=0.8, n_theta=10, arc=(-np.pi / 2, 0.0))
        theta = theta_grid(config)
        self.assertTrue(np.all(theta > -np.pi / 2) and np.all(theta < 0.0))
        np.testing.assert_allclose(np.diff(theta), np.pi / 20)


class DetectorPointTests(SimpleTestCase):
    def test_small_first_node(self):
        np.testing.assert_allclose(detector_points(SMALL, 0.0)[0], [2.8, 0.0])

    def test_large_opposite_node(self):
        points = detector_points(LARGE, np.pi / 2)
        np.testing.assert_allclose(points[LARGE.n_alpha // 2], [-2.0, 1.0], atol=1e-14)

    def test_circles_avoid_unit_disc(self):
        for config in (SMALL, LARGE):
            for theta in np.linspace(0, 2 * np.pi, 13):
                distance = np.hypot(*detector_points(config, theta).T)
                self.assertGreaterEqual(distance.min(), 1.0 - 1e-12)


class RingAverageTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(3.5, 225, 0.5)

    def test_constant_field(self):
        u = np.ones(self.grid.shape)
        self.assertAlmostEqual(ring_average(u, SMALL, 0.7, self.grid), 1.0, places=13)

    def test_linear_field(self):
        X, _ = self.grid.mesh
        self.assertAlmostEqual(ring_average(X, SMALL, 0.0, self.grid), 2.0, places=12)

    def test_rows_are_averages(self):
        Q = measurement_matrix(self.grid, SMALL)
        np.testing.assert_allclose(np.asarray(Q.sum(axis=1)).ravel(), 1.0, atol=1e-13)
        self.assertEqual(Q.shape, (SMALL.n_theta, self.grid.n ** 2))

    def test_quadrature_is_spectrally_accurate(self):
        gaussian = lambda x, y: np.exp(-(x**2 + y**2) / 2.0)
        fine = DetectorConfig(mode='small', R=2.0, r=0.8, n_alpha=4 * SMALL.n_alpha)
        coarse = ring_average(gaussian, SMALL, 0.3)
        reference = ring_average(gaussian, fine, 0.3)
        self.assertLessEqual(abs(coarse - reference), 1e-10)

    def test_circle_in_pml_rejected(self):
        grid = make_grid(3.0, 97, 0.5)
        with self.assertRaises(InvariantError):
            measurement_matrix(grid, LARGE)

    def test_sampled_field_needs_grid(self):
        with self.assertRaises(InvariantError):
            ring_average(np.ones(self.grid.shape), SMALL, 0.0)


class ForwardOperatorTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.grid = make_grid(3.5, 449, 0.5)
        cls.speed = sample_speed(ConstantSpeedSpec(), cls.grid)
        cls.pml = pml_profile(cls.grid)
        cls.sigma = 0.05
        cls.f = make_phantom(PhantomSpec(components=[GaussianComponent(sigma=cls.sigma)]), cls.grid)
        cls.small = forward_operator(cls.f, cls.speed, SMALL, cls.pml)
        # σ = 0.15 spans ~10 cells, the σ = 0.05 source ~3
        resolved = make_phantom(PhantomSpec(components=[GaussianComponent(sigma=0.15)]), cls.grid)
        cls.resolved = forward_operator(resolved, cls.speed, SMALL, cls.pml)

    def first_arrival(self, data, dt):
        column = np.abs(data[:, 0])
        return int(np.argmax(column > 1e-3 * column.max())) * dt

    def test_zero_phantom(self):
        zero = make_phantom(PhantomSpec(), self.grid)
        sinogram = forward_operator(zero, self.speed, SMALL, self.pml)
        self.assertFalse(sinogram.data.any())

    def test_sinogram_shape(self):
        dt = cfl_time_step(self.grid, self.speed)
        self.assertEqual(self.small.data.shape[1], SMALL.n_theta)
        self.assertGreaterEqual((self.small.nt - 1) * dt, SMALL.T)
        self.assertAlmostEqual(self.small.dt, dt)

    def test_small_radius_arrival(self):
        # nearest detector point at R - r = 1.2
        tol = self.grid.h + self.small.dt
        arrival = self.first_arrival(self.small.data, self.small.dt)
        self.assertGreaterEqual(arrival, 1.2 - 5 * self.sigma - tol)
        self.assertLessEqual(arrival, 1.2 + tol)

    def test_large_radius_arrival(self):
        large = forward_operator(self.f, self.speed, LARGE, self.pml)
        tol = self.grid.h + large.dt
        arrival = self.first_arrival(large.data, large.dt)
        self.assertGreaterEqual(arrival, 1.0 - 5 * self.sigma - tol)
        self.assertLessEqual(arrival, 1.0 + tol)

    def spread(self, sinogram):
        data = sinogram.data
        return np.abs(data - data[:, :1]).max() / np.abs(data).max()

    def test_rotational_symmetry(self):
        """
        Angular spread of a centred source stays within 5% of the peak

        The spread comes from bilinear ring sampling and the anisotropic
        dispersion of the five-point stencil, both O((h/σ)²). The 5% tolerance
        holds for a source resolved by ~10 cells per σ, and the spread must
        shrink with the resolution.
        """
        fine = self.spread(self.resolved)
        self.assertLessEqual(fine, 0.05)
        self.assertLessEqual(fine, self.spread(self.small) / 3.0)

    def test_causality(self):
        """Rows before the first arrival stay below 1e-8 of the peak."""
        sinogram = self.resolved
        data = sinogram.data
        # support reaches 5 sigma = 0.75, nearest detector point at 1.2
        quiet = sinogram.times < 1.2 - 0.75 - 4 * self.grid.h
        self.assertTrue(quiet.any())
        self.assertLessEqual(np.abs(data[quiet]).max(), 1e-8 * np.abs(data).max())

    def test_sweep_reproduces_forward_operator(self):
        family = sweep_small_radius(self.f, self.speed, self.pml, SMALL, [2.0, 2.1, 2.2])
        self.assertEqual(family.data.shape[2], 3)
        self.assertTrue(np.array_equal(family.at_radius(0), self.small.data))

    def test_sweep_rejects_close_circles(self):
        with self.assertRaises(InvariantError):
            sweep_small_radius(self.f, self.speed, self.pml, SMALL, [1.7, 2.0, 2.3])


class LinearityTests(SimpleTestCase):
    def test_forward_is_linear(self):
        grid = make_grid(3.5, 113, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        pml = pml_profile(grid)
        config = DetectorConfig(mode='small', R=2.0, r=0.8, n_theta=6, T=1.5)
        f = make_phantom(PhantomSpec(components=[GaussianComponent(center=(0.2, 0.1), sigma=0.1)]), grid)
        g = make_phantom(PhantomSpec(components=[GaussianComponent(center=(-0.3, 0.0), sigma=0.12)]), grid)
        combined = Phantom(grid, 2.0 * f.f + 3.0 * g.f)
        lhs = forward_operator(combined, speed, config, pml).data
        rhs = 2.0 * forward_operator(f, speed, config, pml).data + 3.0 * forward_operator(g, speed, config, pml).data
        self.assertLessEqual(np.abs(lhs - rhs).max(), 1e-12 * np.abs(rhs).max())


def quadratic_family(mode, even=True):
    # P = t² + ρ²/2 solves both cylinder equations exactly
    config = DetectorConfig(mode='small', R=2.5, r=0.5, n_theta=12) if mode == 'small' \
        else DetectorConfig(mode='large', r=2.5, n_theta=12)
    dt = 0.1
    t = dt * np.arange(9)
    theta = theta_grid(config)
    radii = np.array([2.3, 2.5, 2.7])
    P = t[:, None, None] ** 2 + 0.5 * radii[None, None, :] ** 2 + 0.0 * theta[None, :, None]
    return RadiusFamily(data=P, dt=dt, theta=theta, radii=radii, config=config)


class CylinderResidualTests(SimpleTestCase):
    def test_zero_family(self):
        family = quadratic_family('small')
        zero = RadiusFamily(np.zeros_like(family.data), family.dt, family.theta, family.radii, family.config)
        self.assertFalse(cylinder_residual_small(zero).any())
        self.assertFalse(cylinder_residual_large(zero).any())

    def test_exact_solutions_have_no_residual(self):
        for mode, residual in (('small', cylinder_residual_small), ('large', cylinder_residual_large)):
            family = quadratic_family(mode)
            np.testing.assert_allclose(residual(family), 0.0, atol=1e-9)
            np.testing.assert_allclose(residual(family, even_extension=True), 0.0, atol=1e-9)

    def test_even_extension_keeps_first_row(self):
        family = quadratic_family('small')
        self.assertEqual(cylinder_residual_small(family).shape[0], family.data.shape[0] - 2)
        self.assertEqual(cylinder_residual_small(family, even_extension=True).shape[0], family.data.shape[0] - 1)

    def test_single_perturbation(self):
        family = quadratic_family('small')
        eps = 1e-6
        data = np.zeros_like(family.data)
        data[4, 3, 1] = eps
        spike = RadiusFamily(data, family.dt, family.theta, family.radii, family.config)
        residual = cylinder_residual_small(spike)
        d_theta = family.theta[1] - family.theta[0]
        d_rho = family.radii[1] - family.radii[0]
        R = family.radii[1]
        expected = eps * (-2.0 / family.dt**2 + 2.0 / d_rho**2 + 2.0 / (R**2 * d_theta**2))
        self.assertAlmostEqual(residual[3, 3, 0] / expected, 1.0, places=9)
        peak = np.unravel_index(np.argmax(np.abs(residual)), residual.shape)
        self.assertEqual(tuple(int(i) for i in peak), (3, 3, 0))

    def test_needs_three_radii(self):
        family = quadratic_family('large')
        narrow = RadiusFamily(family.data[:, :, :2], family.dt, family.theta, family.radii[:2], family.config)
        with self.assertRaises(InvariantError):
            cylinder_residual_large(narrow)

    def test_non_uniform_radii(self):
        family = quadratic_family('large')
        skewed = RadiusFamily(family.data, family.dt, family.theta, np.array([2.3, 2.5, 2.8]), family.config)
        with self.assertRaises(InvariantError):
            cylinder_residual_large(skewed)


class SinogramTests(SimpleTestCase):
    def setUp(self):
        self.config = DetectorConfig(mode='small', R=2.0, r=0.8, n_theta=4, arc=(-np.pi / 2, 0.0))
        self.theta = theta_grid(self.config)

    def test_angles_must_be_inside_aperture(self):
        with self.assertRaises(InvariantError):
            Sinogram(np.zeros((5, 4)), 0.1, self.theta + np.pi, self.config)

    def test_non_finite_rejected(self):
        data = np.zeros((5, 4))
        data[2, 1] = np.nan
        with self.assertRaises(InvariantError):
            Sinogram(data, 0.1, self.theta, self.config)

    def test_noise_is_seeded(self):
        sinogram = Sinogram(np.ones((200, 4)), 0.1, self.theta, self.config)
        a = add_noise(sinogram, 0.1, seed=7)
        b = add_noise(sinogram, 0.1, seed=7)
        self.assertTrue(np.array_equal(a.data, b.data))
        self.assertAlmostEqual(np.std(a.data - 1.0), 0.1, delta=0.01)
        self.assertIs(add_noise(sinogram, 0.0), sinogram)

import numpy as np
from django.test import SimpleTestCase
from pydantic import ValidationError

from config.exceptions import InvariantError
from tat_field.domain import Covector, Phantom, SpeedField
from tat_field.serializers.spec_serializers import (
    ConstantSpeedSpec,
    GaussianComponent,
    PaperDefaultSpeedSpec,
    PhantomSpec,
    RadialBumpSpeedSpec,
    SmoothedDiscComponent,
)
from tat_field.services import (
    dirichlet_energy,
    label_edge_rims,
    make_grid,
    make_phantom,
    phantom_edges,
    sample_speed,
    smooth_cutoff_eta,
    smooth_step,
)


class GridTests(SimpleTestCase):
    def test_spacing(self):
        grid = make_grid(4.0, 257, 0.5)
        self.assertEqual(grid.h, 0.03125)
        self.assertEqual(grid.coords[0], -4.0)
        self.assertAlmostEqual(grid.coords[-1], 4.0, places=12)

    def test_domain_too_small(self):
        with self.assertRaises(InvariantError):
            make_grid(1.0, 64, 0.0)

    def test_too_few_points(self):
        with self.assertRaises(InvariantError):
            make_grid(3.0, 15, 0.5)

    def test_grid_holds_large_radius_detector(self):
        grid = make_grid(3.5, 513, 0.5)
        # Large{r=2}: farthest detector point at R + r = 3
        self.assertTrue(grid.in_interior(np.array([[3.0, 0.0], [0.0, -3.0]])).all())

    def test_mesh_orientation(self):
        grid = make_grid(2.0, 33)
        X, Y = grid.mesh
        self.assertEqual(X[0, -1], 2.0)
        self.assertEqual(Y[-1, 0], 2.0)


class SmoothCutoffTests(SimpleTestCase):
    def setUp(self):
        self.eta = smooth_cutoff_eta(1.0, 0.2)

    def test_plateau_and_support(self):
        self.assertEqual(self.eta(0.0, 0.0), 1.0)
        self.assertEqual(self.eta(1.0, 0.0), 0.0)
        self.assertEqual(self.eta(0.0, -1.3), 0.0)

    def test_transition_value(self):
        value = float(self.eta(0.9, 0.0))
        self.assertGreater(value, 0.0)
        self.assertLess(value, 1.0)
        self.assertAlmostEqual(value, 0.5, places=12)

    def test_monotone_in_radius(self):
        rho = np.linspace(0.0, 1.2, 2001)
        values = self.eta(rho, np.zeros_like(rho))
        self.assertTrue(np.all(np.diff(values) <= 0))

    def test_derivative_continuous_across_taper(self):
        rho = np.linspace(0.7, 1.1, 4001)
        h = rho[1] - rho[0]
        slope = np.diff(self.eta(rho, np.zeros_like(rho))) / h
        self.assertLess(np.max(np.abs(np.diff(slope))), 500 * h)

    def test_invalid_taper(self):
        with self.assertRaises(InvariantError):
            smooth_cutoff_eta(0.5, 0.6)

    def test_step_midpoint(self):
        self.assertEqual(float(smooth_step(0.5)), 0.5)


class SpeedTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2.0, 129, 0.5)

    def test_constant_one(self):
        speed = sample_speed(ConstantSpeedSpec(c0=1.0), self.grid)
        self.assertTrue(np.all(speed.c == 1.0))

    def test_paper_default_values(self):
        speed = sample_speed(PaperDefaultSpeedSpec(), self.grid)
        center = self.grid.n // 2
        self.assertEqual(speed.c[center, center], 1.0)
        exterior = self.grid.radius >= 1.0
        self.assertLessEqual(np.max(np.abs(speed.c[exterior] - 1.0)), 1e-12)
        self.assertGreater(speed.min_speed, 0.69)
        self.assertLess(speed.max_speed, 1.31)
        self.assertTrue(np.isfinite(speed.laplacian_bound))

    def test_rejects_nonpositive_speed(self):
        with self.assertRaises(InvariantError):
            sample_speed(RadialBumpSpeedSpec(a=-1.5, sigma=0.3), self.grid)

    def test_exterior_invariant_enforced(self):
        with self.assertRaises(InvariantError):
            SpeedField(self.grid, np.full(self.grid.shape, 2.0))

    def test_unknown_kind_rejected(self):
        with self.assertRaises(ValidationError):
            PhantomSpec.model_validate({'components': [{'kind': 'square', 'radius': 0.1}]})


class PhantomTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2.0, 161, 0.5)

    def test_empty_spec(self):
        phantom = make_phantom(PhantomSpec(), self.grid)
        self.assertFalse(phantom.f.any())

    def test_gaussian_peak(self):
        phantom = make_phantom(PhantomSpec(components=[GaussianComponent(sigma=0.1)]), self.grid)
        center = self.grid.n // 2
        self.assertEqual(phantom.f[center, center], 1.0)
        self.assertEqual(phantom.f.max(), 1.0)

    def test_disc_support_exits_unit_disc(self):
        spec = PhantomSpec(components=[SmoothedDiscComponent(center=(0.5, 0.0), radius=0.6, taper=0.1)])
        with self.assertRaises(InvariantError):
            make_phantom(spec, self.grid)

    def test_exactly_zero_outside_support(self):
        disc = SmoothedDiscComponent(center=(0.1, -0.2), radius=0.3, taper=0.15)
        phantom = make_phantom(PhantomSpec(components=[disc]), self.grid)
        X, Y = self.grid.mesh
        outside = np.hypot(X - 0.1, Y + 0.2) >= 0.45
        self.assertFalse(phantom.f[outside].any())

    def test_phantom_rejects_exterior_values(self):
        f = np.ones(self.grid.shape)
        with self.assertRaises(InvariantError):
            Phantom(self.grid, f)


class EdgeTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2.0, 161, 0.5)

    def test_zero_phantom_has_no_edges(self):
        phantom = make_phantom(PhantomSpec(), self.grid)
        self.assertEqual(phantom_edges(phantom, 0.5), [])

    def test_disc_rim_is_radial(self):
        disc = SmoothedDiscComponent(radius=0.4, taper=0.15)
        phantom = make_phantom(PhantomSpec(components=[disc]), self.grid)
        edges = phantom_edges(phantom, 0.5)
        self.assertGreater(len(edges), 0)
        for cv in edges:
            rho = np.hypot(*cv.y)
            self.assertGreater(rho, 0.4 - 2 * self.grid.h)
            self.assertLess(rho, 0.55 + 2 * self.grid.h)
            cosine = abs(np.dot(cv.direction, cv.position / rho))
            self.assertGreater(cosine, np.cos(np.deg2rad(5.0)))

    def test_sign_flip_gives_same_set(self):
        disc = SmoothedDiscComponent(center=(0.2, 0.1), radius=0.3, taper=0.1)
        phantom = make_phantom(PhantomSpec(components=[disc]), self.grid)
        negative = Phantom(self.grid, -phantom.f, phantom.margin)
        key = lambda cv: (round(cv.y[0], 9), round(cv.y[1], 9), round(cv.xi[0], 9), round(cv.xi[1], 9))
        self.assertEqual(
            {key(cv) for cv in phantom_edges(phantom, 0.4)},
            {key(cv) for cv in phantom_edges(negative, 0.4)},
        )

    def test_two_discs_give_two_rims(self):
        spec = PhantomSpec(components=[
            SmoothedDiscComponent(center=(-0.45, 0.0), radius=0.2, taper=0.1),
            SmoothedDiscComponent(center=(0.45, 0.0), radius=0.2, taper=0.1),
        ])
        _, count = label_edge_rims(make_phantom(spec, self.grid), 0.5)
        self.assertEqual(count, 2)

    def test_threshold_range(self):
        phantom = make_phantom(PhantomSpec(), self.grid)
        with self.assertRaises(InvariantError):
            phantom_edges(phantom, 1.5)


class CovectorTests(SimpleTestCase):
    def test_zero_xi_rejected(self):
        with self.assertRaises(InvariantError):
            Covector((0.0, 0.0), (0.0, 0.0))

    def test_outside_unit_disc_rejected(self):
        with self.assertRaises(InvariantError):
            Covector((1.0, 0.0), (1.0, 0.0))

    def test_scale(self):
        cv = Covector((0.1, 0.2), (3.0, 4.0))
        self.assertEqual(cv.norm, 5.0)
        np.testing.assert_allclose(cv.direction, [0.6, 0.8])


class DirichletEnergyTests(SimpleTestCase):
    def test_linear_ramp(self):
        f = np.zeros((5, 5))
        f[2, 2] = 1.0
        # four unit jumps
        self.assertEqual(dirichlet_energy(f), 2.0)

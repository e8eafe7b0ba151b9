import numpy as np
from django.test import SimpleTestCase, tag

from config.exceptions import InvariantError
from tat_detector.domain import DetectorConfig
from tat_field.domain import Covector
from tat_field.serializers.spec_serializers import PaperDefaultSpeedSpec, PhantomSpec, SmoothedDiscComponent
from tat_field.services import make_grid, make_phantom, phantom_edges, sample_speed
from tat_rays.domain import MASKED, OUT_OF_APERTURE, VISIBLE, Aperture
from tat_rays.services import (
    SpeedInterpolant,
    canonical_image,
    coverage_time,
    detect_events,
    duplicate_images,
    initial_momentum,
    integrate,
    mirror_point,
    second_conormal_circle,
    trace_geodesic,
    trace_statistics,
    visibility,
)

SMALL = DetectorConfig(mode='small', R=2.0, r=0.8)
LARGE = DetectorConfig(mode='large', r=2.0)
ORIGIN = Covector((0.0, 0.0), (1.0, 0.0))


def paper_speed():
    grid = make_grid(2.0, 257, 0.5)
    return grid, sample_speed(PaperDefaultSpeedSpec(), grid)


def random_covectors(count, seed, max_radius=0.9):
    rng = np.random.default_rng(seed)
    rho = max_radius * np.sqrt(rng.uniform(size=count))
    phi = rng.uniform(0, 2 * np.pi, size=count)
    psi = rng.uniform(0, 2 * np.pi, size=count)
    return [Covector((r * np.cos(a), r * np.sin(a)), (np.cos(b), np.sin(b))) for r, a, b in zip(rho, phi, psi)]


class SpeedInterpolantTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.grid, cls.speed = paper_speed()
        cls.interp = SpeedInterpolant(cls.speed)

    def test_constant_default(self):
        c, grad = SpeedInterpolant().evaluate(np.array([[0.3, 0.1], [2.0, 0.0]]))
        np.testing.assert_array_equal(c, [1.0, 1.0])
        self.assertFalse(grad.any())

    def test_reproduces_nodes(self):
        X, Y = self.grid.mesh
        mask = self.grid.radius < 0.9
        points = np.stack([X[mask], Y[mask]], axis=1)
        c, _ = self.interp.evaluate(points)
        np.testing.assert_allclose(c, self.speed.c[mask], atol=1e-10)

    def test_exterior_is_one(self):
        c, grad = self.interp.evaluate(np.array([[2.5, 0.0], [0.0, -3.0]]))
        np.testing.assert_array_equal(c, [1.0, 1.0])
        self.assertFalse(grad.any())
        c, grad = self.interp.evaluate(np.array([[1.5, 0.0], [0.0, -1.5], [1.2, 1.2]]))
        np.testing.assert_allclose(c, 1.0, atol=1e-8)
        np.testing.assert_allclose(grad, 0.0, atol=1e-6)

    def test_continuous_across_unit_circle(self):
        phi = np.linspace(0.0, 2 * np.pi, 37)
        unit = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        c_in, _ = self.interp.evaluate((1.0 - 1e-9) * unit)
        c_out, _ = self.interp.evaluate((1.0 + 1e-9) * unit)
        self.assertLessEqual(np.abs(c_in - c_out).max(), 1e-7)

    def test_bad_order(self):
        with self.assertRaises(InvariantError):
            SpeedInterpolant(self.speed, order=2)


class TraceGeodesicTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.grid, cls.speed = paper_speed()
        cls.interp = SpeedInterpolant(cls.speed)

    def test_straight_line(self):
        path = trace_geodesic(ORIGIN, 1, 4.0)
        self.assertTrue(path.escaped)
        for t in np.linspace(0.0, 4.0, 41):
            np.testing.assert_allclose(path.position_at(t), [t, 0.0], atol=1e-8)

    def test_backward_direction(self):
        path = trace_geodesic(ORIGIN, -1, 2.0)
        np.testing.assert_allclose(path.position_at(1.5), [-1.5, 0.0], atol=1e-8)

    def test_hamiltonian_conserved(self):
        stats = trace_statistics(random_covectors(20, seed=4), self.interp)
        self.assertLessEqual(stats['hamiltonian_drift'], 1e-6)

    def test_step_control_bounds_drift_on_coarse_steps(self):
        covectors = random_covectors(20, seed=11)
        loose = trace_statistics(covectors, self.interp, h_ray=0.02)
        self.assertLessEqual(loose['hamiltonian_drift'], 1e-6)

    def test_escaped_state_keeps_unit_hamiltonian(self):
        covectors = random_covectors(50, seed=12)
        y = np.array([cv.y for cv in covectors])
        p0 = initial_momentum(covectors, 1, self.interp)
        run = integrate(y, p0, 10.0, self.interp, stop_on_escape=True)
        escaped = run['escaped']
        self.assertTrue(escaped.any())
        h = self.interp.hamiltonian(run['x'][escaped], run['p'][escaped])
        np.testing.assert_allclose(h, 1.0, atol=1e-6)

    def test_invalid_drift_tol(self):
        with self.assertRaises(InvariantError):
            integrate(np.zeros((1, 2)), np.array([[1.0, 0.0]]), 1.0, self.interp, drift_tol=0.0)

    def test_rays_escape(self):
        covectors = random_covectors(100, seed=7)
        y = np.array([cv.y for cv in covectors])
        p0 = initial_momentum(covectors, 1, self.interp)
        early = integrate(y, p0, 3.0, self.interp, stop_on_escape=True)
        self.assertGreaterEqual(early['escaped'].sum(), 95)
        stats = trace_statistics(covectors, self.interp)
        self.assertEqual(stats['escaped'], 100)

    def test_fourth_order(self):
        start = Covector((-0.5, 0.0), (1.0, 0.3))
        y = np.array([start.y])
        p0 = initial_momentum([start], 1, self.interp)
        reference = integrate(y, p0, 0.8, self.interp, h_ray=0.0025, drift_tol=None)['x'][0]
        coarse = integrate(y, p0, 0.8, self.interp, h_ray=0.04, drift_tol=None)['x'][0]
        fine = integrate(y, p0, 0.8, self.interp, h_ray=0.02, drift_tol=None)['x'][0]
        ratio = np.hypot(*(coarse - reference)) / np.hypot(*(fine - reference))
        self.assertGreaterEqual(ratio, 12.0)

    def test_trapped_by_t_max(self):
        path = trace_geodesic(ORIGIN, 1, 0.1)
        self.assertFalse(path.escaped)
        self.assertEqual(detect_events(path, SMALL), [])

    def test_invalid_sigma(self):
        with self.assertRaises(InvariantError):
            trace_geodesic(ORIGIN, 0, 1.0)


class DetectEventTests(SimpleTestCase):
    def test_small_example(self):
        events = detect_events(trace_geodesic(ORIGIN, 1, 5.0), SMALL)
        self.assertEqual([e.branch for e in events], [1, 2])
        self.assertAlmostEqual(events[0].t_det, 1.2, places=9)
        self.assertAlmostEqual(events[1].t_det, 2.8, places=9)
        for e in events:
            self.assertAlmostEqual(e.theta, 0.0, places=12)
        self.assertAlmostEqual(events[0].lam, 1 / 1.6, places=12)
        self.assertAlmostEqual(events[1].lam, -1 / 1.6, places=12)

    def test_large_example(self):
        events = detect_events(trace_geodesic(ORIGIN, 1, 5.0), LARGE, near_side=True)
        outward = [e for e in events if e.branch == 1][0]
        self.assertAlmostEqual(outward.t_det, 3.0, places=9)
        self.assertAlmostEqual(outward.theta, 0.0, places=12)
        np.testing.assert_allclose(outward.point, [3.0, 0.0], atol=1e-9)
        near = [e for e in events if e.near_side][0]
        self.assertAlmostEqual(near.t_det, 1.0, places=9)
        self.assertAlmostEqual(abs(near.theta), np.pi, places=12)

    def test_radial_crossing_has_zero_omega(self):
        for e in detect_events(trace_geodesic(ORIGIN, 1, 5.0), SMALL):
            np.testing.assert_allclose(e.omega, [0.0, 0.0], atol=1e-12)

    def test_lambda_scales_with_xi(self):
        cv = Covector((0.0, 0.0), (2.0, 0.0))
        events = detect_events(trace_geodesic(cv, 1, 5.0), SMALL)
        self.assertAlmostEqual(events[0].lam, 2 / 1.6, places=12)
        self.assertAlmostEqual(events[0].tau, -2.0, places=12)

    def test_center_passage(self):
        grid, speed = paper_speed()
        interp = SpeedInterpolant(speed)
        for speed_model in (None, interp):
            cv = Covector((0.3, -0.2), (0.6, 0.8))
            path = trace_geodesic(cv, 1, 10.0, speed_model)
            for e in detect_events(path, SMALL, speed=speed_model):
                shift = SMALL.r if e.branch == 1 else -SMALL.r
                center = SMALL.R * np.array([np.cos(e.theta), np.sin(e.theta)])
                self.assertLessEqual(np.hypot(*(path.position_at(e.t_det + shift) - center)), 1e-6)

    def test_crossing_is_perpendicular(self):
        cv = Covector((0.3, -0.2), (0.6, 0.8))
        for config in (SMALL, LARGE):
            for e in canonical_image(cv, config, near_side=True):
                normal = (np.array(e.point) - np.array(e.center)) / config.r
                self.assertGreaterEqual(abs(np.dot(normal, e.direction)), 1 - 1e-6)


class CanonicalImageTests(SimpleTestCase):
    def setUp(self):
        self.cv = Covector((0.3, -0.2), (0.6, 0.8))

    def test_event_counts(self):
        self.assertEqual(len(canonical_image(self.cv, SMALL)), 4)
        self.assertEqual(len(canonical_image(self.cv, LARGE)), 2)
        self.assertEqual(len(canonical_image(self.cv, LARGE, near_side=True)), 4)

    def test_tau_signs(self):
        for e in canonical_image(self.cv, SMALL):
            self.assertAlmostEqual(e.tau, -e.sigma * 1.0, places=12)

    def test_time_symmetry_at_origin(self):
        events = canonical_image(ORIGIN, SMALL)
        forward = sorted((e for e in events if e.sigma == 1), key=lambda e: e.branch)
        backward = sorted((e for e in events if e.sigma == -1), key=lambda e: e.branch)
        for plus, minus in zip(forward, backward):
            self.assertAlmostEqual(plus.t_det, minus.t_det, places=9)
            self.assertAlmostEqual(minus.time, -plus.time, places=9)
            self.assertAlmostEqual(abs(minus.theta - plus.theta), np.pi, places=9)

    def test_duplicates_reported(self):
        image = canonical_image(self.cv, SMALL)
        other = canonical_image(ORIGIN, SMALL)
        self.assertEqual(duplicate_images([image, other, image]), [(0, 2)])
        self.assertEqual(duplicate_images([image, other]), [])


class MirrorPointTests(SimpleTestCase):
    def test_small_antipode(self):
        np.testing.assert_allclose(mirror_point((1.2, 0.0), 0.0, SMALL), [2.8, 0.0])

    def test_involution(self):
        rng = np.random.default_rng(3)
        for config in (SMALL, LARGE):
            for theta, alpha in rng.uniform(0, 2 * np.pi, size=(5, 2)):
                center = config.R * np.array([np.cos(theta), np.sin(theta)])
                x = center + config.r * np.array([np.cos(alpha), np.sin(alpha)])
                image = mirror_point(x, theta, config)
                self.assertAlmostEqual(np.hypot(*(image - center)), config.r, places=9)
                np.testing.assert_allclose(mirror_point(image, theta, config), x, atol=1e-12)

    def test_large_radial_crossing(self):
        image = mirror_point((3.0, 0.0), 0.0, LARGE)
        np.testing.assert_allclose(image, [-1.0, 0.0], atol=1e-12)

    def test_point_off_circle(self):
        with self.assertRaises(InvariantError):
            mirror_point((1.3, 0.0), 0.0, SMALL)

    def test_second_conormal_circle(self):
        theta0 = np.array([np.cos(0.4), np.sin(0.4)])
        x_tilde = theta0 + 2.0 * np.array([np.cos(2.0), np.sin(2.0)])
        theta1, r2 = second_conormal_circle(x_tilde, theta0, 2.0)
        self.assertAlmostEqual(np.hypot(*theta1), 1.0, places=12)
        a, b = x_tilde - theta0, x_tilde - theta1
        self.assertAlmostEqual(a[0] * b[1] - a[1] * b[0], 0.0, places=12)
        self.assertAlmostEqual(r2, abs(2.0 + 2 * np.dot(theta0, a / 2.0)), places=12)


class CoverageTimeTests(SimpleTestCase):
    def test_constant_speed(self):
        grid = make_grid(2.0, 129, 0.5)
        self.assertAlmostEqual(coverage_time(grid, SMALL), 1.2, places=12)
        self.assertAlmostEqual(coverage_time(grid, LARGE), 1.0, places=12)

    def test_divides_by_min_speed(self):
        grid, speed = paper_speed()
        self.assertAlmostEqual(coverage_time(grid, SMALL, speed), 1.2 / speed.min_speed, places=12)


class ApertureTests(SimpleTestCase):
    def test_window(self):
        aperture = Aperture((0.0, 1.0))
        self.assertFalse(aperture.contains_time(0.0))
        self.assertTrue(aperture.contains_time(1.0))

    def test_arc_wraps(self):
        aperture = Aperture((0.0, 1.0), arc=(-np.pi / 2, 0.0))
        self.assertTrue(aperture.contains_angle(-np.pi / 4))
        self.assertTrue(aperture.contains_angle(7 * np.pi / 4))
        self.assertFalse(aperture.contains_angle(np.pi / 4))

    def test_invalid(self):
        with self.assertRaises(InvariantError):
            Aperture((1.0, 1.0))
        with self.assertRaises(InvariantError):
            Aperture((0.0, 1.0), arc=(0.0, 7.0))


class VisibilityTests(SimpleTestCase):
    def test_empty_sample(self):
        with self.assertRaises(InvariantError):
            visibility([], Aperture((0.0, 1.0)), SMALL)

    def test_no_aperture_event(self):
        y = 0.4 * np.array([np.cos(3 * np.pi / 4), np.sin(3 * np.pi / 4)])
        cv = Covector(tuple(y), (np.cos(5 * np.pi / 4), np.sin(5 * np.pi / 4)))
        report = visibility([cv], Aperture((0.0, 10.0), arc=(-np.pi / 2, 0.0)), SMALL, n_jobs=1)
        self.assertEqual(report.verdicts(), [OUT_OF_APERTURE])

    def test_radial_covectors_against_arc(self):
        aperture = Aperture((0.0, 10.0), arc=(-np.pi / 2, 0.0))
        wf = [Covector((0.45 * np.cos(phi), 0.45 * np.sin(phi)), (np.cos(phi), np.sin(phi)))
              for phi in (-np.pi / 4, 3 * np.pi / 4, np.pi / 4)]
        report = visibility(wf, aperture, SMALL, n_jobs=1)
        self.assertEqual(report.verdicts(), [VISIBLE, VISIBLE, OUT_OF_APERTURE])

    def test_symmetric_pair_is_masked(self):
        a = Covector((-0.8, 0.0), (1.0, 0.0))
        b = Covector((0.8, 0.0), (1.0, 0.0))
        aperture = Aperture((1.9, 2.1), arc=(-0.1, 0.1))
        report = visibility([a, b], aperture, SMALL, n_jobs=1)
        self.assertEqual(report.verdicts(), [MASKED, MASKED])
        self.assertEqual([entry.partner for entry in report.entries], ['matched', 'matched'])
        alone = visibility([a], aperture, SMALL, n_jobs=1)
        self.assertEqual(alone.verdicts(), [VISIBLE])

    def test_scale_invariance(self):
        wf = random_covectors(12, seed=9)
        aperture = Aperture((0.0, 2.0), arc=(-np.pi / 2, np.pi / 2))
        plain = visibility(wf, aperture, SMALL, n_jobs=1)
        scaled = visibility([cv.scaled(3.0) for cv in wf], aperture, SMALL, n_jobs=1)
        self.assertEqual(plain.verdicts(), scaled.verdicts())

    def test_parallel_keeps_order(self):
        wf = random_covectors(30, seed=10)
        aperture = Aperture((0.0, 2.0), arc=(0.0, np.pi))
        serial = visibility(wf, aperture, LARGE, n_jobs=1)
        parallel = visibility(wf, aperture, LARGE, n_jobs=2)
        self.assertEqual(serial.verdicts(), parallel.verdicts())
        self.assertEqual([e.covector for e in parallel.entries], wf)

    def test_report_rows(self):
        report = visibility([ORIGIN], Aperture((0.0, 5.0)), SMALL, n_jobs=1)
        row = report.to_rows()[0]
        self.assertEqual(row['verdict'], VISIBLE)
        self.assertAlmostEqual(row['t'], 1.2, places=9)


class FullApertureCoverageTests(SimpleTestCase):
    def test_every_rim_covector_visible(self):
        grid = make_grid(2.0, 129, 0.5)
        disc = make_phantom(PhantomSpec(components=[SmoothedDiscComponent(radius=0.45, taper=0.1)]), grid)
        wf = phantom_edges(disc)
        aperture = Aperture((0.0, coverage_time(grid, SMALL)))
        report = visibility(wf, aperture, SMALL, position_tol=2 * grid.h, n_jobs=1)
        self.assertEqual(report.counts()[VISIBLE], len(wf))


@tag('slow')
class VariableSpeedCoverageTests(SimpleTestCase):
    def test_every_rim_covector_visible(self):
        grid, speed = paper_speed()
        disc = make_phantom(PhantomSpec(components=[SmoothedDiscComponent(radius=0.45, taper=0.1)]), grid)
        wf = phantom_edges(disc)
        aperture = Aperture((0.0, coverage_time(grid, SMALL, speed)))
        report = visibility(wf, aperture, SMALL, SpeedInterpolant(speed), position_tol=2 * grid.h)
        self.assertEqual(report.counts()[VISIBLE], len(wf))

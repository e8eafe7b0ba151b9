from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase, tag

from config.exceptions import GeometryMismatchError, InvariantError, SolverDivergenceError
from tat_detector.domain import DetectorConfig
from tat_detector.services import forward_operator
from tat_field.serializers.spec_serializers import (
    ConstantSpeedSpec,
    GaussianComponent,
    PaperDefaultSpeedSpec,
    PhantomSpec,
    SmoothedDiscComponent,
)
from tat_field.services import make_grid, make_phantom, sample_speed
from tat_recon.services import (
    ForwardModel,
    adjoint_operator,
    angular_taper,
    assemble_matrix,
    cg_normal,
    edge_recovery_ratio,
    landweber,
    operator_norm_estimate,
    reconstruct,
    relative_error,
    stability_proxy,
    time_cutoff_chi,
)
from tat_wave.services import pml_profile

LARGE = DetectorConfig(mode='large', r=2.0, n_theta=24, T=3.0)
SMALL = DetectorConfig(mode='small', R=2.0, r=0.8, n_theta=24, T=3.0)


class TimeCutoffTests(SimpleTestCase):
    def setUp(self):
        self.chi = time_cutoff_chi(2.0, 3.0, 401, 0.01)

    def test_plateau(self):
        self.assertEqual(self.chi.weights[100], 1.0)
        self.assertTrue(np.all(self.chi.weights[:201] == 1.0))

    def test_support(self):
        t = 0.01 * np.arange(401)
        self.assertFalse(self.chi.weights[t >= 3.0].any())

    def test_taper_midpoint(self):
        self.assertAlmostEqual(self.chi.weights[250], 0.5, places=12)

    def test_monotone(self):
        self.assertTrue(np.all(np.diff(self.chi.weights) <= 0))

    def test_invalid_times(self):
        with self.assertRaises(InvariantError):
            time_cutoff_chi(3.0, 3.0, 401, 0.01)
        with self.assertRaises(InvariantError):
            time_cutoff_chi(2.0, 5.0, 401, 0.01)


class AngularTaperTests(SimpleTestCase):
    def test_full_circle(self):
        theta = np.linspace(0, 2 * np.pi, 10, endpoint=False)
        self.assertTrue(np.all(angular_taper(theta, None) == 1.0))

    def test_arc_edges_vanish(self):
        arc = (-np.pi / 2, 0.0)
        theta = np.linspace(-np.pi / 2, 0.0, 101)
        psi = angular_taper(theta, arc, 0.1)
        self.assertEqual(psi[0], 0.0)
        self.assertEqual(psi[-1], 0.0)
        self.assertEqual(psi[50], 1.0)


class AdjointTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.grid = make_grid(3.5, 65, 0.5)
        cls.speed = sample_speed(PaperDefaultSpeedSpec(), cls.grid)
        cls.pml = pml_profile(cls.grid)

    def test_adjoint_identity(self):
        rng = np.random.default_rng(11)
        for config in (LARGE, SMALL):
            model = ForwardModel(self.speed, config, self.pml)
            for _ in range(5):
                f = model.project(rng.standard_normal(self.grid.shape))
                g = rng.standard_normal(model.shape)
                Mf = model.forward(f)
                lhs = np.vdot(Mf, g)
                rhs = np.vdot(f, model.adjoint(g))
                self.assertLessEqual(abs(lhs - rhs) / (np.linalg.norm(Mf) * np.linalg.norm(g)), 1e-10)

    def test_zero_data(self):
        model = ForwardModel(self.speed, LARGE, self.pml)
        self.assertFalse(model.adjoint(np.zeros(model.shape)).any())

    def test_adjoint_operator_matches_model(self):
        f = make_phantom(PhantomSpec(components=[GaussianComponent(sigma=0.15)]), self.grid)
        s = forward_operator(f, self.speed, LARGE, self.pml)
        model = ForwardModel.for_sinogram(s, self.speed, self.pml)
        np.testing.assert_allclose(adjoint_operator(s, self.speed, self.pml), model.adjoint(s.data))

    def test_geometry_mismatch(self):
        f = make_phantom(PhantomSpec(), self.grid)
        s = forward_operator(f, self.speed, LARGE, self.pml)
        for other in (replace(LARGE, n_theta=12), replace(LARGE, T=2.0)):
            model = ForwardModel(self.speed, other, self.pml)
            with self.assertRaises(GeometryMismatchError):
                model.check(s)

    def test_matching_geometry_passes_check(self):
        f = make_phantom(PhantomSpec(), self.grid)
        s = forward_operator(f, self.speed, LARGE, self.pml)
        ForwardModel(self.speed, replace(LARGE), self.pml).check(s)


class BackprojectionTests(SimpleTestCase):
    def test_peak_stays_at_source(self):
        grid = make_grid(3.5, 65, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        pml = pml_profile(grid)
        f = make_phantom(PhantomSpec(components=[GaussianComponent(sigma=0.15)]), grid)
        image = adjoint_operator(forward_operator(f, speed, LARGE, pml), speed, pml)
        iy, ix = np.unravel_index(np.argmax(image), image.shape)
        X, Y = grid.mesh
        self.assertLessEqual(np.hypot(X[iy, ix], Y[iy, ix]), 2 * grid.h)


class OperatorNormTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        grid = make_grid(3.5, 33, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        cls.config = DetectorConfig(mode='large', r=2.0, n_theta=32, T=3.0)
        # coarse grid: keep dt·sigma_max below 1
        cls.model = ForwardModel(speed, cls.config, pml_profile(grid, sigma_max=8.0))

    def test_too_few_iterations(self):
        with self.assertRaises(InvariantError):
            operator_norm_estimate(self.model, iters=5)

    def test_scale_invariance(self):
        x = np.random.default_rng(2).standard_normal(self.model.grid.shape)
        self.assertEqual(operator_norm_estimate(self.model, initial=x), operator_norm_estimate(self.model, initial=2 * x))

    def test_matches_dense_svd(self):
        A, columns = assemble_matrix(self.model)
        self.assertEqual(A.shape, (self.model.nt * self.config.n_theta, columns.size))
        largest = np.linalg.svd(A, compute_uv=False)[0]
        estimate = operator_norm_estimate(self.model, seed=5)
        self.assertLessEqual(abs(estimate - largest ** 2) / largest ** 2, 0.10)

    def test_stability_proxy_is_positive(self):
        report = stability_proxy(self.model, radius=0.9)
        self.assertGreater(report['smallest'], 0.0)
        self.assertGreaterEqual(report['condition'], 1.0)


class IterativeSolverTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.grid = make_grid(3.5, 65, 0.5)
        cls.speed = sample_speed(PaperDefaultSpeedSpec(), cls.grid)
        cls.pml = pml_profile(cls.grid)
        cls.truth = make_phantom(PhantomSpec(components=[SmoothedDiscComponent(radius=0.35, taper=0.25)]), cls.grid)
        cls.s = forward_operator(cls.truth, cls.speed, LARGE, cls.pml)
        cls.model = ForwardModel.for_sinogram(cls.s, cls.speed, cls.pml)
        cls.bound = operator_norm_estimate(cls.model, seed=1)

    def test_zero_data(self):
        zero = self.s.with_data(np.zeros_like(self.s.data))
        for result in (landweber(zero, self.model, iters=3), cg_normal(zero, self.model, iters=3)):
            self.assertFalse(result.estimate.f.any())
            self.assertEqual(result.residual_history, [0.0])

    def test_zero_estimate_error(self):
        zero = self.s.with_data(np.zeros_like(self.s.data))
        result = cg_normal(zero, self.model, iters=3)
        self.assertEqual(relative_error(result.estimate, self.truth), 1.0)

    def test_landweber_is_monotone_and_supported(self):
        result = landweber(self.s, self.model, iters=5, norm_estimate=self.bound)
        history = np.array(result.residual_history)
        self.assertTrue(np.all(np.diff(history) <= 0))
        self.assertFalse(result.estimate.f[~self.model.support].any())
        self.assertAlmostEqual(result.step_size, 1.0 / self.bound)

    def test_cg_beats_landweber_at_equal_iterations(self):
        lw = landweber(self.s, self.model, iters=5, norm_estimate=self.bound)
        cg = cg_normal(self.s, self.model, iters=5)
        self.assertLessEqual(cg.final_misfit, lw.final_misfit * (1 + 1e-8))

    def test_tikhonov_still_monotone(self):
        result = landweber(self.s, self.model, iters=4, norm_estimate=self.bound, tikhonov=1e-3)
        self.assertLess(result.residual_history[-1], result.residual_history[0])

    def test_oversized_step_diverges(self):
        with self.assertRaises(SolverDivergenceError):
            landweber(self.s, self.model, iters=12, step=10.0 / self.bound)

    def test_step_bound_checked(self):
        with self.assertRaises(InvariantError):
            landweber(self.s, self.model, iters=2, step=3.0 / self.bound, norm_estimate=self.bound)

    def test_unknown_method(self):
        with self.assertRaises(InvariantError):
            reconstruct(self.s, self.model, method='art')

    def test_bad_tolerance(self):
        with self.assertRaises(InvariantError):
            cg_normal(self.s, self.model, tol=0.0)


class EdgeRecoveryTests(SimpleTestCase):
    def test_perfect_estimate(self):
        grid = make_grid(2.0, 129, 0.5)
        truth = make_phantom(PhantomSpec(components=[SmoothedDiscComponent(radius=0.4, taper=0.15)]), grid)
        ratio = edge_recovery_ratio(truth, truth, np.array([[0.47, 0.0], [0.0, -0.47]]))
        np.testing.assert_allclose(ratio, 1.0)

    def test_flat_region_is_nan(self):
        grid = make_grid(2.0, 129, 0.5)
        truth = make_phantom(PhantomSpec(components=[SmoothedDiscComponent(radius=0.4, taper=0.15)]), grid)
        self.assertTrue(np.isnan(edge_recovery_ratio(truth, truth, np.array([[0.0, 0.0]]), radius=0.05)[0]))


@tag('slow')
class FullDataReconstructionTests(SimpleTestCase):
    """Large detectors r = 2, full aperture, T = 5 on a 129² grid."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        grid = make_grid(3.5, 129, 0.5)
        speed = sample_speed(PaperDefaultSpeedSpec(), grid)
        pml = pml_profile(grid)
        spec = PhantomSpec(components=[
            SmoothedDiscComponent(center=(-0.2, 0.1), radius=0.35, taper=0.2),
            GaussianComponent(center=(0.35, -0.3), sigma=0.08, amp=0.5),
        ])
        cls.truth = make_phantom(spec, grid)
        config = DetectorConfig(mode='large', r=2.0, n_theta=180, T=5.0)
        cls.s = forward_operator(cls.truth, speed, config, pml)
        chi = time_cutoff_chi(4.5, 5.0, cls.s.nt, cls.s.dt)
        cls.model = ForwardModel.for_sinogram(cls.s, speed, pml, cutoff=chi)
        cls.lw = landweber(cls.s, cls.model, iters=50, seed=3)
        cls.cg = cg_normal(cls.s, cls.model, iters=15)

    def test_cg_error(self):
        self.assertLessEqual(relative_error(self.cg.estimate, self.truth), 0.15)

    def test_landweber_progress(self):
        history = np.array(self.lw.residual_history)
        self.assertTrue(np.all(np.diff(history) <= 0))
        self.assertLessEqual(relative_error(self.lw.estimate, self.truth), 0.15)

    def test_cg_reaches_landweber_misfit(self):
        self.assertLessEqual(self.cg.final_misfit, self.lw.final_misfit)

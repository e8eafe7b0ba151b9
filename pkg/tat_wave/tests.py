import numpy as np
from django.test import SimpleTestCase, tag
from scipy import sparse

from config.exceptions import CFLError, InvariantError, SolverDivergenceError
from tat_field.serializers.spec_serializers import (
    ConstantSpeedSpec,
    GaussianComponent,
    PaperDefaultSpeedSpec,
    PhantomSpec,
    SmoothedDiscComponent,
)
from tat_field.services import dirichlet_energy, make_grid, make_phantom, sample_speed
from tat_wave.domain import PmlProfile, WaveState
from tat_wave.services import (
    LeapfrogScheme,
    cfl_time_step,
    diff_x,
    energy,
    init_state,
    laplacian,
    pml_profile,
    solve_forward,
    solve_with_sources,
    step,
)


def gaussian_phantom(grid, sigma=0.1, center=(0.0, 0.0)):
    return make_phantom(PhantomSpec(components=[GaussianComponent(center=center, sigma=sigma)]), grid)


class StencilTests(SimpleTestCase):
    def test_laplacian_is_symmetric(self):
        rng = np.random.default_rng(3)
        u, v = rng.standard_normal((2, 20, 20))
        self.assertAlmostEqual(np.sum(v * laplacian(u, 0.1)), np.sum(u * laplacian(v, 0.1)), places=8)

    def test_difference_is_antisymmetric(self):
        rng = np.random.default_rng(4)
        u, v = rng.standard_normal((2, 20, 20))
        self.assertAlmostEqual(np.sum(v * diff_x(u, 0.1)), -np.sum(u * diff_x(v, 0.1)), places=10)


class PmlProfileTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2.0, 161, 0.5)

    def test_quadratic_profile(self):
        pml = pml_profile(self.grid, sigma_max=40.0, m=2)
        coords = self.grid.coords
        self.assertEqual(pml.sigma_x[np.argmin(np.abs(coords))], 0.0)
        self.assertAlmostEqual(pml.sigma_x[0], 40.0)
        self.assertAlmostEqual(pml.sigma_x[-1], 40.0)
        # depth = width / 2 at |x| = 1.75
        index = int(np.argmin(np.abs(coords + 1.75)))
        self.assertAlmostEqual(pml.sigma_x[index], 10.0, places=9)

    def test_interior_is_undamped(self):
        pml = pml_profile(self.grid)
        interior = np.abs(self.grid.coords) <= 1.5
        self.assertFalse(pml.sigma_x[interior].any())
        self.assertTrue(np.all(np.diff(pml.sigma_x[self.grid.coords >= 1.5]) > 0))

    def test_overlapping_detector_rejected(self):
        with self.assertRaises(InvariantError):
            pml_profile(self.grid, detector_reach=1.8)

    def test_width_must_match_grid(self):
        with self.assertRaises(InvariantError):
            pml_profile(self.grid, width=0.3)


class InitialStateTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2.0, 129, 0.0)
        self.speed = sample_speed(ConstantSpeedSpec(), self.grid)
        self.dt = cfl_time_step(self.grid, self.speed, 0.5)

    def test_zero_phantom(self):
        state = init_state(make_phantom(PhantomSpec(), self.grid), self.speed, self.dt)
        self.assertFalse(state.u_curr.any() or state.u_prev.any())

    def test_initial_velocity_is_second_order(self):
        f = gaussian_phantom(self.grid)
        state = init_state(f, self.speed, self.dt)
        velocity = (state.u_curr - state.u_prev) / self.dt
        bound = 0.5 * self.dt * np.abs(laplacian(f.f, self.grid.h)).max()
        self.assertLessEqual(np.abs(velocity).max(), bound * (1 + 1e-12))

    def test_cfl_violation(self):
        f = gaussian_phantom(self.grid)
        with self.assertRaises(CFLError):
            init_state(f, self.speed, 2 * self.grid.h)

    def test_first_step_matches_even_extension(self):
        # For a time-even solution u(dt) = u(−dt); the Taylor start reproduces it exactly
        f = gaussian_phantom(self.grid, sigma=0.15)
        scheme = LeapfrogScheme(self.speed, PmlProfile.closed(self.grid), self.dt)
        state = scheme.initial_state(f.f)
        nxt = scheme.step(state)
        np.testing.assert_allclose(nxt.u_curr, state.u_prev, atol=1e-14)


class StepTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2.0, 129, 0.5)
        self.speed = sample_speed(PaperDefaultSpeedSpec(), self.grid)
        self.pml = pml_profile(self.grid)
        self.dt = cfl_time_step(self.grid, self.speed)

    def test_zero_state_stays_zero(self):
        state = step(WaveState.zeros(self.grid, self.dt), self.speed, self.pml)
        self.assertFalse(state.u_curr.any())
        self.assertAlmostEqual(state.t, self.dt)

    def test_non_finite_state_detected(self):
        state = WaveState.zeros(self.grid, self.dt)
        bad = np.zeros(self.grid.shape)
        bad[60, 60] = np.inf
        state = WaveState(bad, bad.copy(), state.phi, state.psi, 0.0, self.dt)
        with self.assertRaises(SolverDivergenceError):
            step(state, self.speed, self.pml)

    def test_zero_phantom_probes_zero(self):
        readings = []
        solve_forward(make_phantom(PhantomSpec(), self.grid), self.speed, 0.5, self.pml,
                      probe=lambda t, u: readings.append(np.abs(u).max()))
        self.assertTrue(len(readings) > 1)
        self.assertEqual(max(readings), 0.0)

    def test_forward_is_deterministic(self):
        f = gaussian_phantom(self.grid)
        a = solve_forward(f, self.speed, 0.4, self.pml)
        b = solve_forward(f, self.speed, 0.4, self.pml)
        self.assertTrue(np.array_equal(a.u_curr, b.u_curr))


class EnergyTests(SimpleTestCase):
    def setUp(self):
        self.grid = make_grid(2.0, 257, 0.0)
        self.speed = sample_speed(ConstantSpeedSpec(), self.grid)
        self.dt = cfl_time_step(self.grid, self.speed, 0.5)
        self.closed = PmlProfile.closed(self.grid)

    def test_zero_state(self):
        self.assertEqual(energy(WaveState.zeros(self.grid, self.dt), self.speed), 0.0)

    def test_initial_energy_is_gradient_energy(self):
        f = gaussian_phantom(self.grid)
        e0 = energy(init_state(f, self.speed, self.dt), self.speed)
        self.assertAlmostEqual(e0 / dirichlet_energy(f.f), 1.0, delta=2e-2)

    def test_closed_domain_conserves_energy(self):
        f = gaussian_phantom(self.grid)
        scheme = LeapfrogScheme(self.speed, self.closed, self.dt)
        state = scheme.initial_state(f.f)
        e0 = scheme.energy(state)
        for _ in range(1000):
            state = scheme.step(state)
        self.assertLessEqual(abs(scheme.energy(state) - e0) / e0, 1e-3)

    def test_time_reversibility(self):
        variable = sample_speed(PaperDefaultSpeedSpec(), self.grid)
        dt = cfl_time_step(self.grid, variable, 0.5)
        f = gaussian_phantom(self.grid, sigma=0.12, center=(0.2, -0.1))
        scheme = LeapfrogScheme(variable, self.closed, dt)
        start = scheme.initial_state(f.f)
        state = start
        for _ in range(200):
            state = scheme.step(state)
        for _ in range(200):
            state = scheme.step_backward(state)
        error = np.linalg.norm(state.u_curr - start.u_curr) / np.linalg.norm(start.u_curr)
        self.assertLessEqual(error, 1e-10)

    def test_backward_step_needs_closed_domain(self):
        grid = make_grid(2.0, 65, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        scheme = LeapfrogScheme(speed, pml_profile(grid), cfl_time_step(grid, speed))
        with self.assertRaises(InvariantError):
            scheme.step_backward(WaveState.zeros(grid, scheme.dt))


class PropagationTests(SimpleTestCase):
    def test_finite_speed_of_propagation(self):
        grid = make_grid(3.0, 193, 0.5)
        speed = sample_speed(PaperDefaultSpeedSpec(), grid)
        disc = SmoothedDiscComponent(center=(0.1, 0.2), radius=0.2, taper=0.2)
        f = make_phantom(PhantomSpec(components=[disc]), grid)
        T = 0.6
        state = solve_forward(f, speed, T, pml_profile(grid))
        outside = grid.radius > 1.0 + T * speed.max_speed + 3 * grid.h
        mass = np.sum(state.u_curr ** 2)
        self.assertLessEqual(np.sum(state.u_curr[outside] ** 2), 1e-8 * mass)

    def test_update_reaches_one_cell_per_step(self):
        grid = make_grid(2.0, 129, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        f = np.zeros(grid.shape)
        center = grid.n // 2
        f[center, center] = 1.0
        scheme = LeapfrogScheme(speed, pml_profile(grid), cfl_time_step(grid, speed))
        state = scheme.initial_state(f)
        steps = 20
        for _ in range(steps):
            state = scheme.step(state)
        rows, cols = np.indices(grid.shape)
        manhattan = np.abs(rows - center) + np.abs(cols - center)
        self.assertFalse(state.u_curr[manhattan > steps].any())
        self.assertNotEqual(state.u_curr[center, center + steps], 0.0)

    def test_arrival_time_at_probe(self):
        grid = make_grid(2.5, 321, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        sigma = 0.05
        f = gaussian_phantom(grid, sigma=sigma)
        target = int(np.argmin(np.abs(grid.coords - 1.5)))
        center = grid.n // 2
        distance = grid.coords[target]
        times, values = [], []

        def probe(t, u):
            times.append(t)
            values.append(u[center, target])

        solve_forward(f, speed, 2.0, pml_profile(grid), probe=probe)
        values = np.abs(np.array(values))
        arrival = times[int(np.argmax(values > 1e-3 * values.max()))]
        dt = times[1] - times[0]
        self.assertGreaterEqual(arrival, distance - 5 * sigma - grid.h - dt)
        self.assertLessEqual(arrival, distance)

    def test_point_source_front(self):
        grid = make_grid(2.5, 321, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        dt = cfl_time_step(grid, speed)
        center = grid.n // 2
        injector = sparse.csr_matrix(([1.0], ([0], [center * grid.n + center])), shape=(1, grid.n ** 2))
        n_steps = int(round(1.0 / dt))
        t = dt * np.arange(n_steps + 1)
        tau, t0 = 0.05, 0.2
        sources = np.exp(-((t - t0) / tau) ** 2)[:, None]
        state = solve_with_sources(sources, injector, speed, pml_profile(grid), dt)
        row = np.abs(state.u_curr[center, center:])
        front = grid.coords[center + int(np.argmax(row))]
        self.assertAlmostEqual(front, n_steps * dt - t0, delta=4 * grid.h + 2 * tau)

    def test_zero_sources(self):
        grid = make_grid(2.0, 65, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        dt = cfl_time_step(grid, speed)
        injector = sparse.csr_matrix(([1.0], ([0], [32 * 65 + 32])), shape=(1, 65 ** 2))
        state = solve_with_sources(np.zeros((20, 1)), injector, speed, pml_profile(grid), dt)
        self.assertFalse(state.u_curr.any())

    def test_source_shape_mismatch(self):
        grid = make_grid(2.0, 65, 0.5)
        speed = sample_speed(ConstantSpeedSpec(), grid)
        injector = sparse.csr_matrix((2, 65 ** 2))
        with self.assertRaises(InvariantError):
            solve_with_sources(np.zeros((20, 3)), injector, speed, pml_profile(grid), 0.01)

    @tag('slow')
    def test_pml_absorbs_paper_default_field(self):
        """
        Total discrete energy on the whole grid after T = 5 is below 1e-3 of the start

        The meter is the closed-scheme energy summed over the interior and the
        band together. The outgoing front enters the band near t = 2, so at
        T = 5 the remainder bounds the reflected share plus what the band has
        not yet damped.
        """
        grid = make_grid(2.5, 161, 0.5)
        speed = sample_speed(PaperDefaultSpeedSpec(), grid)
        f = gaussian_phantom(grid, sigma=0.1)
        dt = cfl_time_step(grid, speed)
        scheme = LeapfrogScheme(speed, PmlProfile.closed(grid), dt)
        e0 = scheme.energy(scheme.initial_state(f.f))
        state = solve_forward(f, speed, 5.0, pml_profile(grid), dt=dt)
        self.assertLessEqual(scheme.energy(state), 1e-3 * e0)


@tag('slow')
class ConvergenceOrderTests(SimpleTestCase):
    def test_second_order_in_space_and_time(self):
        T = 0.5
        solutions = []
        for n in (129, 257, 513):
            grid = make_grid(2.0, n, 0.0)
            speed = sample_speed(PaperDefaultSpeedSpec(), grid)
            dt = 0.25 * grid.h
            f = gaussian_phantom(grid, sigma=0.18)
            state = solve_forward(f, speed, T, PmlProfile.closed(grid), dt=dt)
            stride = (n - 1) // 128
            solutions.append(state.u_curr[::stride, ::stride])
        coarse = np.linalg.norm(solutions[0] - solutions[1])
        fine = np.linalg.norm(solutions[1] - solutions[2])
        ratio = coarse / fine
        self.assertGreaterEqual(ratio, 3.2)
        self.assertLessEqual(ratio, 4.8)

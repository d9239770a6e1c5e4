from dataclasses import replace
import os
import unittest

import numpy as np
import scipy.sparse as sp

from stonet.errors import ConfigError, SolverError
from stonet.harness.acceptance import (
    check_bookkeeping,
    check_pressure_convergence,
    diffusion_profile_error,
    manufactured_pressure_error
)
from stonet.scenario import (
    DeterministicParams,
    PermeabilityField,
    boundary_pressure_profiles,
    generate_scenario,
    sample_scenario
)
from stonet.simulator.grid import Grid
from stonet.simulator.linalg import solve_general, solve_symmetric
from stonet.simulator.physics import darcy_velocity, density_of, dispersion_tensor
from stonet.simulator.pressure import solve_pressure
from stonet.simulator.run import SolverConfig, run_simulation
from stonet.simulator.store import read_snapshots, write_snapshots
from stonet.simulator.transport import TransportBoundary, source_boundary, step_transport

from .test_configs import TMP_TEST_DIR

SLOW = bool(os.environ.get('STONET_SLOW'))


def uniform_field(grid: Grid, k: float = 5.7e-11) -> PermeabilityField:
    n = grid.n_quad
    return PermeabilityField(kxx=np.full(n, k), kyy=np.full(n, k), kxy=np.zeros(n))


class TestGrid(unittest.TestCase):
    def test_default_counts(self):
        grid = Grid.from_spec('70x50')
        self.assertEqual((grid.n_elements, grid.n_nodes, grid.n_quad), (3500, 3621, 14000))
        self.assertAlmostEqual(grid.dx, 0.01)
        self.assertAlmostEqual(grid.dy, 0.01)

    def test_bad_spec(self):
        with self.assertRaises(ConfigError):
            Grid.from_spec('70-50')

    def test_quadrature_integrates_area(self):
        grid = Grid(7, 5)
        self.assertAlmostEqual(grid.integrate(np.ones(grid.n_quad)), 0.35, places=14)

    def test_gradient_of_linear_field(self):
        grid = Grid(7, 5)
        nodal = 3.0 * grid.nodes[:, 0] - 2.0 * grid.nodes[:, 1]
        np.testing.assert_allclose(grid.gradient_at_quad(nodal),
                                   np.tile([3.0, -2.0], (grid.n_quad, 1)), atol=1e-12)

    def test_quad_to_node_preserves_constants(self):
        grid = Grid(7, 5)
        np.testing.assert_allclose(grid.quad_to_node @ np.full(grid.n_quad, 2.5), 2.5)


class TestPhysics(unittest.TestCase):
    def setUp(self):
        self.det = DeterministicParams()

    def test_density(self):
        self.assertAlmostEqual(density_of(0.0, self.det), 998.2)
        self.assertAlmostEqual(density_of(1.0, self.det), 1002.0)
        self.assertAlmostEqual(density_of(0.5, self.det), 1000.1)

    def test_density_clamps(self):
        self.assertEqual(density_of(-0.2, self.det), density_of(0.0, self.det))
        self.assertEqual(density_of(1.3, self.det), density_of(1.0, self.det))

    def test_hydrostatic_velocity(self):
        rho = 1000.0
        v = darcy_velocity([0.0, rho * self.det.g], rho, 5.7e-11 * np.eye(2), self.det)
        np.testing.assert_allclose(v, 0.0, atol=1e-20)

    def test_isotropic_velocity(self):
        rho = self.det.rho0
        v = darcy_velocity([-20.0 / 0.7, rho * self.det.g], rho, 5.7e-11 * np.eye(2), self.det)
        self.assertAlmostEqual(v[0], 1.625e-6, delta=1e-9)
        self.assertAlmostEqual(v[1], 0.0, delta=1e-18)

    def test_anisotropic_velocity(self):
        rho = self.det.rho0
        k = np.array([[2e-11, 1e-12], [1e-12, 1e-11]])
        v = darcy_velocity([-10.0, rho * self.det.g], rho, k, self.det)
        np.testing.assert_allclose(v, [1.996e-7, 9.98e-9], rtol=1e-3)

    def test_dispersion_at_rest(self):
        np.testing.assert_allclose(dispersion_tensor([0.0, 0.0], self.det),
                                   6.118e-10 * np.eye(2), rtol=1e-12)

    def test_dispersion_along_flow(self):
        d = dispersion_tensor([1e-6, 0.0], self.det)
        self.assertAlmostEqual(d[0, 0], 1.6118e-9, delta=1e-21)
        self.assertAlmostEqual(d[1, 1], 8.118e-10, delta=1e-21)
        self.assertEqual(d[0, 1], 0.0)

    def test_equal_dispersivities_isotropic(self):
        det = replace(self.det, alpha_L=5e-4, alpha_T=5e-4)
        d = dispersion_tensor([3e-7, -4e-7], det)
        self.assertAlmostEqual(d[0, 1], 0.0, delta=1e-24)
        self.assertAlmostEqual(d[0, 0], d[1, 1], delta=1e-24)


class TestLinearSolvers(unittest.TestCase):
    def test_symmetric_solve(self):
        n = 50
        matrix = sp.diags([-np.ones(n - 1), 2.5 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]).tocsr()
        rhs = np.arange(n, dtype=float)
        x, residual, _ = solve_symmetric(matrix, rhs, 1e-10)
        self.assertLessEqual(residual, 1e-10)
        np.testing.assert_allclose(matrix @ x, rhs, rtol=1e-8, atol=1e-8)

    def test_general_solve(self):
        n = 50
        matrix = sp.diags([-1.3 * np.ones(n - 1), 3.0 * np.ones(n), -0.2 * np.ones(n - 1)],
                          [-1, 0, 1]).tocsr()
        rhs = np.ones(n)
        x, residual, _ = solve_general(matrix, rhs, 1e-12)
        self.assertLessEqual(residual, 1e-10)
        np.testing.assert_allclose(matrix @ x, rhs, rtol=1e-8)

    def test_solver_error_carries_history(self):
        error = SolverError('did not converge', [1e-2, 1e-3], step=4)
        self.assertEqual(error.step, 4)
        self.assertIn('step 4', str(error))
        self.assertEqual(error.residuals, [1e-2, 1e-3])


class TestPressure(unittest.TestCase):
    def setUp(self):
        self.det = DeterministicParams()
        self.grid = Grid(35, 25)

    def test_hydrostatic_on_random_field(self):
        scenario = generate_scenario(2, 0, self.grid, det=self.det)
        params = replace(scenario.params, p_right_offset=scenario.params.p_left_offset)
        bc = boundary_pressure_profiles(params, self.det)
        solution = solve_pressure(np.zeros(self.grid.n_nodes), scenario.permeability, bc,
                                  self.grid, self.det)
        self.assertLess(np.max(np.abs(solution.v)), 1e-12)
        expected = params.p_left_offset + self.det.hydrostatic_gradient * self.grid.nodes[:, 1]
        np.testing.assert_allclose(solution.p, expected, rtol=1e-12)

    def test_uniform_drive(self):
        params = replace(sample_scenario(0, 0), p_right_offset=4976.0)
        bc = boundary_pressure_profiles(params, self.det)
        solution = solve_pressure(np.zeros(self.grid.n_nodes), uniform_field(self.grid), bc,
                                  self.grid, self.det)
        np.testing.assert_allclose(solution.v[:, 0], 1.625e-6, atol=1e-9)
        np.testing.assert_allclose(solution.v[:, 1], 0.0, atol=1e-12)
        self.assertLessEqual(solution.residual, 1e-10)

    def test_manufactured_error_decreases(self):
        coarse = manufactured_pressure_error(Grid(14, 10))
        fine = manufactured_pressure_error(Grid(28, 20))
        self.assertGreater(coarse / fine, 3.0)

    @unittest.skipUnless(SLOW, 'set STONET_SLOW=1 for the three-level convergence study')
    def test_convergence_order(self):
        result = check_pressure_convergence()
        self.assertTrue(result.passed, result.detail)


class TestTransport(unittest.TestCase):
    def setUp(self):
        self.det = DeterministicParams()
        self.grid = Grid(14, 10)

    def test_constant_solution(self):
        grid = self.grid
        left = grid.boundary_nodes('left')
        boundary = TransportBoundary(nodes=left, values=np.ones(len(left)))
        v = np.tile([1e-6, 0.0], (grid.n_quad, 1))
        rho = np.full(grid.n_quad, self.det.rho_s)
        step = step_transport(np.ones(grid.n_nodes), v, rho, grid, self.det, 1200.0,
                              boundary=boundary)
        np.testing.assert_allclose(step.c, 1.0, atol=1e-10)

    def test_source_band(self):
        boundary = source_boundary(Grid(70, 50), (0.20, 0.30))
        self.assertEqual(int(boundary.values.sum()), 11)

    def test_solute_balance(self):
        grid = self.grid
        params = replace(sample_scenario(1, 0), p_right_offset=4976.0)
        bc = boundary_pressure_profiles(params, self.det)
        flow = solve_pressure(np.zeros(grid.n_nodes), uniform_field(grid), bc, grid, self.det)
        boundary = source_boundary(grid, (0.20, 0.30))
        c = np.zeros(grid.n_nodes)
        for _ in range(5):
            step = step_transport(c, flow.v, flow.rho, grid, self.det, 1200.0, boundary=boundary)
            self.assertLessEqual(step.balance.relative_error, 1e-8)
            c = step.c

    def test_rejects_nonpositive_dt(self):
        grid = self.grid
        with self.assertRaises(ValueError):
            step_transport(np.zeros(grid.n_nodes), np.zeros((grid.n_quad, 2)),
                           np.full(grid.n_quad, 998.2), grid, self.det, 0.0)

    @unittest.skipUnless(SLOW, 'set STONET_SLOW=1 for the diffusion profile oracle')
    def test_diffusion_profile(self):
        self.assertLessEqual(diffusion_profile_error(), 0.02)


class TestSolverConfig(unittest.TestCase):
    def test_bookkeeping(self):
        result = check_bookkeeping()
        self.assertTrue(result.passed, result.detail)

    def test_rejects_fractional_steps(self):
        with self.assertRaises(ConfigError):
            SolverConfig.from_dict({'dt': 1000.0, 't_end': 129500.0})

    def test_rejects_coupling_iterations(self):
        with self.assertRaises(ConfigError):
            SolverConfig.from_dict({'coupling_iterations': 6})


class TestRunSimulation(unittest.TestCase):
    def setUp(self):
        self.grid = Grid(14, 10)
        self.config = SolverConfig(t_end=28800.0)
        self.scenario = generate_scenario(0, 3, self.grid)

    def test_snapshots(self):
        series = run_simulation(self.scenario, self.grid, self.config)
        np.testing.assert_array_equal(series.times_h, [0.0, 4.0, 8.0])
        self.assertEqual(series.c.shape, (3, self.grid.n_nodes))
        self.assertEqual(series.v.shape, (3, self.grid.n_quad, 2))
        np.testing.assert_array_equal(series.c[0], 0.0)
        self.assertEqual(series.diagnostics['n_steps'], 24)
        self.assertLessEqual(max(series.diagnostics['pressure_residuals']), 1e-10)
        self.assertGreater(series.c[-1].max(), 0.0)

    def test_deterministic(self):
        a = run_simulation(self.scenario, self.grid, self.config)
        b = run_simulation(self.scenario, self.grid, self.config)
        np.testing.assert_array_equal(a.c, b.c)
        np.testing.assert_array_equal(a.p, b.p)

    def test_coupling_iterations(self):
        single = run_simulation(self.scenario, self.grid, self.config)
        self.assertNotIn('coupling_changes', single.diagnostics)
        config = replace(self.config, coupling_iterations=4, coupling_tol=1e-10)
        coupled = run_simulation(self.scenario, self.grid, config)

        changes = coupled.diagnostics['coupling_changes']
        self.assertEqual(len(changes), 24)
        for step_changes in changes:
            self.assertTrue(1 <= len(step_changes) <= 3)
            # each extra pass corrects less than the one before
            self.assertTrue(all(b <= a for a, b in zip(step_changes, step_changes[1:])), step_changes)
            self.assertLess(step_changes[-1], 1e-6)
        self.assertLessEqual(max(coupled.diagnostics['pressure_residuals']), 1e-10)
        self.assertLessEqual(max(coupled.diagnostics['balance_errors']), 1e-8)
        self.assertLess(np.max(np.abs(coupled.c - single.c)), 1e-2)
        np.testing.assert_array_equal(coupled.c[0], single.c[0])

    def test_store_roundtrip(self):
        series = run_simulation(self.scenario, self.grid, self.config)
        directory = TMP_TEST_DIR / 'simulator' / 'sim_000003'
        write_snapshots(directory, series, self.scenario, self.grid, self.config,
                        DeterministicParams())
        self.assertTrue((directory / 'c_t4.bin').exists())
        snap = read_snapshots(directory)
        np.testing.assert_array_equal(snap.series.c, series.c)
        np.testing.assert_array_equal(snap.series.v, series.v)
        np.testing.assert_array_equal(snap.permeability.as_array(),
                                      self.scenario.permeability.as_array())
        self.assertAlmostEqual(snap.delta_p, self.scenario.params.delta_p)

    @unittest.skipUnless(SLOW, 'set STONET_SLOW=1 for full-length simulations')
    def test_overshoot_bound(self):
        grid = Grid(70, 50)
        series = run_simulation(generate_scenario(0, 0, grid), grid)
        self.assertEqual(len(series), 10)
        self.assertGreaterEqual(series.c.min(), -1e-3)
        self.assertLessEqual(series.c.max(), 1.0 + 1e-3)

    @unittest.skipUnless(SLOW, 'set STONET_SLOW=1 for full-length simulations')
    def test_dense_plume_sinks(self):
        grid = Grid(35, 25)
        for seed in range(5):
            scenario = generate_scenario(seed, 0, grid)
            scenario = replace(scenario, params=replace(scenario.params,
                                                        p_right_offset=scenario.params.p_left_offset))
            series = run_simulation(scenario, grid)
            y = grid.nodes[:, 1]
            depth = [np.sum(c * y) / np.sum(c) for c in series.c[1:]]
            self.assertTrue(np.all(np.diff(depth) >= -1e-9), depth)


if __name__ == '__main__':
    unittest.main()

""" Tests for the monotone grid solver """

import dataclasses
import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from gsde import expr, pde
from gsde.dynamics import SdeModel
from gsde.geometry import Ball, Box, Interval
from gsde.montecarlo import LOWER, UPPER
from gsde.pde import GridConfig
from gsde.uncertainty import UncertaintySet
from gsde.utils import DiagonalDominanceError, SolverError, SolverPreconditionError


def brownian(n=1):
    zero = expr.parse('0', n)
    one = expr.parse('1', n)
    return SdeModel([zero] * n, [[one if i == j else zero for j in range(n)] for i in range(n)])


class TestOneDimensional(unittest.TestCase):

    def setUp(self):
        self.q = Interval(0.0, 1.0)
        self.f = expr.parse('-1', 1)
        self.phi = expr.parse('0', 1)

    def test_classical_quadratic_is_exact(self):
        theta = UncertaintySet.singleton(1.0, 0.0)
        solution = pde.solve_dirichlet(brownian(), theta, self.q, self.f, self.phi, GridConfig(nodes=101))
        grid = solution.grid
        x = grid.coordinates[grid.interior, 0]
        self.assertEqual(x.size, 99)
        assert_allclose(solution.interior_values(), x * (1 - x), atol=1e-8)
        self.assertTrue(solution.converged)
        self.assertLessEqual(solution.residual, 1e-10)

    def test_boundary_nodes_carry_phi(self):
        theta = UncertaintySet.singleton(1.0, 0.0)
        phi = expr.parse('1 + x1', 1)
        solution = pde.solve_dirichlet(brownian(), theta, self.q, None, phi, GridConfig(nodes=11))
        boundary = solution.grid.mask == pde.BOUNDARY
        assert_array_equal(solution.values[boundary], phi(solution.grid.projection[boundary]))
        assert_allclose(solution.grid.projection[boundary, 0], [0.0, 1.0])
        # harmonic data is linear
        assert_allclose(solution.interior_values(), 1 + solution.grid.coordinates[solution.grid.interior, 0],
                        atol=1e-10)

    def test_g_oracle_modes(self):
        theta = UncertaintySet.diag_box(1.0, 2.0, 0.0, d=1)
        upper = pde.solve_dirichlet(brownian(), theta, self.q, self.f, self.phi, GridConfig(nodes=101), UPPER)
        lower = pde.solve_dirichlet(brownian(), theta, self.q, self.f, self.phi, GridConfig(nodes=101), LOWER)
        assert_allclose(upper(np.array([0.5])), 0.25, atol=1e-8)
        assert_allclose(lower(np.array([0.5])), 0.0625, atol=1e-8)
        self.assertTrue((upper.policy_index == 0).all())
        self.assertTrue((lower.policy_index == 1).all())

    def test_drift_uncertainty_and_feedback(self):
        theta = UncertaintySet.diag_box(1.0, 1.0, 0.5, d=1)
        phi = expr.parse('x1', 1)
        solution = pde.solve_dirichlet(brownian(), theta, self.q, None, phi, GridConfig(nodes=101))
        oracle = (1 - math.exp(-0.5)) / (1 - math.exp(-1.0))
        self.assertLessEqual(abs(solution(np.array([0.5])) - oracle), 0.01)
        self.assertGreater(solution.iterations, 1)
        policy = pde.extract_policy(solution)
        assert_array_equal(policy.control_at([0.5]).mu, [0.5])
        self.assertEqual(len(policy.members()), 1)

    def test_first_order_convergence(self):
        theta = UncertaintySet.diag_box(1.0, 1.0, 0.5, d=1)
        phi = expr.parse('x1', 1)
        oracle = lambda x: (1 - np.exp(-x)) / (1 - math.exp(-1.0))
        errors = []
        for nodes in (51, 101, 201):
            solution = pde.solve_dirichlet(brownian(), theta, self.q, None, phi, GridConfig(nodes=nodes))
            x = solution.grid.coordinates[solution.grid.interior, 0]
            errors.append(np.abs(solution.interior_values() - oracle(x)).max())
        self.assertLess(errors[1], errors[0])
        self.assertLess(errors[2], errors[1])
        self.assertGreaterEqual(math.log(errors[0] / errors[2], 2) / 2, 0.95)

    def test_residual_recomputed(self):
        theta = UncertaintySet.diag_box(1.0, 2.0, 0.0, d=1)
        solution = pde.solve_dirichlet(brownian(), theta, self.q, self.f, self.phi, GridConfig(nodes=51))
        self.assertLessEqual(pde.residual(solution, brownian(), theta, self.f), 1e-9)

    def test_iteration_cap(self):
        theta = UncertaintySet.diag_box(1.0, 1.0, 0.5, d=1)
        self.assertRaises(SolverError, pde.solve_dirichlet, brownian(), theta, self.q, None, expr.parse('x1', 1),
                          GridConfig(nodes=21, max_iterations=1))

    def test_unconverged_policy(self):
        theta = UncertaintySet.singleton(1.0, 0.0)
        solution = pde.solve_dirichlet(brownian(), theta, self.q, self.f, self.phi, GridConfig(nodes=11))
        stale = dataclasses.replace(solution, converged=False)
        self.assertRaises(SolverError, pde.extract_policy, stale)

    def test_degenerate_set(self):
        theta = UncertaintySet.diag_box(0.0, 1.0, 0.0, d=1)
        self.assertRaises(SolverPreconditionError, pde.solve_dirichlet, brownian(), theta, self.q, self.f,
                          self.phi)

    def test_default_nodes(self):
        self.assertEqual(GridConfig().nodes_for(1), 101)
        self.assertEqual(GridConfig().nodes_for(2), 41)


class TestTwoDimensional(unittest.TestCase):

    def test_quadratic_on_square(self):
        theta = UncertaintySet.singleton(np.eye(2), [0.0, 0.0])
        u = expr.parse('(1 - x1^2 - x2^2) / 2', 2)
        q = Box([-1.0, -1.0], [1.0, 1.0])
        solution = pde.solve_dirichlet(brownian(2), theta, q, expr.parse('-1', 2), u, GridConfig(nodes=21))
        X = solution.grid.coordinates[solution.grid.interior]
        self.assertEqual(X.shape[0], 19 * 19)
        assert_allclose(solution.interior_values(), u(X), atol=1e-8)
        assert_allclose(solution(np.array([0.0, 0.0])), 0.5, atol=1e-8)

    def test_diagonal_dominance_violation(self):
        theta = UncertaintySet.vertex_list([(np.array([[1.0, 0.0], [2.0, 1.0]]), [0.0, 0.0])])
        q = Box([0.0, 0.0], [1.0, 1.0])
        with self.assertRaises(DiagonalDominanceError) as context:
            pde.solve_dirichlet(brownian(2), theta, q, None, expr.parse('0', 2), GridConfig(nodes=11))
        self.assertEqual(len(context.exception.coordinates), 2)

    def test_three_dimensions_rejected(self):
        theta = UncertaintySet.singleton(np.eye(3), [0.0, 0.0, 0.0])
        q = Box([0.0] * 3, [1.0] * 3)
        self.assertRaises(SolverPreconditionError, pde.solve_dirichlet, brownian(3), theta, q, None,
                          expr.parse('0', 3), GridConfig(nodes=5))

class TestComparison(unittest.TestCase):

    def solve(self, theta, q, f, phi, mode, nodes):
        n = q.dim
        return pde.solve_dirichlet(brownian(n), theta, q, expr.parse(f, n), expr.parse(phi, n),
                                   GridConfig(nodes=nodes), mode)

    def test_ordered_data_gives_ordered_values(self):
        cases = [(UncertaintySet.diag_box(1.0, 2.0, 0.0, d=1), Interval(0.0, 1.0), 51, 1e-10),
                 (UncertaintySet.diag_box(1.0, 2.0, 0.0, d=2), Box([0.0, 0.0], [1.0, 1.0]), 21, 1e-7)]
        for theta, q, nodes, tol in cases:
            for mode in (UPPER, LOWER):
                low = self.solve(theta, q, '-1', '0', mode, nodes)
                higher_phi = self.solve(theta, q, '-1', '0.5 + x1^2', mode, nodes)
                lower_f = self.solve(theta, q, '-1 - x1^2', '0', mode, nodes)
                self.assertTrue((higher_phi.values >= low.values - tol).all())
                self.assertTrue((lower_f.values >= low.values - tol).all())

    def test_constant_shift(self):
        theta = UncertaintySet.diag_box(1.0, 2.0, 0.0, d=1)
        q = Interval(0.0, 1.0)
        base = self.solve(theta, q, 'sin(6 * x1)', 'x1', UPPER, 51)
        shifted = self.solve(theta, q, 'sin(6 * x1)', 'x1 + 2', UPPER, 51)
        assert_allclose(shifted.values, base.values + 2, atol=1e-9)

    def test_upper_dominates_lower(self):
        cases = [(UncertaintySet.diag_box(1.0, 2.0, 0.0, d=1), Interval(0.0, 1.0), 'sin(6 * x1)', 51, 1e-10),
                 (UncertaintySet.diag_box(1.0, 2.0, 0.0, d=2), Box([0.0, 0.0], [1.0, 1.0]), 'sin(3 * x1) * x2 - 0.5',
                  21, 1e-7)]
        for theta, q, f, nodes, tol in cases:
            upper = self.solve(theta, q, f, '0', UPPER, nodes)
            lower = self.solve(theta, q, f, '0', LOWER, nodes)
            self.assertTrue((upper.values >= lower.values - tol).all())
            self.assertGreater((upper.values - lower.values).max(), 1e-3)


class TestBall(unittest.TestCase):

    def test_exit_time_refines(self):
        theta = UncertaintySet.singleton(np.eye(2), [0.0, 0.0])
        q = Ball([0.0, 0.0], 1.0)
        oracle = expr.parse('(1 - x1^2 - x2^2) / 2', 2)
        errors = []
        for nodes in (21, 41):
            solution = pde.solve_dirichlet(brownian(2), theta, q, expr.parse('-1', 2), expr.parse('0', 2),
                                           GridConfig(nodes=nodes))
            X = solution.grid.coordinates[solution.grid.interior]
            errors.append(np.abs(solution.interior_values() - oracle(X)).max())
        self.assertLess(errors[0], 0.03)
        self.assertLess(errors[1], 0.02)
        self.assertLess(errors[1], errors[0])


if __name__ == '__main__':
    unittest.main()

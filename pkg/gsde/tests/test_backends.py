""" Test netcdf4 backend """

import os

import numpy as np
from numpy.testing import assert_array_equal, assert_allclose

from gsde import expr, pde
from gsde.backends import netcdf4
from gsde.dynamics import SdeModel
from gsde.geometry import Interval
from gsde.tests.utils import FileIOTestCase, get_fn
from gsde.uncertainty import UncertaintySet


class TestNetcdf4(FileIOTestCase):

    def setUp(self):
        super(TestNetcdf4, self).setUp()
        e = lambda text: expr.parse(text, 1)
        theta = UncertaintySet.diag_box(1.0, 2.0, 0.0, d=1)
        self.solution = pde.solve_dirichlet(SdeModel([e('0')], [[e('1')]]), theta, Interval(0.0, 1.0), e('-1'),
                                            e('0'), pde.GridConfig(nodes=21), 'lower')

    def test_save_and_load(self):
        fn = get_fn('solution.nc', written=True)
        netcdf4.save_solution(fn, self.solution, {'seed': 3})
        self.assertTrue(os.path.exists(fn))
        data = netcdf4.load_solution(fn)
        assert_allclose(data['values'], self.solution.values)
        assert_array_equal(data['mask'], self.solution.grid.mask)
        assert_array_equal(data['policy_index'], self.solution.policy_index)
        assert_array_equal(data['gamma'][:, 0, 0], [1.0, 2.0])
        self.assertEqual(data['mode'], 'lower')
        self.assertEqual(data['shape'], self.solution.grid.shape)
        self.assertTrue(data['converged'])
        self.assertEqual(data['config'], {'seed': 3})

    def test_overwrite_without_config(self):
        fn = get_fn('solution.nc', written=True)
        netcdf4.save_solution(fn, self.solution, {'seed': 3})
        netcdf4.save_solution(fn, self.solution)
        data = netcdf4.load_solution(fn)
        self.assertIsNone(data['config'])
        self.assertEqual(data['coordinates'].shape, (self.solution.grid.size, 1))

""" Tests for run configuration validation and builders """

import copy
import unittest

from gsde import config as cfg
from gsde.config import RunConfig
from gsde.dynamics import SdeModel
from gsde.geometry import Interval
from gsde.montecarlo import McConfig
from gsde.tests.utils import get_fn, load_reference
from gsde.utils import ConfigError


def classical():
    return load_reference('classical.json')


class TestNormalization(unittest.TestCase):

    def test_defaults_filled(self):
        raw = classical()
        del raw['mc']
        config = RunConfig.from_dict(raw)
        self.assertEqual(config['mc']['paths'], 20000)
        self.assertEqual(config['mc']['refinement'], 'auto')
        self.assertIsNone(config['mc']['t_max'])
        self.assertEqual(config['mc']['points'], [[0.5]])
        self.assertEqual(config['pde']['tolerance'], 1e-10)
        self.assertEqual(config['verify']['tolerances']['min_order'], 0.95)
        self.assertEqual(config['verify']['boundary_points'], [[0.0]])
        self.assertEqual(config['verify']['ito']['dt_list'], [1e-2, 1e-3, 1e-4])
        self.assertEqual(config.dim, 1)

    def test_normalized_form_is_stable(self):
        first = RunConfig.from_dict(classical()).to_dict()
        second = RunConfig.from_dict(copy.deepcopy(first)).to_dict()
        self.assertEqual(first, second)

    def test_numbers_as_expressions(self):
        raw = classical()
        raw['model']['b'] = [-0.5]
        raw['functional']['f'] = 2
        config = RunConfig.from_dict(raw)
        self.assertEqual(config['model']['b'], ['-0.5'])
        self.assertEqual(config['functional']['f'], '2.0')

    def test_seed_override(self):
        self.assertEqual(RunConfig.from_dict(classical(), seed=42).seed, 42)
        self.assertEqual(RunConfig.from_dict(classical()).seed, 1)

    def test_yaml(self):
        config = RunConfig.load(get_fn('classical.yaml'))
        self.assertEqual(config['mc']['paths'], 2000)
        self.assertEqual(config['domain'], {'kind': 'interval', 'a': 0.0, 'b': 1.0})


class TestErrors(unittest.TestCase):

    def assertField(self, raw, field):
        with self.assertRaises(ConfigError) as context:
            RunConfig.from_dict(raw)
        self.assertEqual(context.exception.field, field)
        self.assertIn(field, str(context.exception))

    def test_variable_out_of_range(self):
        raw = classical()
        raw['model']['b'] = ['x2']
        self.assertField(raw, 'model.b[0]')

    def test_reference_bad_dimension(self):
        self.assertRaises(ConfigError, RunConfig.load, get_fn('bad_dimension.json'))

    def test_unknown_field(self):
        raw = classical()
        raw['mc']['pathz'] = 10
        self.assertField(raw, 'mc.pathz')

    def test_sigma_shape(self):
        raw = classical()
        raw['model']['sigma'] = [['1'], ['1']]
        self.assertField(raw, 'model.sigma')

    def test_theta_dimension(self):
        raw = classical()
        raw['theta']['gamma'] = [[1.0, 0.0], [0.0, 1.0]]
        self.assertField(raw, 'theta.gamma')

    def test_empty_domain(self):
        raw = classical()
        raw['domain'] = {'kind': 'interval', 'a': 1.0, 'b': 0.0}
        self.assertField(raw, 'domain')

    def test_interval_needs_one_dimension(self):
        raw = classical()
        raw['model'] = {'b': ['0', '0'], 'sigma': [['1', '0'], ['0', '1']]}
        raw['theta'] = {'kind': 'singleton', 'gamma': [[1.0, 0.0], [0.0, 1.0]]}
        self.assertField(raw, 'domain.kind')

    def test_bad_numbers(self):
        raw = classical()
        raw['mc']['paths'] = 1.5
        self.assertField(raw, 'mc.paths')
        raw = classical()
        raw['mc']['dt'] = -0.1
        self.assertField(raw, 'mc.dt')

    def test_unknown_check(self):
        raw = classical()
        raw['verify']['checks'] = ['gmartingale', 'everything']
        self.assertField(raw, 'verify.checks[1]')

    def test_order_needs_oracle(self):
        raw = classical()
        del raw['verify']['oracle']
        self.assertField(raw, 'verify.oracle')

    def test_inner_domain_must_contain_point(self):
        raw = classical()
        raw['verify']['checks'] = ['dpp']
        raw['verify']['inner_eps'] = 0.6
        self.assertField(raw, 'verify.inner_eps')

    def test_missing_file(self):
        self.assertRaises(ConfigError, RunConfig.load, get_fn('no_such_config.json'))


class TestBuilders(unittest.TestCase):

    def setUp(self):
        self.config = RunConfig.from_dict(classical())

    def test_objects(self):
        self.assertIsInstance(cfg.build_model(self.config['model']), SdeModel)
        self.assertIsInstance(cfg.build_domain(self.config['domain']), Interval)
        theta = cfg.build_theta(self.config['theta'])
        self.assertEqual(len(theta.vertices), 1)
        functional = cfg.build_functional(self.config['functional'], 1)
        self.assertEqual(functional.mode, 'upper')

    def test_settings(self):
        mc = cfg.mc_settings(self.config['mc'], paths=10)
        self.assertIsInstance(mc, McConfig)
        self.assertEqual(mc.paths, 10)
        self.assertEqual(mc.scheduler, 'sync')
        self.assertEqual(cfg.grid_settings(self.config['pde'], nodes=11).nodes, 11)


if __name__ == '__main__':
    unittest.main()

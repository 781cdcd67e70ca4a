""" End-to-end tests of the command line """

import json
import os

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose

from gsde import cli
from gsde.config import CHECKS
from gsde.backends.netcdf4 import load_solution
from gsde.tests.utils import FileIOTestCase, get_fn


class TestCommands(FileIOTestCase):

    def run_command(self, command, config, *extra):
        return cli.main([command, '--config', get_fn(config), '--out', self.get_writes_dir()] + list(extra))

    def written(self, name):
        return get_fn(name, written=True)

    def load_json(self, name):
        with open(self.written(name)) as handle:
            return json.load(handle)

    def test_estimate_classical(self):
        self.assertEqual(self.run_command('estimate', 'classical.json'), cli.EXIT_OK)
        table = pd.read_csv(self.written('estimate.csv'), dtype={'x': str})
        self.assertEqual(list(table.columns), cli.ESTIMATE_COLUMNS)
        self.assertEqual(table['x'][0], '0.5')
        self.assertLessEqual(abs(table['value'][0] - 0.25), 3 * table['std_error'][0] + 0.01)
        self.assertEqual(table['n_paths'][0], 4000)
        run = self.load_json('run.json')
        self.assertEqual(run['command'], 'estimate')
        self.assertEqual(run['seed'], 1)
        self.assertEqual(run['config']['mc']['paths'], 4000)

    def test_estimate_is_reproducible(self):
        self.run_command('estimate', 'classical.json', '--seed', '9')
        with open(self.written('estimate.csv')) as handle:
            first = handle.read()
        self.assertEqual(self.load_json('run.json')['seed'], 9)
        self.run_command('estimate', 'classical.json', '--seed', '9')
        with open(self.written('estimate.csv')) as handle:
            self.assertEqual(handle.read(), first)

    def test_estimate_with_feedback_policy(self):
        self.assertEqual(self.run_command('estimate', 'drift.json'), cli.EXIT_OK)
        table = pd.read_csv(self.written('estimate.csv'))
        oracle = (1 - np.exp(-0.5)) / (1 - np.exp(-1.0))
        self.assertLessEqual(abs(table['value'][0] - oracle), 3 * table['std_error'][0] + 0.01)
        policies = [p['policy'] for p in self.load_json('run.json')['result']['estimates'][0]['per_policy']]
        self.assertEqual(policies, ['vertex-0', 'vertex-1', 'pde-feedback'])

    def test_pde_classical(self):
        self.assertEqual(self.run_command('pde', 'classical.json'), cli.EXIT_OK)
        data = load_solution(self.written('solution.nc'))
        self.assertTrue(data['converged'])
        result = self.load_json('run.json')['result']
        self.assertLessEqual(result['max_error'], 1e-8)
        assert_allclose(result['points'][0]['value'], 0.25, atol=1e-8)
        table = pd.read_csv(self.written('pde.csv'))
        self.assertEqual(len(table), 101)
        self.assertEqual((table['node'] == 'boundary').sum(), 2)

    def test_pde_ball(self):
        self.assertEqual(self.run_command('pde', 'ball_2d.json'), cli.EXIT_OK)
        result = self.load_json('run.json')['result']
        self.assertLess(result['max_error'], 0.02)
        self.assertEqual(len(result['points']), 5)

    def test_verify_suite(self):
        self.assertEqual(self.run_command('verify', 'classical.json'), cli.EXIT_OK)
        records = self.load_json('verify.json')
        self.assertEqual(sorted(set(r['check'].split('[')[0] for r in records)),
                         ['gmartingale', 'integral_bound', 'integral_bound_closed_form', 'lyapunov.tau',
                          'lyapunov.tau_sq', 'pde_order'])
        for record in records:
            self.assertEqual(sorted(record), ['check', 'estimate', 'pass', 'target', 'tolerance'])
            self.assertTrue(record['pass'], msg=record['check'])
        gmartingale = next(r for r in records if r['check'] == 'gmartingale[0]')
        self.assertEqual(gmartingale['estimate'], gmartingale['target'])

    def test_verify_full_suite_passes(self):
        self.assertEqual(self.run_command('verify', 'full_suite.json'), cli.EXIT_OK)
        records = self.load_json('verify.json')
        names = set(r['check'].split('[')[0].split('.')[0] for r in records)
        self.assertEqual(names, set(CHECKS) | {'integral_bound_closed_form'})
        for record in records:
            self.assertTrue(record['pass'], msg=record['check'])
        ladders = pd.read_csv(self.written('ladders.csv'))
        ito = ladders[ladders['check'] == 'ito_residual']
        assert_allclose(ito['parameter'].astype(float), [0.01, 0.001, 0.0001])
        self.assertTrue((np.diff(ito['value']) < 0).all())

    def test_verify_coarse_time_step_fails(self):
        self.assertEqual(self.run_command('verify', 'coarse_suite.json'), cli.EXIT_VERIFY)
        records = self.load_json('verify.json')
        names = set(r['check'].split('[')[0].split('.')[0] for r in records)
        for check in CHECKS:
            self.assertIn(check, names)
        gap = next(r for r in records if r['check'] == 'exit_time_gap')
        self.assertFalse(gap['pass'])
        ladders = pd.read_csv(self.written('ladders.csv'))
        assert_allclose(ladders[ladders['check'] == 'exit_time_gap']['parameter'].astype(float), [0.1, 0.05])

    def test_verify_is_byte_identical(self):
        outputs = []
        for _ in range(2):
            self.run_command('verify', 'classical.json', '--seed', '4')
            contents = []
            for name in ('verify.json', 'ladders.csv', 'run.json'):
                with open(self.written(name), 'rb') as handle:
                    contents.append(handle.read())
            outputs.append(contents)
        self.assertEqual(outputs[0], outputs[1])

    def test_verify_ball_against_grid(self):
        self.assertEqual(self.run_command('verify', 'ball_2d.json'), cli.EXIT_OK)
        records = self.load_json('verify.json')
        self.assertEqual([r['check'] for r in records], ['mc_pde[{}]'.format(i) for i in range(5)])
        for record in records:
            self.assertTrue(record['pass'], msg=record['check'])
            self.assertLessEqual(abs(record['estimate'] - record['target']), 0.03)

    def test_bounds(self):
        self.assertEqual(self.run_command('bounds', 'classical.json'), cli.EXIT_OK)
        report = self.load_json('bounds.json')
        assert_allclose(report['C_tau'], np.exp(2.0))
        assert_allclose(report['C_tau_sq'], 54.598, rtol=1e-4)
        self.assertLessEqual(report['empirical']['tau'], report['C_tau'])
        self.assertIsNotNone(report['boundary'])

    def test_config_errors(self):
        self.assertEqual(self.run_command('estimate', 'bad_dimension.json'), cli.EXIT_CONFIG)
        self.assertEqual(self.run_command('verify', 'empty_checks.json'), cli.EXIT_CONFIG)
        self.assertEqual(self.run_command('bounds', 'degenerate_sigma.json'), cli.EXIT_CONFIG)
        self.assertEqual(self.run_command('estimate', 'no_such_config.json'), cli.EXIT_CONFIG)

    def test_diagonal_dominance(self):
        self.assertEqual(self.run_command('pde', 'diagonal_dominance.json'), cli.EXIT_PRECONDITION)
        self.assertFalse(os.path.exists(self.written('solution.nc')))

    def test_unwritable_output(self):
        blocker = self.written('blocker')
        with open(blocker, 'w') as handle:
            handle.write('not a directory\n')
        code = cli.main(['bounds', '--config', get_fn('classical.json'), '--out', os.path.join(blocker, 'out')])
        self.assertEqual(code, cli.EXIT_CONFIG)

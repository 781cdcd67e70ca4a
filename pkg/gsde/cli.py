"""
Command line entry point

    gsde <estimate|pde|verify|bounds> --config <path> [--out <dir>] [--seed <int>] [--verbose]

Every command writes run.json (command, normalized config, seed and results) next to its own outputs:
estimate.csv, solution.nc and pde.csv, verify.json and ladders.csv, or bounds.json.

Exit codes: 0 ok, 2 configuration or output error, 3 numerical failure, 4 solver precondition failure, 5 failed
check.
"""

__author__ = 'gsde developers'

import argparse
import json
import os
import sys

import numpy as np
import pandas as pd

from gsde import config as cfg
from gsde import expr, montecarlo, pde, utils
from gsde.backends.netcdf4 import save_solution
from gsde.dynamics import NoiseStream, simulate_batch, ito_residual
from gsde.utils import (ConfigError, DegenerateSetError, DomainError, NumericalError, SolverError,
                        SolverPreconditionError, logger)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PRECONDITION = 4
EXIT_VERIFY = 5

ESTIMATE_COLUMNS = ['x', 'value', 'std_error', 'n_paths', 'argmax_policy', 'censored_fraction']


class Problem(object):
    """Runtime objects built from a RunConfig."""

    def __init__(self, config, paths=None):
        self.config = config
        self.model = cfg.build_model(config['model'])
        self.theta = cfg.build_theta(config['theta'])
        self.domain = cfg.build_domain(config['domain'])
        self.functional = cfg.build_functional(config['functional'], config.dim)
        self.mc = cfg.mc_settings(config['mc'], paths)
        self.grid = cfg.grid_settings(config['pde'])
        self._solution = None

    def solve(self, nodes=None, mode=None):
        grid = self.grid if nodes is None else cfg.grid_settings(self.config['pde'], nodes)
        return pde.solve_dirichlet(self.model, self.theta, self.domain, self.functional.f, self.functional.phi,
                                   grid, mode or self.functional.mode)

    @property
    def solution(self):
        if self._solution is None:
            self._solution = self.solve()
        return self._solution

    def policies(self, families=None):
        families = self.config['mc']['policies'] if families is None else families
        out = []
        if 'vertices' in families:
            out.extend(montecarlo.vertex_policies(self.theta))
        if 'pde' in families:
            out.append(pde.extract_policy(self.solution))
        return out


def _coordinates(x):
    return ';'.join(repr(float(c)) for c in np.atleast_1d(x))


def _write_json(path, data):
    with open(path, 'w') as handle:
        json.dump(data, handle, sort_keys=True, indent=2)
        handle.write('\n')


def _write_run(out_dir, command, config, result):
    _write_json(os.path.join(out_dir, 'run.json'), {'command': command, 'config': config.to_dict(),
                                                    'seed': config.seed, 'result': result})


def run_estimate(config, out_dir):
    """
    Family estimate at every mc point.

    Returns
    -------
    pandas.DataFrame with the estimate.csv columns
    """
    problem = Problem(config)
    policies = problem.policies()
    rows, estimates = [], []
    for x in config['mc']['points']:
        estimate = montecarlo.estimate_value(problem.model, problem.theta, problem.domain, problem.functional,
                                             policies, x, problem.mc)
        rows.append({'x': _coordinates(x), 'value': estimate.value, 'std_error': estimate.std_error,
                     'n_paths': estimate.n_paths, 'argmax_policy': estimate.argmax_policy,
                     'censored_fraction': estimate.censored_fraction})
        record = estimate.to_dict()
        record['x'] = list(x)
        estimates.append(record)
    table = pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)
    table.to_csv(os.path.join(out_dir, 'estimate.csv'), index=False)
    _write_run(out_dir, 'estimate', config, {'estimates': estimates})
    return table


def run_pde(config, out_dir):
    """
    Grid solve; writes solution.nc, pde.csv (nodes of the closed domain) and run.json.

    Returns
    -------
    dict report
    """
    problem = Problem(config)
    solution = problem.solution
    save_solution(os.path.join(out_dir, 'solution.nc'), solution, config.to_dict())
    grid = solution.grid
    labels = np.array([''] * grid.size, dtype=object)
    labels[grid.interior] = [c.label for c in solution.policy]
    keep = grid.mask != pde.EXTERIOR
    table = pd.DataFrame({'x': [_coordinates(x) for x in grid.coordinates[keep]],
                          'value': solution.values[keep],
                          'node': np.where(grid.mask[keep] == pde.INTERIOR, 'interior', 'boundary'),
                          'policy': labels[keep]}, columns=['x', 'value', 'node', 'policy'])
    table.to_csv(os.path.join(out_dir, 'pde.csv'), index=False)
    report = {'mode': solution.mode, 'residual': float(solution.residual), 'iterations': int(solution.iterations),
              'converged': bool(solution.converged),
              'points': [{'x': list(x), 'value': solution.interpolate(np.asarray(x))}
                         for x in config['verify']['points']],
              'max_error': None}
    if config['verify']['oracle'] is not None:
        oracle = expr.parse(config['verify']['oracle'], config.dim)
        X = grid.coordinates[grid.interior]
        report['max_error'] = float(np.max(np.abs(solution.interior_values() - oracle(X))))
    _write_run(out_dir, 'pde', config, report)
    if not solution.converged:
        raise SolverError('solution did not reach tolerance {}'.format(config['pde']['tolerance']))
    return report


def _record(check, target, estimate, tolerance, passed):
    return {'check': check, 'target': float(target), 'estimate': float(estimate), 'tolerance': float(tolerance),
            'pass': bool(passed)}


def _decreasing(values):
    return all(b < a for a, b in zip(values, values[1:]))


class Verifier(object):
    """Runs the configured checks, collecting records and refinement ladders."""

    def __init__(self, config):
        self.config = config
        self.settings = config['verify']
        self.problem = Problem(config, paths=self.settings['paths'])
        self.tol = self.settings['tolerances']
        self.ladders = []

    def run(self):
        records = []
        for check in self.settings['checks']:
            logger().info('running check {}'.format(check))
            records.extend(getattr(self, 'check_' + check)())
        return records

    def _ladder(self, check, pairs):
        for parameter, value in pairs:
            self.ladders.append({'check': check, 'parameter': parameter, 'value': value})

    @property
    def x0(self):
        return np.asarray(self.settings['points'][0])

    def check_gmartingale(self):
        p = self.problem
        out = []
        for i, case in enumerate(self.settings['gmartingale']):
            estimate, target = montecarlo.gmartingale_check(p.theta, case['A'], case['p'], case['t'], p.mc)
            tolerance = max(self.tol['se_multiple'] * estimate.std_error,
                            self.tol['gmartingale_relative'] * abs(target))
            out.append(_record('gmartingale[{}]'.format(i), target, estimate.value, tolerance,
                               abs(estimate.value - target) <= tolerance))
        return out

    def check_integral_bound(self):
        p = self.problem
        params = p.theta.ellipticity_params()
        out = []
        for T in self.settings['integral_T']:
            estimate = montecarlo.integral_bound_estimate(p.theta, T, p.mc)
            rhs = 2.0 * (params.sigma_high_sq + params.beta ** 2 * T) * T
            out.append(_record('integral_bound[T={!r}]'.format(T), rhs, estimate.value, 0.0, estimate.value <= rhs))
            vertex = next(v for v in p.theta.vertices if v.label == estimate.argmax_policy)
            closed = vertex.qv_density[0, 0] * T + vertex.mu[0] ** 2 * T ** 2
            tolerance = self.tol['se_multiple'] * estimate.std_error
            out.append(_record('integral_bound_closed_form[T={!r}]'.format(T), closed, estimate.value, tolerance,
                               abs(estimate.value - closed) <= tolerance))
        return out

    def check_lyapunov(self):
        p = self.problem
        bounds = montecarlo.lyapunov_bounds(p.model.estimate_bounds(p.domain), p.theta.ellipticity_params(),
                                            p.domain)
        tau, tau_sq = montecarlo.estimate_exit_moments(p.model, p.theta, p.domain, None, self.x0, p.mc)
        return [_record('lyapunov.tau', bounds.C_tau, tau.value, 0.0, tau.value <= bounds.C_tau),
                _record('lyapunov.tau_sq', bounds.C_tau_sq, tau_sq.value, 0.0, tau_sq.value <= bounds.C_tau_sq)]

    def _value_table(self, inner):
        p = self.problem
        if p.domain.dim <= 2:
            return p.solution.interpolate
        return montecarlo.value_table_from_mc(p.model, p.theta, p.domain, p.functional, None,
                                              inner.boundary_samples(32), p.mc)

    def check_dpp(self):
        p = self.problem
        inner = p.domain.erode(self.settings['inner_eps'])
        result = montecarlo.dpp_check(p.model, p.theta, p.domain, inner, p.functional, None, self.x0, p.mc,
                                      self._value_table(inner))
        tolerance = self.tol['se_multiple'] * result.std_error
        return [_record('dpp', 0.0, result.residual, tolerance, result.residual <= tolerance)]

    def check_exit_time_gap(self):
        p = self.problem
        dt_list = sorted(self.settings['dt_list'], reverse=True)
        gaps = montecarlo.exit_time_gap(p.model, p.theta, p.domain, self.x0, dt_list, p.mc)
        self._ladder('exit_time_gap', gaps)
        values = [g for _, g in gaps]
        tolerance = self.tol['exit_time_gap']
        return [_record('exit_time_gap', 0.0, values[-1], tolerance,
                        _decreasing(values) and values[-1] <= tolerance)]

    def check_boundary_exit_decay(self):
        p = self.problem
        dt_list = sorted(self.settings['dt_list'], reverse=True)
        out = []
        for i, x in enumerate(self.settings['boundary_points']):
            decay = montecarlo.boundary_exit_decay(p.model, p.theta, p.domain, x, dt_list, p.mc)
            name = 'boundary_exit_decay[{}]'.format(i)
            self._ladder(name, decay)
            values = [v for _, v in decay]
            tolerance = self.tol['boundary_exit_decay']
            out.append(_record(name, 0.0, values[-1], tolerance, _decreasing(values) and values[-1] <= tolerance))
        return out

    def check_continuity(self):
        p = self.problem
        table, modulus = montecarlo.continuity_modulus(p.model, p.theta, p.domain, self.settings['points'],
                                                       p.functional, None, p.mc)
        self._ladder('continuity_modulus', [('modulus', modulus)])
        deviation = float(table['deviation'].max())
        target = 0.0
        if self.settings['oracle'] is not None:
            oracle = expr.parse(self.settings['oracle'], self.config.dim)
            values = [oracle(np.asarray(x)) for x in self.settings['points']]
            target = max(abs(a - b) for a, b in zip(values, values[1:]))
        tolerance = self.tol['continuity']
        return [_record('continuity', target, deviation, tolerance, abs(deviation - target) <= tolerance)]

    def check_ito_residual(self):
        p = self.problem
        n = self.config.dim
        settings = self.settings['ito']
        h_test = expr.parse(settings['h'], n)
        grad = [expr.parse(g, n) for g in settings['grad']]
        hess = [[expr.parse(g, n) for g in row] for row in settings['hess']]
        policy = montecarlo.vertex_policies(p.theta)[0]
        means = []
        for dt in sorted(settings['dt_list'], reverse=True):
            stream = NoiseStream(p.mc.seed, 0, settings['paths'], p.model.d)
            batch = simulate_batch(p.model, policy, p.domain, self.x0, dt, settings['horizon'], stream,
                                   refinement='grid', record=True)
            residual = ito_residual(p.model, policy, h_test, grad, hess, batch.path)
            means.append((dt, utils.fsum_mean(np.atleast_1d(residual))))
        self._ladder('ito_residual', means)
        values = [m for _, m in means]
        return [_record('ito_residual', 0.0, values[-1], values[0], _decreasing(values) or max(values) == 0.0)]

    def check_mc_pde(self):
        p = self.problem
        policies = p.policies(['vertices', 'pde'])
        out = []
        tolerance = self.tol['mc_pde']
        for i, x in enumerate(self.settings['points']):
            target = p.solution.interpolate(np.asarray(x))
            estimate = montecarlo.estimate_value(p.model, p.theta, p.domain, p.functional, policies, x, p.mc)
            out.append(_record('mc_pde[{}]'.format(i), target, estimate.value, tolerance,
                               abs(estimate.value - target) <= tolerance))
        return out

    def check_pde_order(self):
        p = self.problem
        oracle = expr.parse(self.settings['oracle'], self.config.dim)
        errors = []
        for nodes in self.settings['ladder']:
            solution = p.solve(nodes)
            X = solution.grid.coordinates[solution.grid.interior]
            errors.append((float(solution.grid.spacing[0]),
                           float(np.max(np.abs(solution.interior_values() - oracle(X))))))
        self._ladder('pde_order', errors)
        h = np.array([e[0] for e in errors])
        err = np.array([e[1] for e in errors])
        minimum = self.tol['min_order']
        if np.all(err <= 1e-8):
            # exact on every grid; no order to fit
            return [_record('pde_order', 0.0, err.max(), 1e-8, True)]
        order = float(np.polyfit(np.log(h), np.log(np.maximum(err, 1e-300)), 1)[0])
        return [_record('pde_order', minimum, order, 0.0, order >= minimum)]

    def check_exit_time_continuity(self):
        p = self.problem
        neighbors = sorted(self.settings['neighbors'], key=lambda y: -np.linalg.norm(np.asarray(y) - self.x0))
        gaps = montecarlo.exit_time_continuity(p.model, p.theta, p.domain, self.x0, neighbors, p.mc)
        self._ladder('exit_time_continuity', gaps)
        values = [g for _, g in gaps]
        return [_record('exit_time_continuity', 0.0, values[-1], values[0], _decreasing(values))]

    def check_erosion_gap(self):
        p = self.problem
        eps_list = sorted(self.settings['eps_list'], reverse=True)
        gaps = montecarlo.erosion_gap(p.model, p.theta, p.domain, self.x0, eps_list, p.mc)
        self._ladder('erosion_gap', gaps)
        values = [g for _, g in gaps]
        return [_record('erosion_gap', 0.0, values[-1], values[0], _decreasing(values))]


def run_verify(config, out_dir):
    """
    Run every configured check.

    Returns
    -------
    list of dict records {check, target, estimate, tolerance, pass}
    """
    if not config['verify']['checks']:
        raise ConfigError('verify.checks', 'no checks requested')
    verifier = Verifier(config)
    records = verifier.run()
    _write_json(os.path.join(out_dir, 'verify.json'), records)
    pd.DataFrame(verifier.ladders, columns=['check', 'parameter', 'value']).to_csv(
        os.path.join(out_dir, 'ladders.csv'), index=False)
    _write_run(out_dir, 'verify', config, {'records': records, 'ladders': verifier.ladders})
    return records


def run_bounds(config, out_dir):
    """
    Lyapunov bounds against empirical exit-time moments.

    Returns
    -------
    dict report with a records list
    """
    problem = Problem(config)
    model_bounds = problem.model.estimate_bounds(problem.domain)
    try:
        params = problem.theta.ellipticity_params(require_elliptic=True)
    except DegenerateSetError as e:
        raise ConfigError('theta', str(e))
    if not params.sigma_low_sq * model_bounds.lam > 0:
        raise ConfigError('model.sigma', 'sigma sigma^T is degenerate on the domain (lambda = {})'.format(
            model_bounds.lam))
    bounds = montecarlo.lyapunov_bounds(model_bounds, params, problem.domain)
    radius = problem.domain.exterior_radius()
    boundary = None
    if radius is not None:
        boundary = montecarlo.boundary_lyapunov(model_bounds, params, radius, radius + problem.domain.diameter)
    x0 = config['mc']['points'][0]
    tau, tau_sq = montecarlo.estimate_exit_moments(problem.model, problem.theta, problem.domain, None, x0,
                                                   problem.mc)
    records = [_record('C_tau', bounds.C_tau, tau.value, 0.0, tau.value <= bounds.C_tau),
               _record('C_tau_sq', bounds.C_tau_sq, tau_sq.value, 0.0, tau_sq.value <= bounds.C_tau_sq)]
    report = {'alpha': bounds.alpha, 'A': bounds.A, 'C_h': bounds.C_h, 'C_tau': bounds.C_tau,
              'C_tau_sq': bounds.C_tau_sq,
              'model_bounds': {'C_b': model_bounds.C_b, 'C_sigma': model_bounds.C_sigma, 'lambda': model_bounds.lam},
              'theta': {'sigma_low_sq': params.sigma_low_sq, 'sigma_high_sq': params.sigma_high_sq,
                        'beta': params.beta},
              'boundary': None if boundary is None else {'exterior_radius': radius, 'k': boundary.k,
                                                         'mu': boundary.mu},
              'x': list(x0),
              'empirical': {'tau': tau.value, 'tau_std_error': tau.std_error, 'tau_sq': tau_sq.value,
                            'tau_sq_std_error': tau_sq.std_error},
              'records': records}
    _write_json(os.path.join(out_dir, 'bounds.json'), report)
    _write_run(out_dir, 'bounds', config, report)
    return report


COMMANDS = {
    'estimate': run_estimate,
    'pde': run_pde,
    'verify': run_verify,
    'bounds': run_bounds,
}


def _passed(command, result):
    if command == 'verify':
        return all(r['pass'] for r in result)
    if command == 'bounds':
        return all(r['pass'] for r in result['records'])
    return True


def parser():
    p = argparse.ArgumentParser(prog='gsde', description='Exit-time functionals of G-SDEs: Monte Carlo over the '
                                                         'representing family and monotone grid solver')
    p.add_argument('command', choices=sorted(COMMANDS))
    p.add_argument('--config', required=True, help='JSON or YAML run configuration')
    p.add_argument('--out', default='.', help='output directory')
    p.add_argument('--seed', type=int, default=None, help='overrides mc.seed')
    p.add_argument('--verbose', action='store_true', help='debug logging')
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    utils.verbose = args.verbose
    log = logger()
    try:
        config = cfg.RunConfig.load(args.config, seed=args.seed)
        if not os.path.isdir(args.out):
            os.makedirs(args.out)
        result = COMMANDS[args.command](config, args.out)
    except (ConfigError, DomainError) as e:
        log.error('configuration error: {}'.format(e))
        return EXIT_CONFIG
    except SolverPreconditionError as e:
        log.error('solver precondition failed: {}'.format(e))
        return EXIT_PRECONDITION
    except (NumericalError, SolverError) as e:
        log.error('numerical failure: {}'.format(e))
        return EXIT_NUMERICAL
    except OSError as e:
        log.error('cannot write output: {}'.format(e))
        return EXIT_CONFIG
    if not _passed(args.command, result):
        log.error('{} failed'.format(args.command))
        return EXIT_VERIFY
    log.info('{} finished'.format(args.command))
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())

"""
Run configurations

A run is described by one JSON (or YAML) document with the blocks model, theta, domain, functional, mc, pde and
verify. RunConfig.from_dict validates the document, fills every default in, and keeps the normalized form, so that
serializing a RunConfig and loading it again gives the same configuration.
"""

__author__ = 'gsde developers'

import copy

import numpy as np
import yaml

from gsde import expr, geometry
from gsde.dynamics import ModelBounds, SdeModel
from gsde.montecarlo import LOWER, UPPER, Functional, McConfig
from gsde.pde import GridConfig
from gsde.uncertainty import ControlValue, UncertaintySet
from gsde.utils import ConfigError, DomainError

BLOCKS = ('model', 'theta', 'domain', 'functional', 'mc', 'pde', 'verify')

CHECKS = ('gmartingale', 'integral_bound', 'dpp', 'exit_time_gap', 'boundary_exit_decay', 'continuity',
          'ito_residual', 'mc_pde', 'pde_order', 'lyapunov', 'exit_time_continuity', 'erosion_gap')

POLICY_FAMILIES = ('vertices', 'pde')

MC_DEFAULTS = {
    'paths': 20000,
    'dt': 1e-3,
    'seed': 0,
    't_max': None,
    'batch_size': 4096,
    'refinement': geometry.AUTO,
    'policies': ['vertices'],
    'common_random_numbers': True,
    'bootstrap': 0,
    'scheduler': 'threads',
}

TOLERANCE_DEFAULTS = {
    'se_multiple': 3.0,
    'gmartingale_relative': 0.02,
    'mc_pde': 0.03,
    'exit_time_gap': 0.02,
    'boundary_exit_decay': 0.05,
    'continuity': 0.01,
    'min_order': 0.95,
}


def _float(value, field):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(field, 'expected a number, got {!r}'.format(value))
    if not np.isfinite(out):
        raise ConfigError(field, 'must be finite')
    return out


def _int(value, field, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) and not (
            isinstance(value, float) and value.is_integer()):
        raise ConfigError(field, 'expected an integer, got {!r}'.format(value))
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(field, 'must be at least {}'.format(minimum))
    return value


def _vector(value, length, field):
    if np.isscalar(value):
        value = [value] * (length if length is not None else 1)
    if not isinstance(value, (list, tuple)):
        raise ConfigError(field, 'expected a list of numbers')
    out = [_float(v, '{}[{}]'.format(field, i)) for i, v in enumerate(value)]
    if length is not None and len(out) != length:
        raise ConfigError(field, 'expected {} entries, got {}'.format(length, len(out)))
    return out


def _matrix(value, rows, cols, field):
    if np.isscalar(value):
        if rows != 1 or cols != 1:
            raise ConfigError(field, 'expected a {} x {} matrix'.format(rows, cols))
        value = [[value]]
    if not isinstance(value, (list, tuple)) or len(value) != rows:
        raise ConfigError(field, 'expected {} rows'.format(rows))
    return [_vector(row, cols, '{}[{}]'.format(field, i)) for i, row in enumerate(value)]


def _points(value, n, field):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(field, 'expected a list of points')
    return [_vector(p, n, '{}[{}]'.format(field, i)) for i, p in enumerate(value)]


def _parse(text, max_dim, field):
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text)) if text >= 0 else '-' + repr(float(-text))
    if not isinstance(text, str):
        raise ConfigError(field, 'expected an expression string, got {!r}'.format(text))
    try:
        return expr.parse(text, max_dim)
    except expr.ParseError as e:
        raise ConfigError(field, str(e))


def _block(raw, name):
    block = raw.get(name, {})
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(name, 'expected a mapping')
    return block


def _unknown(block, allowed, name):
    for key in block:
        if key not in allowed:
            raise ConfigError('{}.{}'.format(name, key), 'unknown field')


def _normalize_model(block):
    _unknown(block, ('n', 'd', 'b', 'sigma', 'h', 'bounds'), 'model')
    if 'b' not in block or 'sigma' not in block:
        raise ConfigError('model', 'b and sigma are required')
    b = block['b'] if isinstance(block['b'], list) else [block['b']]
    n = _int(block.get('n', len(b)), 'model.n', 1)
    if len(b) != n:
        raise ConfigError('model.b', 'expected {} drift components, got {}'.format(n, len(b)))
    sigma = block['sigma']
    if not isinstance(sigma, list):
        sigma = [[sigma]]
    if len(sigma) != n:
        raise ConfigError('model.sigma', 'expected {} rows, got {}'.format(n, len(sigma)))
    sigma = [row if isinstance(row, list) else [row] for row in sigma]
    d = _int(block.get('d', len(sigma[0])), 'model.d', 1)
    for i, row in enumerate(sigma):
        if len(row) != d:
            raise ConfigError('model.sigma[{}]'.format(i), 'expected {} columns, got {}'.format(d, len(row)))
    out = {'n': n, 'd': d,
           'b': [_parse(e, n, 'model.b[{}]'.format(i)).text for i, e in enumerate(b)],
           'sigma': [[_parse(e, n, 'model.sigma[{}][{}]'.format(i, j)).text for j, e in enumerate(row)]
                     for i, row in enumerate(sigma)],
           'h': None}
    h = block.get('h')
    if h is not None:
        if not isinstance(h, list) or len(h) != d or any(not isinstance(row, list) or len(row) != d for row in h):
            raise ConfigError('model.h', 'expected a {0} x {0} array'.format(d))
        out['h'] = []
        for i, row in enumerate(h):
            out_row = []
            for j, entry in enumerate(row):
                field = 'model.h[{}][{}]'.format(i, j)
                if entry is None:
                    out_row.append(None)
                    continue
                if not isinstance(entry, list) or len(entry) != n:
                    raise ConfigError(field, 'expected {} components'.format(n))
                out_row.append([_parse(e, n, '{}[{}]'.format(field, k)).text for k, e in enumerate(entry)])
            out['h'].append(out_row)
        for i in range(d):
            for j in range(d):
                if out['h'][i][j] != out['h'][j][i]:
                    raise ConfigError('model.h[{}][{}]'.format(i, j), 'h must be symmetric in (i, j)')
    bounds = block.get('bounds') or {}
    _unknown(bounds, ('C_b', 'C_sigma', 'lambda'), 'model.bounds')
    out['bounds'] = {key: None if bounds.get(key) is None else _float(bounds[key], 'model.bounds.' + key)
                     for key in ('C_b', 'C_sigma', 'lambda')}
    return out


def _normalize_theta(block, d):
    kind = block.get('kind')
    if kind == 'diag-box':
        _unknown(block, ('kind', 'sigma_low', 'sigma_high', 'beta'), 'theta')
        low = _float(block.get('sigma_low'), 'theta.sigma_low')
        high = _float(block.get('sigma_high'), 'theta.sigma_high')
        if low < 0 or high < low:
            raise ConfigError('theta.sigma_high', 'need 0 <= sigma_low <= sigma_high')
        beta = _vector(block.get('beta', 0.0), d, 'theta.beta')
        if any(b < 0 for b in beta):
            raise ConfigError('theta.beta', 'must be nonnegative')
        return {'kind': kind, 'sigma_low': low, 'sigma_high': high, 'beta': beta}
    if kind == 'singleton':
        _unknown(block, ('kind', 'gamma', 'mu'), 'theta')
        return {'kind': kind, 'gamma': _matrix(block.get('gamma'), d, d, 'theta.gamma'),
                'mu': _vector(block.get('mu', 0.0), d, 'theta.mu')}
    if kind == 'vertex-list':
        _unknown(block, ('kind', 'vertices'), 'theta')
        vertices = block.get('vertices')
        if not isinstance(vertices, list) or not vertices:
            raise ConfigError('theta.vertices', 'expected a nonempty list')
        out = []
        for i, v in enumerate(vertices):
            field = 'theta.vertices[{}]'.format(i)
            if not isinstance(v, dict):
                raise ConfigError(field, 'expected a mapping with gamma and mu')
            out.append({'gamma': _matrix(v.get('gamma'), d, d, field + '.gamma'),
                        'mu': _vector(v.get('mu', 0.0), d, field + '.mu')})
        return {'kind': kind, 'vertices': out}
    raise ConfigError('theta.kind', 'unknown kind {!r}'.format(kind))


def _normalize_domain(block, n):
    kind = block.get('kind')
    if kind == 'interval':
        _unknown(block, ('kind', 'a', 'b'), 'domain')
        if n != 1:
            raise ConfigError('domain.kind', 'interval domain needs model.n = 1, got {}'.format(n))
        out = {'kind': kind, 'a': _float(block.get('a'), 'domain.a'), 'b': _float(block.get('b'), 'domain.b')}
    elif kind == 'box':
        _unknown(block, ('kind', 'lo', 'hi'), 'domain')
        out = {'kind': kind, 'lo': _vector(block.get('lo'), n, 'domain.lo'),
               'hi': _vector(block.get('hi'), n, 'domain.hi')}
    elif kind == 'ball':
        _unknown(block, ('kind', 'center', 'radius'), 'domain')
        out = {'kind': kind, 'center': _vector(block.get('center'), n, 'domain.center'),
               'radius': _float(block.get('radius'), 'domain.radius')}
    elif kind == 'annulus':
        _unknown(block, ('kind', 'center', 'r_inner', 'r_outer'), 'domain')
        out = {'kind': kind, 'center': _vector(block.get('center'), n, 'domain.center'),
               'r_inner': _float(block.get('r_inner'), 'domain.r_inner'),
               'r_outer': _float(block.get('r_outer'), 'domain.r_outer')}
    elif kind == 'implicit':
        _unknown(block, ('kind', 'g', 'lo', 'hi'), 'domain')
        out = {'kind': kind, 'g': _parse(block.get('g'), n, 'domain.g').text,
               'lo': _vector(block.get('lo'), n, 'domain.lo'), 'hi': _vector(block.get('hi'), n, 'domain.hi')}
    else:
        raise ConfigError('domain.kind', 'unknown kind {!r}'.format(kind))
    try:
        build_domain(out)
    except DomainError as e:
        raise ConfigError('domain', str(e))
    return out


def _normalize_functional(block, n):
    _unknown(block, ('phi', 'f', 'mode'), 'functional')
    mode = block.get('mode', UPPER)
    if mode not in (UPPER, LOWER):
        raise ConfigError('functional.mode', 'expected {!r} or {!r}'.format(UPPER, LOWER))
    return {'phi': _parse(block.get('phi', '0'), n, 'functional.phi').text,
            'f': _parse(block.get('f', '0'), n, 'functional.f').text,
            'mode': mode}


def _normalize_mc(block, domain):
    _unknown(block, tuple(MC_DEFAULTS) + ('points',), 'mc')
    out = dict(MC_DEFAULTS)
    out.update({k: v for k, v in block.items() if v is not None or k == 't_max'})
    out['paths'] = _int(out['paths'], 'mc.paths', 1)
    out['batch_size'] = _int(out['batch_size'], 'mc.batch_size', 1)
    out['seed'] = _int(out['seed'], 'mc.seed', 0)
    out['bootstrap'] = _int(out['bootstrap'], 'mc.bootstrap', 0)
    out['dt'] = _float(out['dt'], 'mc.dt')
    if out['dt'] <= 0:
        raise ConfigError('mc.dt', 'must be positive')
    if out['t_max'] is not None:
        out['t_max'] = _float(out['t_max'], 'mc.t_max')
        if out['t_max'] < out['dt']:
            raise ConfigError('mc.t_max', 'must be at least dt')
    if out['refinement'] not in geometry.REFINEMENTS:
        raise ConfigError('mc.refinement', 'expected one of {}'.format(geometry.REFINEMENTS))
    policies = out['policies']
    if isinstance(policies, str):
        policies = [policies]
    for i, p in enumerate(policies):
        if p not in POLICY_FAMILIES:
            raise ConfigError('mc.policies[{}]'.format(i), 'expected one of {}'.format(POLICY_FAMILIES))
    if 'pde' in policies and domain.dim > 2:
        raise ConfigError('mc.policies', 'the pde feedback policy needs a 1-D or 2-D problem')
    out['policies'] = list(policies)
    out['common_random_numbers'] = bool(out['common_random_numbers'])
    if out['scheduler'] not in ('threads', 'processes', 'sync', 'synchronous', 'single-threaded'):
        raise ConfigError('mc.scheduler', 'unknown dask scheduler {!r}'.format(out['scheduler']))
    center = 0.5 * (domain.bounding_box()[0] + domain.bounding_box()[1])
    out['points'] = _points(block.get('points', [center.tolist()]), domain.dim, 'mc.points')
    return out


def _normalize_pde(block, n):
    _unknown(block, ('nodes', 'tolerance', 'max_iterations'), 'pde')
    nodes = block.get('nodes')
    return {'nodes': _int(nodes, 'pde.nodes', 3) if nodes is not None else (101 if n == 1 else 41),
            'tolerance': _float(block.get('tolerance', 1e-10), 'pde.tolerance'),
            'max_iterations': _int(block.get('max_iterations', 100), 'pde.max_iterations', 1)}


def _normalize_verify(block, domain, d, points):
    allowed = ('checks', 'points', 'dt_list', 'boundary_points', 'gmartingale', 'integral_T', 'inner_eps',
               'eps_list', 'neighbors', 'ito', 'oracle', 'ladder', 'tolerances', 'paths')
    _unknown(block, allowed, 'verify')
    n = domain.dim
    checks = block.get('checks', [])
    if isinstance(checks, str):
        checks = [checks]
    for i, c in enumerate(checks):
        if c not in CHECKS:
            raise ConfigError('verify.checks[{}]'.format(i), 'unknown check {!r}'.format(c))
    diam = domain.diameter
    out = {'checks': list(checks)}
    out['points'] = _points(block.get('points', points), n, 'verify.points')
    if not out['points']:
        raise ConfigError('verify.points', 'at least one point is required')
    out['paths'] = None if block.get('paths') is None else _int(block['paths'], 'verify.paths', 1)
    out['dt_list'] = _vector(block.get('dt_list', [1e-2, 1e-3, 1e-4]), None, 'verify.dt_list')
    if any(dt <= 0 for dt in out['dt_list']):
        raise ConfigError('verify.dt_list', 'must be positive')
    default_boundary = np.atleast_2d(domain.project(np.asarray(out['points'][0]))).tolist()
    out['boundary_points'] = _points(block.get('boundary_points', default_boundary), n, 'verify.boundary_points')
    cases = block.get('gmartingale', [{'A': np.eye(d).tolist(), 'p': [0.0] * d, 't': 1.0}])
    out['gmartingale'] = []
    for i, case in enumerate(cases):
        field = 'verify.gmartingale[{}]'.format(i)
        if not isinstance(case, dict):
            raise ConfigError(field, 'expected a mapping with A, p and t')
        t = _float(case.get('t', 1.0), field + '.t')
        if t <= 0:
            raise ConfigError(field + '.t', 'must be positive')
        out['gmartingale'].append({'A': _matrix(case.get('A'), d, d, field + '.A'),
                                   'p': _vector(case.get('p', 0.0), d, field + '.p'), 't': t})
    out['integral_T'] = _vector(block.get('integral_T', [1.0]), None, 'verify.integral_T')
    inner = block.get('inner_eps')
    out['inner_eps'] = 0.25 * diam if inner is None else _float(inner, 'verify.inner_eps')
    out['eps_list'] = _vector(block.get('eps_list', [0.1 * diam, 0.05 * diam, 0.02 * diam]), None,
                              'verify.eps_list')
    x = np.asarray(out['points'][0])
    e1 = np.eye(n)[0]
    default_neighbors = [(x + s * diam * e1).tolist() for s in (0.1, 0.05, 0.02)]
    out['neighbors'] = _points(block.get('neighbors', default_neighbors), n, 'verify.neighbors')
    ito = block.get('ito') or {}
    _unknown(ito, ('h', 'grad', 'hess', 'dt_list', 'paths', 'horizon'), 'verify.ito')
    squares = ' + '.join('x{0}^2'.format(i + 1) for i in range(n))
    out['ito'] = {
        'h': _parse(ito.get('h', squares), n, 'verify.ito.h').text,
        'grad': [_parse(g, n, 'verify.ito.grad[{}]'.format(i)).text
                 for i, g in enumerate(ito.get('grad', ['2*x{}'.format(i + 1) for i in range(n)]))],
        'hess': [[_parse(g, n, 'verify.ito.hess[{}][{}]'.format(i, j)).text for j, g in enumerate(row)]
                 for i, row in enumerate(ito.get('hess', [['2' if i == j else '0' for j in range(n)]
                                                          for i in range(n)]))],
        'dt_list': _vector(ito.get('dt_list', [1e-2, 1e-3, 1e-4]), None, 'verify.ito.dt_list'),
        'paths': _int(ito.get('paths', 200), 'verify.ito.paths', 1),
        'horizon': _float(ito.get('horizon', 1.0), 'verify.ito.horizon'),
    }
    if len(out['ito']['grad']) != n or len(out['ito']['hess']) != n or any(
            len(row) != n for row in out['ito']['hess']):
        raise ConfigError('verify.ito', 'derivatives must match dimension {}'.format(n))
    oracle = block.get('oracle')
    out['oracle'] = None if oracle is None else _parse(oracle, n, 'verify.oracle').text
    out['ladder'] = [_int(v, 'verify.ladder[{}]'.format(i), 3)
                     for i, v in enumerate(block.get('ladder', [51, 101, 201]))]
    tolerances = dict(TOLERANCE_DEFAULTS)
    given = block.get('tolerances') or {}
    _unknown(given, tuple(TOLERANCE_DEFAULTS), 'verify.tolerances')
    tolerances.update({k: _float(v, 'verify.tolerances.' + k) for k, v in given.items()})
    out['tolerances'] = tolerances

    catalog = domain.kind != 'implicit'
    for check in out['checks']:
        field = 'verify.checks'
        if check in ('mc_pde', 'pde_order') and n > 2:
            raise ConfigError(field, '{} needs a 1-D or 2-D problem'.format(check))
        if check == 'pde_order' and out['oracle'] is None:
            raise ConfigError('verify.oracle', 'pde_order needs an oracle expression')
        if check == 'pde_order' and len(out['ladder']) < 2:
            raise ConfigError('verify.ladder', 'pde_order needs at least two grids')
        if check in ('dpp', 'erosion_gap') and not catalog:
            raise ConfigError(field, '{} needs a catalog domain (erosion is unavailable for implicit sets)'.format(
                check))
        if check == 'continuity' and len(out['points']) < 2:
            raise ConfigError('verify.points', 'continuity needs at least two points')
        if check in ('exit_time_gap', 'boundary_exit_decay') and len(out['dt_list']) < 2:
            raise ConfigError('verify.dt_list', '{} needs a refinement ladder'.format(check))
    if catalog and 'dpp' in out['checks']:
        try:
            inner_domain = domain.erode(out['inner_eps'])
        except DomainError as e:
            raise ConfigError('verify.inner_eps', str(e))
        if not inner_domain.contains(out['points'][0]):
            raise ConfigError('verify.inner_eps', 'the first point is not inside the inner domain')
    return out


class RunConfig(object):
    """
    Validated, normalized run configuration.

    Attributes
    ----------
    data : dict
        normalized document with every block and default present
    """

    def __init__(self, data):
        self.data = data

    @classmethod
    def from_dict(cls, raw, seed=None):
        """
        Parameters
        ----------
        raw : dict
        seed : int, optional
            overrides mc.seed

        Raises
        ------
        ConfigError
        """
        if not isinstance(raw, dict):
            raise ConfigError('config', 'expected a mapping with blocks {}'.format(', '.join(BLOCKS)))
        _unknown(raw, BLOCKS, 'config')
        model = _normalize_model(_block(raw, 'model'))
        n, d = model['n'], model['d']
        theta_block = _block(raw, 'theta')
        if not theta_block:
            raise ConfigError('theta', 'an uncertainty set is required')
        theta = _normalize_theta(theta_block, d)
        domain_block = _block(raw, 'domain')
        if not domain_block:
            raise ConfigError('domain', 'a domain is required')
        domain_data = _normalize_domain(domain_block, n)
        domain = build_domain(domain_data)
        mc_block = dict(_block(raw, 'mc'))
        if seed is not None:
            mc_block['seed'] = seed
        mc = _normalize_mc(mc_block, domain)
        data = {
            'model': model,
            'theta': theta,
            'domain': domain_data,
            'functional': _normalize_functional(_block(raw, 'functional'), n),
            'mc': mc,
            'pde': _normalize_pde(_block(raw, 'pde'), n),
            'verify': _normalize_verify(_block(raw, 'verify'), domain, d, mc['points']),
        }
        return cls(data)

    @classmethod
    def load(cls, path, seed=None):
        """Read JSON or YAML."""
        try:
            with open(path, 'r') as handle:
                raw = yaml.safe_load(handle)
        except (OSError, IOError) as e:
            raise ConfigError('config', 'cannot read {}: {}'.format(path, e))
        except yaml.YAMLError as e:
            raise ConfigError('config', 'cannot parse {}: {}'.format(path, e))
        return cls.from_dict(raw, seed)

    def to_dict(self):
        return copy.deepcopy(self.data)

    def __getitem__(self, block):
        return self.data[block]

    @property
    def seed(self):
        return self.data['mc']['seed']

    @property
    def dim(self):
        return self.data['model']['n']


def build_model(block):
    n = block['n']
    b = [expr.parse(e, n) for e in block['b']]
    sigma = [[expr.parse(e, n) for e in row] for row in block['sigma']]
    h = None
    if block.get('h') is not None:
        h = [[None if entry is None else [expr.parse(e, n) for e in entry] for entry in row] for row in block['h']]
    bounds = block.get('bounds') or {}
    model_bounds = None
    if any(bounds.get(k) is not None for k in ('C_b', 'C_sigma', 'lambda')):
        model_bounds = ModelBounds(bounds.get('C_b'), bounds.get('C_sigma'), bounds.get('lambda'))
    return SdeModel(b, sigma, h, model_bounds)


def build_theta(block):
    kind = block['kind']
    if kind == 'diag-box':
        return UncertaintySet.diag_box(block['sigma_low'], block['sigma_high'], block['beta'],
                                       d=len(block['beta']))
    if kind == 'singleton':
        return UncertaintySet.singleton(block['gamma'], block['mu'])
    return UncertaintySet.vertex_list([ControlValue(v['gamma'], v['mu']) for v in block['vertices']])


def build_domain(block):
    kind = block['kind']
    if kind == 'interval':
        return geometry.Interval(block['a'], block['b'])
    if kind == 'box':
        return geometry.Box(block['lo'], block['hi'])
    if kind == 'ball':
        return geometry.Ball(block['center'], block['radius'])
    if kind == 'annulus':
        return geometry.Annulus(block['center'], block['r_inner'], block['r_outer'])
    return geometry.Implicit(expr.parse(block['g'], len(block['lo'])), block['lo'], block['hi'])


def build_functional(block, n):
    return Functional(expr.parse(block['phi'], n), expr.parse(block['f'], n), block['mode'])


def mc_settings(block, paths=None):
    values = {k: block[k] for k in ('paths', 'dt', 'seed', 't_max', 'batch_size', 'refinement',
                                    'common_random_numbers', 'bootstrap', 'scheduler')}
    if paths is not None:
        values['paths'] = paths
    return McConfig(**values)


def grid_settings(block, nodes=None):
    return GridConfig(nodes=block['nodes'] if nodes is None else nodes, tolerance=block['tolerance'],
                      max_iterations=block['max_iterations'])

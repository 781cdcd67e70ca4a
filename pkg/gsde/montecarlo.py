"""
Sublinear-expectation estimators and statistical verifications

The supremum over the representing family is taken over a finite set of policies (every constant vertex control,
plus a PDE feedback policy when one is supplied). Each policy is simulated on the same random numbers, the per-policy
means are compared, and the attaining policy is reported. The value is therefore a lower bound of the upper
expectation (upper mode) or an upper bound of the lower expectation (lower mode).
"""

__author__ = 'gsde developers'

import math
from collections import namedtuple
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd
from dask import delayed, compute
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

from gsde import geometry
from gsde.dynamics import ConstantPolicy, NoiseStream, ExitBatch, check_policy, simulate_batch
from gsde.utils import (DomainError, NumericalError, SolverPreconditionError, fsum_mean, logger,
                        mean_and_stderr)

UPPER = 'upper'
LOWER = 'lower'

PolicyEstimate = namedtuple('PolicyEstimate', ['policy', 'mean', 'std_error'])
LyapunovBounds = namedtuple('LyapunovBounds', ['alpha', 'A', 'C_h', 'C_tau', 'C_tau_sq'])
BoundaryLyapunov = namedtuple('BoundaryLyapunov', ['k', 'mu'])
DppResult = namedtuple('DppResult', ['residual', 'lhs', 'rhs', 'std_error'])


class Functional(object):
    """
    phi(X_tau) - int_0^tau f(X_s) ds, maximized (upper) or minimized (lower) over the family.

    Parameters
    ----------
    phi : callable on (m, n) arrays, usually an Expression
    f : Expression, optional
    mode : 'upper' or 'lower'
    """

    def __init__(self, phi, f=None, mode=UPPER):
        if mode not in (UPPER, LOWER):
            raise ValueError('mode must be {!r} or {!r}'.format(UPPER, LOWER))
        self.phi = phi
        self.f = f
        self.mode = mode

    def payoff(self, batch):
        values = np.broadcast_to(np.asarray(self.phi(batch.exit_point), dtype=float), batch.tau_open.shape)
        out = values - batch.running_cost
        if not np.isfinite(out).all():
            raise NumericalError('payoff is not finite at exit point {}'.format(
                batch.exit_point[~np.isfinite(out)][0].tolist()))
        return out


@dataclass
class McConfig(object):
    paths: int = 20000
    dt: float = 1e-3
    seed: int = 0
    t_max: float = None
    batch_size: int = 4096
    refinement: str = geometry.AUTO
    common_random_numbers: bool = True
    bootstrap: int = 0
    scheduler: str = 'threads'

    def batches(self):
        sizes = [self.batch_size] * (self.paths // self.batch_size)
        if self.paths % self.batch_size:
            sizes.append(self.paths % self.batch_size)
        return sizes

    def replace(self, **kwargs):
        values = asdict(self)
        values.update(kwargs)
        return McConfig(**values)


@dataclass
class McEstimate(object):
    value: float
    std_error: float
    n_paths: int
    per_policy: list
    argmax_policy: str
    censored_fraction: float = 0.0
    censoring_bound: float = 0.0
    bootstrap_bias: float = None

    def to_dict(self):
        out = asdict(self)
        out['per_policy'] = [{'policy': p.policy, 'mean': p.mean, 'std_error': p.std_error}
                             for p in self.per_policy]
        return out


def vertex_policies(theta):
    """One constant policy per represented control."""
    return [ConstantPolicy(v, label=v.label) for v in theta.vertices]


def _concat(batches):
    return ExitBatch(*[np.concatenate([getattr(b, name) for b in batches])
                       for name in ('tau_open', 'tau_closed', 'exit_point', 'running_cost', 'censored', 'steps')])


def _simulate_one(model, policy, domain, x0, dt, t_max, seed, batch, size, extra, f, refinement):
    stream = NoiseStream(seed, batch, size, model.d, extra)
    return simulate_batch(model, policy, domain, x0, dt, t_max, stream, f, refinement)


def simulate_family(model, policies, domain, x0, mc_config, f=None, dt=None, t_max=None):
    """
    Simulate every policy from x0 on mc_config.paths paths, fanned out over (policy x batch).

    Returns
    -------
    list of ExitBatch, one per policy, rows in (batch, slot) order
    """
    dt = mc_config.dt if dt is None else dt
    t_max = mc_config.t_max if t_max is None else t_max
    sizes = mc_config.batches()
    tasks = []
    for index, policy in enumerate(policies):
        extra = () if mc_config.common_random_numbers else (index,)
        for b, size in enumerate(sizes):
            tasks.append(delayed(_simulate_one)(model, policy, domain, x0, dt, t_max, mc_config.seed, b, size,
                                                extra, f, mc_config.refinement))
    results = compute(*tasks, scheduler=mc_config.scheduler)
    per_policy = len(sizes)
    return [_concat(results[i * per_policy:(i + 1) * per_policy]) for i in range(len(policies))]


def default_t_max(model, theta, domain):
    """10 x the expected exit time bound."""
    bounds = lyapunov_bounds(model.estimate_bounds(domain), theta.ellipticity_params(), domain)
    return 10.0 * bounds.C_tau


def _prepare(model, theta, domain, policies, x0, mc_config):
    if domain.exterior_ball() is geometry.ExteriorBall.VIOLATED:
        raise SolverPreconditionError('exterior ball condition violated for {!r}'.format(domain))
    theta.ellipticity_params(require_elliptic=True)
    if not domain.contains(x0, closed=True):
        raise DomainError('start point {} is outside the closed domain'.format(np.ravel(x0).tolist()))
    if policies is None:
        policies = vertex_policies(theta)
    for policy in policies:
        check_policy(policy, theta)
    if mc_config.t_max is None:
        mc_config = mc_config.replace(t_max=default_t_max(model, theta, domain))
    return policies, mc_config


def _select(means, mode):
    means = np.asarray(means)
    # first index on ties
    return int(np.argmax(means)) if mode == UPPER else int(np.argmin(means))


def _family_estimate(samples, labels, mode, censored=None, censoring_bound=0.0, bootstrap=0, seed=0):
    stats = [mean_and_stderr(s) for s in samples]
    per_policy = [PolicyEstimate(label, m, se) for label, (m, se) in zip(labels, stats)]
    best = _select([m for m, _ in stats], mode)
    n_paths = int(np.asarray(samples[best]).size)
    fraction = 0.0 if censored is None else float(np.mean(censored[best]))
    estimate = McEstimate(value=stats[best][0], std_error=stats[best][1] + censoring_bound, n_paths=n_paths,
                          per_policy=per_policy, argmax_policy=labels[best], censored_fraction=fraction,
                          censoring_bound=censoring_bound)
    if bootstrap:
        estimate.bootstrap_bias = bootstrap_bias(samples, mode, bootstrap, seed)
    return estimate


def bootstrap_bias(samples, mode, replicates, seed=0):
    """
    Bootstrap estimate of the bias of the max (min) of the per-policy means.

    Resamples every policy's paths with shared indices, so common random numbers are respected.
    """
    samples = [np.asarray(s, dtype=float) for s in samples]
    n = samples[0].size
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 2])))
    stack = np.stack(samples)
    observed = stack.mean(axis=1)
    point = observed.max() if mode == UPPER else observed.min()
    extremes = np.empty(replicates)
    for r in range(replicates):
        idx = rng.integers(0, n, size=n)
        means = stack[:, idx].mean(axis=1)
        extremes[r] = means.max() if mode == UPPER else means.min()
    return fsum_mean(extremes) - float(point)


def _sup_norm(expression, domain, count=256):
    if expression is None:
        return 0.0
    points = domain.sample_closure(count)
    return float(np.nanmax(np.abs(np.broadcast_to(expression(points), points.shape[:-1]))))


def censoring_bound(model, theta, domain, functional, t_max):
    """C_f E[tau^2] / t_max + 2 C_phi E[tau] / t_max, with the Lyapunov moment bounds."""
    bounds = lyapunov_bounds(model.estimate_bounds(domain), theta.ellipticity_params(), domain)
    c_f = _sup_norm(functional.f, domain)
    c_phi = _sup_norm(functional.phi, domain)
    return c_f * bounds.C_tau_sq / t_max + 2.0 * c_phi * bounds.C_tau / t_max


def estimate_value(model, theta, domain, functional, policies, x0, mc_config):
    """
    Family extremum of E_P[phi(X_tau) - int_0^tau f(X_s) ds].

    Parameters
    ----------
    model : SdeModel
    theta : UncertaintySet
    domain : Domain
    functional : Functional
    policies : list of policies, or None for the vertex family
    x0 : array-like (n,)
    mc_config : McConfig

    Returns
    -------
    McEstimate

    Raises
    ------
    NumericalError
        every path censored, or a non-finite payoff
    """
    policies, mc_config = _prepare(model, theta, domain, policies, x0, mc_config)
    batches = simulate_family(model, policies, domain, x0, mc_config, f=functional.f)
    censored = [b.censored for b in batches]
    if all(c.all() for c in censored):
        raise NumericalError('all paths censored at t_max = {}'.format(mc_config.t_max))
    bound = 0.0
    if any(c.any() for c in censored):
        bound = censoring_bound(model, theta, domain, functional, mc_config.t_max)
    payoffs = [functional.payoff(b) for b in batches]
    labels = [p.label for p in policies]
    estimate = _family_estimate(payoffs, labels, functional.mode, censored, bound, mc_config.bootstrap,
                                mc_config.seed)
    logger().info('value at {}: {:.6g} +/- {:.2g} ({}, {} policies)'.format(
        np.ravel(x0).tolist(), estimate.value, estimate.std_error, estimate.argmax_policy, len(policies)))
    return estimate


def estimate_exit_moments(model, theta, domain, policies, x0, mc_config):
    """
    Family maxima of E[tau_closed] and E[tau_closed^2].

    Returns
    -------
    (McEstimate, McEstimate)
    """
    policies, mc_config = _prepare(model, theta, domain, policies, x0, mc_config)
    batches = simulate_family(model, policies, domain, x0, mc_config)
    labels = [p.label for p in policies]
    censored = [b.censored for b in batches]
    first = _family_estimate([b.tau_closed for b in batches], labels, UPPER, censored)
    second = _family_estimate([b.tau_closed ** 2 for b in batches], labels, UPPER, censored)
    return first, second


def lyapunov_bounds(model_bounds, theta_params, domain):
    """
    Exit-time moment bounds from h(y) = A exp(alpha y_1).

    With K = C_b + beta C_sigma and s = sigma_low^2 lambda, alpha = 2 + 2K/s makes
    q = s alpha^2 - 2 alpha K = 2 alpha s positive, and A = 2 / (q exp(alpha y1_min)) gives
    A exp(alpha y_1) q / 2 >= 1 on the bounding box.

    Parameters
    ----------
    model_bounds : ModelBounds
    theta_params : EllipticityParams
    domain : Domain

    Returns
    -------
    LyapunovBounds
        alpha, A, C_h = A exp(alpha y1_max), C_tau = 2 C_h, C_tau_sq = 2 C_h C_tau
    """
    s = theta_params.sigma_low_sq * model_bounds.lam
    if not s > 0:
        raise SolverPreconditionError('sigma_low^2 lambda must be positive, got {}'.format(s))
    K = model_bounds.C_b + theta_params.beta * model_bounds.C_sigma
    alpha = 2.0 + 2.0 * K / s
    q = s * alpha ** 2 - 2.0 * alpha * K
    lo, hi = domain.bounding_box()
    A = 2.0 / (q * math.exp(alpha * lo[0]))
    c_h = A * math.exp(alpha * hi[0])
    c_tau = 2.0 * c_h
    return LyapunovBounds(alpha, A, c_h, c_tau, 2.0 * c_h * c_tau)


def boundary_lyapunov(model_bounds, theta_params, exterior_radius, reach, samples=1001):
    """
    Immediate-exit certificate from h(y) = exp(-k |y - z|^2) around an exterior ball of radius r.

    k makes 4 s k^2 rho^2 - 4 k K rho - 2 k sigma_high^2 C_sigma^2 equal to k at rho = r and increasing beyond;
    mu is the smallest value of that bracket times exp(-k rho^2) on [r, reach].

    Returns
    -------
    BoundaryLyapunov
    """
    s = theta_params.sigma_low_sq * model_bounds.lam
    if not s > 0:
        raise SolverPreconditionError('sigma_low^2 lambda must be positive, got {}'.format(s))
    if exterior_radius is None or exterior_radius <= 0 or reach < exterior_radius:
        raise ValueError('need 0 < exterior_radius <= reach')
    K = model_bounds.C_b + theta_params.beta * model_bounds.C_sigma
    spread = 2.0 * theta_params.sigma_high_sq * model_bounds.C_sigma ** 2
    r = float(exterior_radius)
    k = (4.0 * K * r + spread + 1.0) / (4.0 * s * r ** 2)
    rho = np.linspace(r, reach, samples)
    bracket = 4.0 * s * k ** 2 * rho ** 2 - 4.0 * k * K * rho - k * spread
    return BoundaryLyapunov(k, float(np.min(bracket * np.exp(-k * rho ** 2))))


def _brownian_family(theta, t, mc_config, quantity):
    """Exact B_t = gamma W_t + mu t under every vertex; quantity(B, control) gives per-path values."""
    labels, samples = [], []
    for index, control in enumerate(theta.vertices):
        extra = () if mc_config.common_random_numbers else (index,)
        values = []
        for b, size in enumerate(mc_config.batches()):
            xi = NoiseStream(mc_config.seed, b, size, theta.d, extra).normals()
            B = xi.dot(control.gamma.T) * math.sqrt(t) + control.mu * t
            values.append(quantity(B, control))
        labels.append(control.label)
        samples.append(np.concatenate(values))
    return labels, samples


def gmartingale_check(theta, A, p, t, mc_config):
    """
    E-hat[1/2 <A, <B>_t> + <p, B_t>] against G(A, p) t.

    <B>_t = gamma gamma^T t is deterministic under a constant control, so only the drift part is random.

    Returns
    -------
    (McEstimate, float)
    """
    if t <= 0:
        raise ValueError('t must be positive')
    A = np.atleast_2d(np.asarray(A, dtype=float))
    p = np.zeros(theta.d) if p is None else np.atleast_1d(np.asarray(p, dtype=float))
    target = theta.eval_G(A, p) * t

    def quantity(B, control):
        return 0.5 * float(np.sum(A * control.qv_density)) * t + B.dot(p)

    labels, samples = _brownian_family(theta, t, mc_config, quantity)
    return _family_estimate(samples, labels, UPPER), target


def integral_bound_estimate(theta, T, mc_config):
    """Family maximum of E[(B_T^1)^2]."""
    if T <= 0:
        raise ValueError('T must be positive')
    labels, samples = _brownian_family(theta, T, mc_config, lambda B, control: B[:, 0] ** 2)
    return _family_estimate(samples, labels, UPPER)


def check_integral_bound(theta, T, mc_config):
    """
    With eta = 1: E-hat[(B_T)^2] <= 2 (sigma_high^2 + beta^2 T) T.

    Returns
    -------
    lhs : float
    rhs : float
    """
    params = theta.ellipticity_params()
    lhs = integral_bound_estimate(theta, T, mc_config).value
    rhs = 2.0 * (params.sigma_high_sq + params.beta ** 2 * T) * T
    if lhs > rhs:
        logger().warning('integral bound violated: {} > {}'.format(lhs, rhs))
    return lhs, rhs


class ValueTable(object):
    """
    Interpolated values of u at scattered points; linear in 1-D, Delaunay-linear with nearest fallback otherwise.
    """

    def __init__(self, points, values):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, np.newaxis]
        self.points = points
        self.values = np.asarray(values, dtype=float)
        if points.shape[1] == 1:
            order = np.argsort(points[:, 0], kind='stable')
            self._x, self._y = points[order, 0], self.values[order]
        else:
            self._linear = LinearNDInterpolator(points, self.values)
            self._nearest = NearestNDInterpolator(points, self.values)

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.points.shape[1] == 1:
            return np.interp(X[:, 0], self._x, self._y)
        out = self._linear(X)
        missing = np.isnan(out)
        if missing.any():
            out[missing] = self._nearest(X[missing])
        return out


def value_table_from_mc(model, theta, domain, functional, policies, points, mc_config):
    """Per-point estimates of u, seeded identically, as a ValueTable."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = []
    for x in points:
        if not domain.contains(x):
            values.append(float(functional.phi(x)))
            continue
        values.append(estimate_value(model, theta, domain, functional, policies, x, mc_config).value)
    return ValueTable(points, values)


def dpp_check(model, theta, domain, inner_domain, functional, policies, x0, mc_config, value_table=None):
    """
    |u(x0) - E-hat[u(X_tau') - int_0^tau' f]| with tau' the exit time of inner_domain.

    Parameters
    ----------
    inner_domain : Domain or None
        None is the zero-time identity and gives a zero residual
    value_table : callable on (m, n) arrays
        u on the boundary of inner_domain (PDE interpolant or ValueTable)

    Returns
    -------
    DppResult
        residual, lhs, rhs, combined standard error
    """
    lhs = estimate_value(model, theta, domain, functional, policies, x0, mc_config)
    if inner_domain is None:
        return DppResult(0.0, lhs.value, lhs.value, lhs.std_error)
    if value_table is None:
        raise ValueError('dpp_check needs a value table on the inner boundary')
    if not inner_domain.contains(x0):
        raise DomainError('start point {} is not inside the inner domain'.format(np.ravel(x0).tolist()))
    inner = Functional(value_table, functional.f, functional.mode)
    rhs = estimate_value(model, theta, inner_domain, inner, policies, x0, mc_config)
    se = math.sqrt(lhs.std_error ** 2 + rhs.std_error ** 2)
    return DppResult(abs(lhs.value - rhs.value), lhs.value, rhs.value, se)


def _family_mean(batches, quantity):
    return max(fsum_mean(quantity(b)) for b in batches)


def exit_time_gap(model, theta, domain, x0, dt_list, mc_config, policies=None):
    """
    Per dt, family maximum of mean(tau_closed - tau_open).

    Returns
    -------
    list of (dt, mean_gap)
    """
    policies, mc_config = _prepare(model, theta, domain, policies, x0, mc_config)
    out = []
    for dt in dt_list:
        batches = simulate_family(model, policies, domain, x0, mc_config, dt=dt)
        out.append((dt, _family_mean(batches, lambda b: b.tau_closed - b.tau_open)))
        logger().debug('dt = {}: gap {}'.format(dt, out[-1][1]))
    return out


def boundary_exit_decay(model, theta, domain, x_boundary, dt_list, mc_config, policies=None, tol=1e-12):
    """
    Per dt, family maximum of mean(min(tau_closed, 1)) from a boundary point.

    Raises
    ------
    DomainError
        x_boundary farther than tol from the boundary
    """
    x_boundary = np.atleast_1d(np.asarray(x_boundary, dtype=float))
    if abs(float(domain.signed_distance(x_boundary))) > tol:
        raise DomainError('{} is not on the boundary'.format(x_boundary.tolist()))
    policies, mc_config = _prepare(model, theta, domain, policies, x_boundary, mc_config)
    out = []
    for dt in dt_list:
        batches = simulate_family(model, policies, domain, x_boundary, mc_config, dt=dt, t_max=1.0)
        out.append((dt, _family_mean(batches, lambda b: np.minimum(b.tau_closed, 1.0))))
    return out


def continuity_modulus(model, theta, domain, x_list, functional, policies, mc_config):
    """
    Estimates at each point on common random numbers, with deviations between consecutive points.

    Returns
    -------
    table : pandas.DataFrame
        columns x, value, std_error, deviation, ratio (deviation over distance to the previous point)
    modulus : float
        largest ratio over consecutive pairs of distinct points
    """
    mc_config = mc_config.replace(common_random_numbers=True)
    rows = []
    previous = None
    for x in x_list:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        estimate = estimate_value(model, theta, domain, functional, policies, x, mc_config)
        deviation, ratio = float('nan'), float('nan')
        if previous is not None:
            deviation = abs(estimate.value - previous[1])
            distance = float(np.linalg.norm(x - previous[0]))
            ratio = deviation / distance if distance > 0 else float('nan')
        rows.append({'x': ';'.join(repr(float(c)) for c in x), 'value': estimate.value,
                     'std_error': estimate.std_error, 'deviation': deviation, 'ratio': ratio})
        previous = (x, estimate.value)
    table = pd.DataFrame(rows, columns=['x', 'value', 'std_error', 'deviation', 'ratio'])
    modulus = float(table['ratio'].max()) if table['ratio'].notna().any() else 0.0
    return table, modulus


def exit_time_continuity(model, theta, domain, x, neighbors, mc_config, policies=None):
    """
    Family maximum of mean |tau^x - tau^{x_k}| on common random numbers, per neighbor.

    Returns
    -------
    list of (distance, mean_gap)
    """
    mc_config = mc_config.replace(common_random_numbers=True)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    policies, mc_config = _prepare(model, theta, domain, policies, x, mc_config)
    base = simulate_family(model, policies, domain, x, mc_config)
    out = []
    for neighbor in neighbors:
        neighbor = np.atleast_1d(np.asarray(neighbor, dtype=float))
        moved = simulate_family(model, policies, domain, neighbor, mc_config)
        gap = max(fsum_mean(np.abs(a.tau_open - b.tau_open)) for a, b in zip(base, moved))
        out.append((float(np.linalg.norm(neighbor - x)), gap))
    return out


def erosion_gap(model, theta, domain, x0, eps_list, mc_config, policies=None):
    """
    Family maximum of mean(tau_Q - tau_{Q_eps}) for each erosion Q_eps of Q.

    Returns
    -------
    list of (eps, mean_gap)
    """
    mc_config = mc_config.replace(common_random_numbers=True)
    policies, mc_config = _prepare(model, theta, domain, policies, x0, mc_config)
    base = simulate_family(model, policies, domain, x0, mc_config)
    out = []
    for eps in eps_list:
        inner = domain.erode(eps)
        if not inner.contains(x0):
            raise DomainError('start point leaves the erosion by {}'.format(eps))
        eroded = simulate_family(model, policies, inner, x0, mc_config)
        out.append((eps, max(fsum_mean(a.tau_open - b.tau_open) for a, b in zip(base, eroded))))
    return out

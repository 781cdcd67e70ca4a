"""
Controlled Euler-Maruyama simulation of G-SDEs

Under a fixed policy the generalized G-Brownian increment is dB = gamma xi sqrt(dt) + mu dt with d<B> = gamma gamma^T dt,
so each policy realizes one measure of the representing family. Paths are simulated in vectorized batches; a batch
draws one (batch, d) block of unit normals per step from a Philox stream keyed by (seed, batch).
"""

__author__ = 'gsde developers'

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from gsde import geometry
from gsde.uncertainty import ControlValue
from gsde.utils import DomainError, KahanAccumulator, NumericalError, logger

ModelBounds = namedtuple('ModelBounds', ['C_b', 'C_sigma', 'lam'])


def _stack(expressions, X):
    X = np.atleast_2d(X)
    return np.stack([np.broadcast_to(e(X), X.shape[:-1]) for e in expressions], axis=-1)


class SdeModel(object):
    """
    dX = b(X) dt + sum_ij h_ij(X) d<B>_ij + sigma(X) dB

    Parameters
    ----------
    b : list of n Expression
    sigma : n x d nested list of Expression
    h : d x d nested list of (list of n Expression or None), optional
        must be structurally symmetric; None entries are zero
    bounds : ModelBounds, optional
        sup-norm bounds on Q-bar; estimated with estimate_bounds when missing
    """

    def __init__(self, b, sigma, h=None, bounds=None):
        self.b = list(b)
        self.sigma = [list(row) for row in sigma]
        self.n = len(self.b)
        if len(self.sigma) != self.n:
            raise ValueError('sigma has {} rows, drift has {} components'.format(len(self.sigma), self.n))
        self.d = len(self.sigma[0])
        if any(len(row) != self.d for row in self.sigma):
            raise ValueError('sigma rows must all have length {}'.format(self.d))
        self.h = {}
        if h is not None:
            if len(h) != self.d or any(len(row) != self.d for row in h):
                raise ValueError('h must be a {0} x {0} array of drift vectors'.format(self.d))
            for i in range(self.d):
                for j in range(self.d):
                    hij, hji = h[i][j], h[j][i]
                    if (hij is None) != (hji is None) or (hij is not None and list(hij) != list(hji)):
                        raise ValueError('h[{0}][{1}] and h[{1}][{0}] differ'.format(i, j))
                    if hij is not None:
                        if len(hij) != self.n:
                            raise ValueError('h[{}][{}] must have {} components'.format(i, j, self.n))
                        self.h[(i, j)] = list(hij)
        self.bounds = bounds
        for e in self.expressions():
            if e.max_index > self.n:
                raise ValueError('{!r} uses a coordinate beyond dimension {}'.format(e, self.n))

    def expressions(self):
        out = list(self.b)
        for row in self.sigma:
            out.extend(row)
        for hij in self.h.values():
            out.extend(hij)
        return out

    def drift(self, X):
        return _stack(self.b, X)

    def diffusion(self, X):
        """sigma at each point, shape (m, n, d)"""
        return np.stack([_stack(row, X) for row in self.sigma], axis=-2)

    def qv_drift(self, X, qv):
        """sum_ij h_ij(X) qv_ij, qv of shape (m, d, d) or (d, d)"""
        X = np.atleast_2d(X)
        out = np.zeros(X.shape)
        if not self.h:
            return out
        qv = np.broadcast_to(qv, X.shape[:1] + (self.d, self.d))
        for (i, j), hij in self.h.items():
            out += _stack(hij, X) * qv[:, i, j][:, np.newaxis]
        return out

    def advance(self, X, gamma, mu, dt, xi):
        """
        One Euler-Maruyama step for a batch.

        Parameters
        ----------
        X : array (m, n)
        gamma : array (m, d, d) or (d, d)
        mu : array (m, d) or (d,)
        dt : float
        xi : array (m, d), unit normals

        Returns
        -------
        array (m, n)

        Raises
        ------
        NumericalError
            a coefficient evaluated to NaN or Inf
        """
        X = np.atleast_2d(X)
        m = X.shape[0]
        gamma = np.broadcast_to(gamma, (m, self.d, self.d))
        mu = np.broadcast_to(mu, (m, self.d))
        xi = np.asarray(xi, dtype=float).reshape(m, self.d)
        dB = np.einsum('aij,aj->ai', gamma, xi) * math.sqrt(dt) + mu * dt
        out = X + self.drift(X) * dt + np.einsum('aij,aj->ai', self.diffusion(X), dB)
        if self.h:
            out += self.qv_drift(X, np.einsum('aik,ajk->aij', gamma, gamma)) * dt
        if not np.isfinite(out).all():
            bad = np.nonzero(~np.isfinite(out).all(axis=-1))[0][0]
            raise NumericalError('non-finite state after step from x = {}'.format(X[bad].tolist()))
        return out

    def covariance(self, X, gamma):
        """sigma gamma gamma^T sigma^T, shape (m, n, n)"""
        X = np.atleast_2d(X)
        gamma = np.broadcast_to(gamma, (X.shape[0], self.d, self.d))
        sg = np.einsum('aij,ajk->aik', self.diffusion(X), gamma)
        return np.einsum('aik,ajk->aij', sg, sg)

    def estimate_bounds(self, domain, n_samples=256):
        """
        Sup-norm bounds on Q-bar from quasi-random samples; supplied bounds take precedence.

        Returns
        -------
        ModelBounds
        """
        lam, c_sigma_sq = nondegeneracy_check(self, domain, n_samples)
        points = domain.sample_closure(n_samples)
        c_b = float(np.linalg.norm(self.drift(points), axis=-1).max())
        estimated = ModelBounds(c_b, math.sqrt(c_sigma_sq), lam)
        if self.bounds is None:
            return estimated
        return ModelBounds(*[s if s is not None else e for s, e in zip(self.bounds, estimated)])

    def to_dict(self):
        out = {'n': self.n, 'd': self.d, 'b': [e.text for e in self.b],
               'sigma': [[e.text for e in row] for row in self.sigma]}
        if self.h:
            out['h'] = [[[e.text for e in self.h[(i, j)]] if (i, j) in self.h else None for j in range(self.d)]
                        for i in range(self.d)]
        return out


class ConstantPolicy(object):
    """Always the same control."""
    kind = 'constant'

    def __init__(self, control, label=None):
        self.control = control
        self.label = label if label is not None else control.label

    def controls(self, t, X):
        m = np.atleast_2d(X).shape[0]
        return (np.broadcast_to(self.control.gamma, (m,) + self.control.gamma.shape),
                np.broadcast_to(self.control.mu, (m,) + self.control.mu.shape))

    def members(self):
        return [self.control]

    def __repr__(self):
        return 'ConstantPolicy({})'.format(self.label)


class GridFeedbackPolicy(object):
    """
    Per-node controls of a solved grid, looked up at the nearest node.

    Parameters
    ----------
    coordinates : array (k, n)
    index : array (k,) of int, position into controls
    controls : list of ControlValue
    """
    kind = 'grid-feedback'

    def __init__(self, coordinates, index, controls, label='pde-feedback'):
        self.coordinates = np.atleast_2d(np.asarray(coordinates, dtype=float))
        self.index = np.asarray(index, dtype=int)
        self._controls = list(controls)
        self._gammas = np.array([c.gamma for c in self._controls])
        self._mus = np.array([c.mu for c in self._controls])
        self._tree = cKDTree(self.coordinates)
        self.label = label

    def controls(self, t, X):
        _, nearest = self._tree.query(np.atleast_2d(X))
        k = self.index[nearest]
        return self._gammas[k], self._mus[k]

    def control_at(self, x):
        _, nearest = self._tree.query(np.atleast_1d(np.asarray(x, dtype=float)))
        return self._controls[self.index[nearest]]

    def members(self):
        return [self._controls[k] for k in np.unique(self.index)]

    def __repr__(self):
        return 'GridFeedbackPolicy({}, {} nodes)'.format(self.label, self.coordinates.shape[0])


class NoiseStream(object):
    """
    Counter-based random numbers for one batch of paths.

    Normals come from Philox keyed by (seed, batch, 0) and bridge uniforms from (seed, batch, 1); extra key entries
    (the policy index when common random numbers are off) are appended.
    """

    def __init__(self, seed, batch, size, d, extra=()):
        self.size = size
        self.d = d
        key = [int(seed), int(batch)]
        self._normals = np.random.Generator(np.random.Philox(np.random.SeedSequence(key + [0] + list(extra))))
        self._uniforms = np.random.Generator(np.random.Philox(np.random.SeedSequence(key + [1] + list(extra))))

    def normals(self):
        return self._normals.standard_normal((self.size, self.d))

    def uniforms(self):
        return self._uniforms.random(self.size)


@dataclass
class ExitSample(object):
    tau_open: float
    tau_closed: float
    exit_point: np.ndarray
    running_cost: float
    censored: bool
    steps: int


@dataclass
class RecordedPath(object):
    """States at times[k] and the controls applied over [times[k], times[k+1]]; active marks moving rows."""
    times: np.ndarray
    states: np.ndarray
    gammas: np.ndarray
    mus: np.ndarray
    active: np.ndarray

    def select(self, row):
        return RecordedPath(self.times, self.states[:, row:row + 1], self.gammas[:, row:row + 1],
                            self.mus[:, row:row + 1], self.active[:, row:row + 1])


@dataclass
class ExitBatch(object):
    tau_open: np.ndarray
    tau_closed: np.ndarray
    exit_point: np.ndarray
    running_cost: np.ndarray
    censored: np.ndarray
    steps: np.ndarray
    path: RecordedPath = field(default=None)

    def __len__(self):
        return self.tau_open.shape[0]

    def sample(self, row):
        return ExitSample(float(self.tau_open[row]), float(self.tau_closed[row]), self.exit_point[row].copy(),
                          float(self.running_cost[row]), bool(self.censored[row]), int(self.steps[row]))


def step(model, control, x, dt, xi):
    """
    x' = x + b dt + sum_ij h_ij (gamma gamma^T)_ij dt + sigma (gamma xi sqrt(dt) + mu dt)

    Parameters
    ----------
    model : SdeModel
    control : ControlValue
    x : array-like (n,)
    dt : float > 0
    xi : array-like (d,)
    """
    if dt <= 0:
        raise ValueError('dt must be positive')
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return model.advance(x[np.newaxis], control.gamma, control.mu, dt, np.atleast_1d(xi)[np.newaxis])[0]


def n_steps(dt, t_max):
    return int(math.ceil(t_max / dt - 1e-9))


def simulate_batch(model, policy, domain, x0, dt, t_max, stream, f=None, refinement=geometry.AUTO, record=False):
    """
    Simulate stream.size paths from x0 until they leave Q-bar or reach t_max.

    tau_open follows the refinement; tau_closed is the first grid time strictly outside Q-bar. The running cost
    integrates f with the left endpoint up to tau_open, with a partial last step. Paths not out of Q by t_max are
    censored with both times equal to t_max.

    Returns
    -------
    ExitBatch
    """
    if dt <= 0 or t_max < dt:
        raise ValueError('need dt > 0 and t_max >= dt, got dt = {} and t_max = {}'.format(dt, t_max))
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not np.isfinite(x0).all():
        raise DomainError('start point {} is not finite'.format(x0.tolist()))
    m, n = stream.size, model.n
    X = np.tile(x0, (m, 1))
    level0 = float(domain.level(x0))
    open_alive = np.full(m, level0 < 0)
    closed_alive = np.full(m, level0 <= 0)
    tau_open = np.zeros(m)
    tau_closed = np.zeros(m)
    exit_point = X.copy()
    steps = np.zeros(m, dtype=int)
    cost = KahanAccumulator(m)
    total = n_steps(dt, t_max)
    history = [] if record else None

    for k in range(total):
        if not closed_alive.any():
            break
        t = k * dt
        xi = stream.normals()
        uniforms = stream.uniforms()
        rows = np.nonzero(closed_alive)[0]
        Xa = X[rows]
        gamma, mu = policy.controls(t, Xa)
        Xn = model.advance(Xa, gamma, mu, dt, xi[rows])
        event = geometry.exit_event(domain, Xa, Xn, dt, refinement, covariance=model.covariance(Xa, gamma),
                                    uniforms=uniforms[rows])
        running = open_alive[rows]
        if running.any():
            weight = np.where(event.open_mask[running], event.open_fraction[running], 1.0) * dt
            if f is not None:
                fx = np.broadcast_to(f(Xa[running]), weight.shape)
                if not np.isfinite(fx).all():
                    raise NumericalError('running cost is not finite near {}'.format(
                        Xa[running][~np.isfinite(fx)][0].tolist()))
                cost.add(rows[running], fx * weight)
            leaving = running & event.open_mask
            out = rows[leaving]
            tau_open[out] = t + event.open_fraction[leaving] * dt
            exit_point[out] = event.open_point[leaving]
            open_alive[out] = False
        gone = rows[event.closed_mask]
        tau_closed[gone] = (k + 1) * dt
        closed_alive[gone] = False
        steps[rows] = k + 1
        if record:
            g_full = np.zeros((m, model.d, model.d))
            mu_full = np.zeros((m, model.d))
            g_full[rows], mu_full[rows] = gamma, mu
            active = np.zeros(m, dtype=bool)
            active[rows] = True
            history.append((X.copy(), g_full, mu_full, active))
        X[rows] = Xn

    censored = open_alive.copy()
    cap = total * dt
    tau_open[censored] = cap
    exit_point[censored] = X[censored]
    tau_closed[closed_alive] = cap
    path = None
    if record:
        states = np.array([h[0] for h in history] + [X.copy()])
        path = RecordedPath(dt * np.arange(len(history) + 1), states, np.array([h[1] for h in history]),
                            np.array([h[2] for h in history]), np.array([h[3] for h in history]))
    logger().debug('batch of {} paths: {} censored, {} steps'.format(m, int(censored.sum()), int(steps.max())))
    return ExitBatch(tau_open, tau_closed, exit_point, cost.total.copy(), censored, steps, path)


def simulate_to_exit(model, policy, theta, domain, x0, dt, t_max, rng_stream, f=None, refinement=geometry.AUTO,
                     record=False):
    """
    Single-path exit simulation.

    Parameters
    ----------
    model : SdeModel
    policy : ConstantPolicy or GridFeedbackPolicy
    theta : UncertaintySet
        every control the policy can return must be represented
    domain : Domain
    x0 : array-like (n,)
    dt, t_max : float
    rng_stream : NoiseStream of size 1
    f : Expression, optional
        running cost
    refinement : str
    record : bool
        also return the RecordedPath

    Returns
    -------
    ExitSample, or (ExitSample, RecordedPath) when record is set
    """
    check_policy(policy, theta)
    batch = simulate_batch(model, policy, domain, x0, dt, t_max, rng_stream, f, refinement, record)
    if record:
        return batch.sample(0), batch.path.select(0)
    return batch.sample(0)


def check_policy(policy, theta):
    for control in policy.members():
        if not theta.represents(control):
            raise ValueError('policy {!r} returns {!r}, which the uncertainty set does not represent'.format(
                policy, control))


def ito_residual(model, policy, h_test, grad, hess, path):
    """
    |h(X_T) - h(x_0) - sum_k [<Dh(X_k), dX_k> + 1/2 <D^2h(X_k), sigma gamma gamma^T sigma^T> dt]| along a path.

    Parameters
    ----------
    model : SdeModel
    policy : policy used to fill controls when the path carries none
    h_test : Expression
    grad : list of n Expression
    hess : n x n nested list of Expression
    path : RecordedPath, states of shape (K + 1, m, n)

    Returns
    -------
    float for a single recorded path, array (m,) otherwise
    """
    if len(grad) != model.n or len(hess) != model.n or any(len(row) != model.n for row in hess):
        raise ValueError('derivatives must match state dimension {}'.format(model.n))
    states = path.states
    if states.shape[-1] != model.n:
        raise ValueError('path has dimension {}, model {}'.format(states.shape[-1], model.n))
    K, m = states.shape[0] - 1, states.shape[1]
    predicted = KahanAccumulator(m)
    for k in range(K):
        X = states[k]
        active = path.active[k]
        if not active.any():
            continue
        if path.gammas is not None:
            gamma = path.gammas[k]
        else:
            gamma, _ = policy.controls(path.times[k], X)
        dt = path.times[k + 1] - path.times[k]
        dX = states[k + 1] - X
        first = np.einsum('ai,ai->a', _stack(grad, X), dX)
        H = np.stack([_stack(row, X) for row in hess], axis=-2)
        second = 0.5 * np.einsum('aij,aij->a', H, model.covariance(X, gamma)) * dt
        rows = np.nonzero(active)[0]
        predicted.add(rows, (first + second)[rows])
    actual = np.asarray(h_test(states[-1]), dtype=float) - np.asarray(h_test(states[0]), dtype=float)
    residual = np.abs(actual - predicted.total)
    return float(residual[0]) if m == 1 else residual


def nondegeneracy_check(model, domain, n_samples):
    """
    Extreme eigenvalues of sigma sigma^T over quasi-random samples of Q-bar.

    Returns
    -------
    lambda_hat : float
        smallest eigenvalue
    c_sigma_sq_hat : float
        largest eigenvalue
    """
    if n_samples < 1:
        raise ValueError('n_samples must be at least 1')
    points = domain.sample_closure(max(n_samples, 1))
    if points.shape[0] == 0:
        raise DomainError('no sample of {!r} lies in its closure'.format(domain))
    S = model.diffusion(points)
    eig = np.linalg.eigvalsh(np.einsum('aik,ajk->aij', S, S))
    return float(eig[:, 0].min()), float(eig[:, -1].max())

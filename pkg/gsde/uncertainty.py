"""
Uncertainty sets for generalized G-Brownian motion

An UncertaintySet is a finite representation of the set Theta of admissible (gamma, mu) pairs. It evaluates the
sublinear generator

    G(A, p) = max over (gamma, mu) of  1/2 <A, gamma gamma^T> + <p, mu>

picks the maximizing control and reports the ellipticity parameters (sigma_low^2, sigma_high^2, beta). For diag-box
sets and diagonal A the maximum over the corners is exact; for other sets the value is a lower bound of the
supremum over the convex hull in gamma.
"""

__author__ = 'gsde developers'

import itertools
import warnings
from collections import namedtuple

import numpy as np

from gsde.utils import DegenerateSetError, logger

SINGLETON = 'singleton'
DIAG_BOX = 'diag-box'
VERTEX_LIST = 'vertex-list'

EllipticityParams = namedtuple('EllipticityParams', ['sigma_low_sq', 'sigma_high_sq', 'beta', 'degenerate'])


class ControlValue(object):
    """
    One admissible control (gamma, mu): gamma gamma^T is the density of <B>, mu the density of the drift of B.

    Parameters
    ----------
    gamma : array-like (d, d) or scalar for d = 1
    mu : array-like (d,) or scalar for d = 1
    label : str, optional
    """

    def __init__(self, gamma, mu=None, label=None):
        gamma = np.atleast_2d(np.array(gamma, dtype=float))
        d = gamma.shape[0]
        if gamma.shape != (d, d):
            raise ValueError('gamma must be square, got shape {}'.format(gamma.shape))
        if mu is None:
            mu = np.zeros(d)
        mu = np.atleast_1d(np.array(mu, dtype=float))
        if mu.shape != (d,):
            raise ValueError('mu must have length {}, got shape {}'.format(d, mu.shape))
        if not (np.isfinite(gamma).all() and np.isfinite(mu).all()):
            raise ValueError('control entries must be finite')
        self.gamma = gamma
        self.mu = mu
        self.gamma.setflags(write=False)
        self.mu.setflags(write=False)
        self.label = label

    @property
    def d(self):
        return self.mu.shape[0]

    @property
    def qv_density(self):
        """gamma gamma^T"""
        return self.gamma.dot(self.gamma.T)

    def hamiltonian(self, A, p):
        """1/2 <A, gamma gamma^T> + <p, mu>"""
        return 0.5 * float(np.sum(A * self.qv_density)) + float(np.dot(p, self.mu))

    def __eq__(self, other):
        return (isinstance(other, ControlValue) and np.array_equal(self.gamma, other.gamma) and
                np.array_equal(self.mu, other.mu))

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        # -0.0 == 0.0
        return hash(((self.gamma + 0.0).tobytes(), (self.mu + 0.0).tobytes()))

    def __repr__(self):
        return 'ControlValue(gamma={}, mu={})'.format(self.gamma.tolist(), self.mu.tolist())

    def to_dict(self):
        return {'gamma': self.gamma.tolist(), 'mu': self.mu.tolist()}


class UncertaintySet(object):
    """
    Finite representation of Theta.

    Use the constructors singleton, diag_box and vertex_list rather than calling __init__ directly.

    Attributes
    ----------
    kind : str
    d : int
        noise dimension
    vertices : list of ControlValue
        represented controls, lexicographically ordered for diag-box sets
    sigma_low, sigma_high : float
        diag-box only
    beta_vector : numpy.ndarray
        diag-box only
    """

    def __init__(self, kind, d, vertices, sigma_low=None, sigma_high=None, beta_vector=None):
        if not vertices:
            raise ValueError('uncertainty set must be nonempty')
        self.kind = kind
        self.d = d
        self.vertices = list(vertices)
        for i, v in enumerate(self.vertices):
            if v.d != d:
                raise ValueError('vertex {} has dimension {}, expected {}'.format(i, v.d, d))
            if v.label is None:
                v.label = 'vertex-{}'.format(i)
        self.sigma_low = sigma_low
        self.sigma_high = sigma_high
        self.beta_vector = beta_vector
        self._params = self._ellipticity()
        self._gammas = np.array([v.gamma for v in self.vertices])
        self._mus = np.array([v.mu for v in self.vertices])
        self._qv = np.einsum('kij,klj->kil', self._gammas, self._gammas)

    @classmethod
    def singleton(cls, gamma, mu=None):
        control = ControlValue(gamma, mu)
        return cls(SINGLETON, control.d, [control])

    @classmethod
    def diag_box(cls, sigma_low, sigma_high, beta=0.0, d=None):
        """
        Diagonal gamma with entries in [sigma_low, sigma_high], mu_i in [-beta_i, beta_i].

        Parameters
        ----------
        sigma_low : float >= 0
        sigma_high : float >= sigma_low
        beta : float or array-like (d,)
        d : int, optional. Inferred from beta when omitted.
        """
        if sigma_low < 0 or sigma_high < sigma_low:
            raise ValueError('need 0 <= sigma_low <= sigma_high, got {} and {}'.format(sigma_low, sigma_high))
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        if d is None:
            d = beta.shape[0]
        if beta.shape[0] == 1 and d > 1:
            beta = np.repeat(beta, d)
        if beta.shape != (d,) or (beta < 0).any():
            raise ValueError('beta must be a nonnegative vector of length {}'.format(d))
        gamma_levels = sorted(set([float(sigma_low), float(sigma_high)]))
        vertices = []
        # lexicographic: gamma axis by axis, then mu axis by axis
        for gammas in itertools.product(gamma_levels, repeat=d):
            mu_levels = [sorted([-b, b]) if b > 0 else [0.0] for b in beta]
            for mus in itertools.product(*mu_levels):
                vertices.append(ControlValue(np.diag(gammas), np.array(mus)))
        return cls(DIAG_BOX, d, vertices, sigma_low=float(sigma_low), sigma_high=float(sigma_high),
                   beta_vector=beta)

    @classmethod
    def vertex_list(cls, controls):
        controls = [c if isinstance(c, ControlValue) else ControlValue(*c) for c in controls]
        if not controls:
            raise ValueError('vertex list must be nonempty')
        return cls(VERTEX_LIST, controls[0].d, controls)

    def _ellipticity(self):
        low, high, beta = np.inf, 0.0, 0.0
        for v in self.vertices:
            eig = np.linalg.eigvalsh(v.qv_density)
            low = min(low, float(eig[0]))
            high = max(high, float(eig[-1]))
            beta = max(beta, float(np.linalg.norm(v.mu)))
        if self.kind == DIAG_BOX:
            low, high = self.sigma_low ** 2, self.sigma_high ** 2
            beta = float(np.linalg.norm(self.beta_vector))
        low = max(low, 0.0)
        return EllipticityParams(low, high, beta, low <= 0.0)

    def represents(self, control):
        return any(control == v for v in self.vertices)

    def index_of(self, control):
        for i, v in enumerate(self.vertices):
            if control == v:
                return i
        raise ValueError('{!r} is not represented by this uncertainty set'.format(control))

    def _check(self, A, p):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if p is None:
            p = np.zeros(self.d)
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if A.shape != (self.d, self.d) or p.shape != (self.d,):
            raise ValueError('dimension mismatch: A {} and p {} for d = {}'.format(A.shape, p.shape, self.d))
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError('A must be symmetric')
        if self.kind == DIAG_BOX and np.count_nonzero(A - np.diag(np.diag(A))):
            raise ValueError('diag-box sets only evaluate G on diagonal A; use a vertex-list set for cross terms')
        return A, p

    def hamiltonians(self, A, p):
        """1/2 <A, gamma gamma^T> + <p, mu> for every vertex, shape (n_vertices,)"""
        A, p = self._check(A, p)
        return 0.5 * np.einsum('ij,kij->k', A, self._qv) + self._mus.dot(p)

    def argmax_index(self, A, p=None):
        A, p = self._check(A, p)
        if self.kind == DIAG_BOX:
            a = np.diag(A)
            # positive curvature picks sigma_high, otherwise the smaller corner
            gammas = np.where(a > 0, self.sigma_high, self.sigma_low)
            mus = np.where(p > 0, self.beta_vector, -self.beta_vector)
            return self.index_of(ControlValue(np.diag(gammas), mus))
        values = 0.5 * np.einsum('ij,kij->k', A, self._qv) + self._mus.dot(p)
        return int(np.argmax(values))

    def argmax_control(self, A, p=None):
        """
        Represented control attaining eval_G; ties go to the lowest index (smallest corner for diag-box sets).

        Parameters
        ----------
        A : array-like (d, d), symmetric
        p : array-like (d,)

        Returns
        -------
        ControlValue
        """
        return self.vertices[self.argmax_index(A, p)]

    def eval_G(self, A, p=None):
        """
        G(A, p) over the represented controls.

        Parameters
        ----------
        A : array-like (d, d), symmetric. Diagonal for diag-box sets.
        p : array-like (d,), default zero

        Returns
        -------
        float
        """
        A, p = self._check(A, p)
        if self.kind == DIAG_BOX:
            return self.argmax_control(A, p).hamiltonian(A, p)
        return float(np.max(self.hamiltonians(A, p)))

    def ellipticity_params(self, require_elliptic=False):
        """
        Tightest (sigma_low^2, sigma_high^2, beta) over the representation.

        Parameters
        ----------
        require_elliptic : bool
            raise DegenerateSetError instead of warning when sigma_low^2 = 0

        Returns
        -------
        EllipticityParams
        """
        if self._params.degenerate:
            msg = 'uncertainty set is degenerate: sigma_low^2 = 0'
            if require_elliptic:
                raise DegenerateSetError(msg)
            warnings.warn(msg)
            logger().warning(msg)
        return self._params

    def to_dict(self):
        if self.kind == DIAG_BOX:
            return {'kind': DIAG_BOX, 'sigma_low': self.sigma_low, 'sigma_high': self.sigma_high,
                    'beta': self.beta_vector.tolist(), 'd': self.d}
        if self.kind == SINGLETON:
            out = self.vertices[0].to_dict()
            out['kind'] = SINGLETON
            return out
        return {'kind': VERTEX_LIST, 'vertices': [v.to_dict() for v in self.vertices]}

    def __repr__(self):
        return 'UncertaintySet({}, d={}, {} vertices)'.format(self.kind, self.d, len(self.vertices))


def ellipticity_params(theta, require_elliptic=False):
    return theta.ellipticity_params(require_elliptic)


def eval_G(theta, A, p=None):
    return theta.eval_G(A, p)


def argmax_control(theta, A, p=None):
    return theta.argmax_control(A, p)

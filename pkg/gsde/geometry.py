"""
Bounded open domains Q

Catalog kinds (interval, box, ball, annulus) have exact signed distances; implicit domains Q = {g < 0} use the level
function g for membership and an approximate distance found by bisection along the gradient ray.

All point arguments are numpy arrays of shape (n,) or (..., n). The level function is negative in Q, zero on the
boundary and positive outside Q-bar.
"""

__author__ = 'gsde developers'

import enum
from collections import namedtuple

import numpy as np
from scipy.stats import qmc

from gsde.utils import DomainError, logger

GRID = 'grid'
INTERPOLATE = 'interpolate'
BRIDGE = 'bridge'
AUTO = 'auto'
REFINEMENTS = (GRID, INTERPOLATE, BRIDGE, AUTO)


class ExteriorBall(enum.Enum):
    SATISFIED = 'Satisfied'
    VIOLATED = 'Violated'
    UNKNOWN = 'Unknown'


ExitEvent = namedtuple('ExitEvent', ['open_mask', 'open_fraction', 'open_point', 'closed_mask'])
BallCertificate = namedtuple('BallCertificate', ['boundary_point', 'center', 'radius'])


def _points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return x


def _unit(v):
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    e1 = np.zeros(v.shape[-1])
    e1[0] = 1.0
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(norm > 0, v / norm, e1)


class Domain(object):
    """
    Base class of bounded open sets.

    Attributes
    ----------
    kind : str
    dim : int
    exact_distance : bool
    """
    kind = None
    exact_distance = True
    has_faces = True

    def level(self, x):
        raise NotImplementedError

    def signed_distance(self, x):
        return self.level(x)

    def bounding_box(self):
        raise NotImplementedError

    @property
    def diameter(self):
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def contains(self, x, closed=False):
        """
        Membership in Q (open) or Q-bar (closed).

        Parameters
        ----------
        x : array-like (n,) or (..., n)
        closed : bool

        Returns
        -------
        bool or boolean array
        """
        x = _points(x)
        if np.isnan(x).any():
            raise DomainError('NaN coordinate in {}'.format(x))
        level = self.level(x)
        inside = level <= 0 if closed else level < 0
        if np.ndim(inside) == 0:
            return bool(inside)
        return inside

    def erode(self, eps):
        raise DomainError('{} domains do not support erosion'.format(self.kind))

    def dilate(self, eps):
        raise DomainError('{} domains do not support dilation'.format(self.kind))

    def exterior_ball(self):
        return ExteriorBall.SATISFIED

    def exterior_radius(self):
        """Radius of an exterior ball available at every boundary point."""
        return 0.25 * self.diameter

    def faces(self, x):
        """
        Local half-space description used by the Brownian-bridge test.

        Returns
        -------
        distances : array (..., F)
            distance to each face, positive inside
        normals : array (..., F, n)
            outward unit normals
        """
        raise NotImplementedError

    def project(self, x):
        """Nearest boundary point."""
        raise NotImplementedError

    def boundary_samples(self, count):
        """Points on the boundary, used to reach extremes when sampling Q-bar."""
        return np.zeros((0, self.dim))

    def sample_closure(self, count, seed=0):
        """
        Quasi-random points of Q-bar: Halton points of the bounding box kept when in Q-bar, plus boundary samples.

        Parameters
        ----------
        count : int
            number of Halton points drawn in the bounding box
        seed : int
        """
        lo, hi = self.bounding_box()
        sampler = qmc.Halton(d=self.dim, scramble=True, seed=seed)
        cloud = qmc.scale(sampler.random(count), lo, hi) if self.dim > 1 else lo + (hi - lo) * sampler.random(count)
        cloud = cloud[self.level(cloud) <= 0]
        return np.concatenate([cloud, self.boundary_samples(max(2, count // 16))], axis=0)

    def to_dict(self):
        raise NotImplementedError

    def __repr__(self):
        return '{}({})'.format(type(self).__name__, self.to_dict())


class Box(Domain):
    """Open box prod (lo_i, hi_i)."""
    kind = 'box'

    def __init__(self, lo, hi):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise DomainError('box corners must be vectors of equal length')
        if not (np.isfinite(self.lo).all() and np.isfinite(self.hi).all()):
            raise DomainError('box corners must be finite')
        if (self.hi <= self.lo).any():
            raise DomainError('empty box: lo {} hi {}'.format(self.lo, self.hi))
        self.dim = self.lo.shape[0]

    def _gaps(self, x):
        return np.maximum(self.lo - x, x - self.hi)

    def level(self, x):
        x = _points(x)
        s = self._gaps(x)
        outside = np.linalg.norm(np.maximum(s, 0.0), axis=-1)
        return outside + np.minimum(s.max(axis=-1), 0.0)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def erode(self, eps):
        if eps <= 0:
            raise DomainError('eps must be positive')
        lo, hi = self.lo + eps, self.hi - eps
        if (hi <= lo).any():
            raise DomainError('erosion by {} empties {!r}'.format(eps, self))
        return self._like(lo, hi)

    def dilate(self, eps):
        # per-side growth; contains the rounded-corner dilation
        if eps <= 0:
            raise DomainError('eps must be positive')
        return self._like(self.lo - eps, self.hi + eps)

    def _like(self, lo, hi):
        return Box(lo, hi)

    def faces(self, x):
        x = _points(x)
        distances = np.concatenate([x - self.lo, self.hi - x], axis=-1)
        eye = np.eye(self.dim)
        normals = np.concatenate([-eye, eye], axis=0)
        return distances, np.broadcast_to(normals, x.shape[:-1] + normals.shape)

    def project(self, x):
        x = _points(x)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        out = np.clip(x, self.lo, self.hi)
        inside = (self._gaps(x) < 0).all(axis=-1)
        if inside.any():
            xi = x[inside]
            distances, _ = self.faces(xi)
            face = distances.argmin(axis=-1)
            axis = face % self.dim
            upper = face >= self.dim
            projected = xi.copy()
            rows = np.arange(xi.shape[0])
            projected[rows, axis] = np.where(upper, self.hi[axis], self.lo[axis])
            out[inside] = projected
        return out[0] if single else out

    def boundary_samples(self, count):
        corners = np.array(np.meshgrid(*zip(self.lo, self.hi), indexing='ij')).reshape(self.dim, -1).T
        return corners

    def to_dict(self):
        return {'kind': self.kind, 'lo': self.lo.tolist(), 'hi': self.hi.tolist()}


class Interval(Box):
    """Open interval (a, b)."""
    kind = 'interval'

    def __init__(self, a, b):
        super(Interval, self).__init__([a], [b])

    @property
    def a(self):
        return float(self.lo[0])

    @property
    def b(self):
        return float(self.hi[0])

    def _like(self, lo, hi):
        return Interval(lo[0], hi[0])

    def to_dict(self):
        return {'kind': self.kind, 'a': self.a, 'b': self.b}


class Ball(Domain):
    """Open ball |x - center| < radius."""
    kind = 'ball'

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise DomainError('ball radius must be positive')
        self.dim = self.center.shape[0]

    def _rho(self, x):
        return np.linalg.norm(_points(x) - self.center, axis=-1)

    def level(self, x):
        return self._rho(x) - self.radius

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def erode(self, eps):
        if eps <= 0:
            raise DomainError('eps must be positive')
        if self.radius - eps <= 0:
            raise DomainError('erosion by {} empties {!r}'.format(eps, self))
        return Ball(self.center, self.radius - eps)

    def dilate(self, eps):
        if eps <= 0:
            raise DomainError('eps must be positive')
        return Ball(self.center, self.radius + eps)

    def faces(self, x):
        x = _points(x)
        u = _unit(x - self.center)
        return (self.radius - self._rho(x))[..., np.newaxis], u[..., np.newaxis, :]

    def project(self, x):
        x = _points(x)
        return self.center + self.radius * _unit(x - self.center)

    def boundary_samples(self, count):
        return self.center + self.radius * _sphere_points(self.dim, count)

    def to_dict(self):
        return {'kind': self.kind, 'center': self.center.tolist(), 'radius': self.radius}


class Annulus(Domain):
    """Open shell r_inner < |x - center| < r_outer; non-convex, with exterior balls at every boundary point."""
    kind = 'annulus'

    def __init__(self, center, r_inner, r_outer):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.r_inner = float(r_inner)
        self.r_outer = float(r_outer)
        if not 0 < self.r_inner < self.r_outer:
            raise DomainError('annulus needs 0 < r_inner < r_outer')
        self.dim = self.center.shape[0]

    def _rho(self, x):
        return np.linalg.norm(_points(x) - self.center, axis=-1)

    def level(self, x):
        rho = self._rho(x)
        return np.maximum(self.r_inner - rho, rho - self.r_outer)

    def bounding_box(self):
        return self.center - self.r_outer, self.center + self.r_outer

    def erode(self, eps):
        if eps <= 0:
            raise DomainError('eps must be positive')
        if self.r_inner + eps >= self.r_outer - eps:
            raise DomainError('erosion by {} empties {!r}'.format(eps, self))
        return Annulus(self.center, self.r_inner + eps, self.r_outer - eps)

    def dilate(self, eps):
        if eps <= 0:
            raise DomainError('eps must be positive')
        if self.r_inner - eps <= 0:
            return Ball(self.center, self.r_outer + eps)
        return Annulus(self.center, self.r_inner - eps, self.r_outer + eps)

    def faces(self, x):
        x = _points(x)
        rho = self._rho(x)
        u = _unit(x - self.center)
        distances = np.stack([rho - self.r_inner, self.r_outer - rho], axis=-1)
        normals = np.stack([-u, u], axis=-2)
        return distances, normals

    def project(self, x):
        x = _points(x)
        rho = self._rho(x)
        radius = np.where(rho < 0.5 * (self.r_inner + self.r_outer), self.r_inner, self.r_outer)
        return self.center + radius[..., np.newaxis] * _unit(x - self.center)

    def boundary_samples(self, count):
        sphere = _sphere_points(self.dim, max(1, count // 2))
        return np.concatenate([self.center + self.r_inner * sphere, self.center + self.r_outer * sphere])

    def exterior_radius(self):
        # inner boundary balls live in the hole
        return min(0.25 * self.diameter, self.r_inner)

    def to_dict(self):
        return {'kind': self.kind, 'center': self.center.tolist(), 'r_inner': self.r_inner,
                'r_outer': self.r_outer}


class Implicit(Domain):
    """
    Q = {g < 0} inside a user bounding box.

    Distances are approximate (bisection along the gradient ray) and the exterior ball condition is only ever
    searched for, never assumed.
    """
    kind = 'implicit'
    exact_distance = False
    has_faces = False

    def __init__(self, g, lo, hi):
        self.g = g
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if (self.hi <= self.lo).any():
            raise DomainError('empty bounding box')
        self.dim = self.lo.shape[0]
        if g.max_index > self.dim:
            raise DomainError('level set uses x{} in dimension {}'.format(g.max_index, self.dim))
        self._h = 1e-6 * float(np.linalg.norm(self.hi - self.lo))
        self._search = None

    def level(self, x):
        x = _points(x)
        return np.asarray(self.g(x), dtype=float)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def gradient(self, x):
        x = np.atleast_2d(_points(x))
        grad = np.empty_like(x)
        for i in range(self.dim):
            step = np.zeros(self.dim)
            step[i] = self._h
            grad[:, i] = (self.level(x + step) - self.level(x - step)) / (2 * self._h)
        return grad

    def signed_distance(self, x, iterations=60):
        x = _points(x)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        g0 = self.level(X)
        direction = _unit(self.gradient(X))
        # inside: walk up the gradient; outside: walk down
        sign = np.where(g0 < 0, 1.0, -1.0)
        reach = 2 * self.diameter
        t_lo = np.zeros(X.shape[0])
        t_hi = np.full(X.shape[0], 1e-3 * self.diameter)
        found = g0 == 0
        for _ in range(64):
            g_hi = self.level(X + (sign * t_hi)[:, np.newaxis] * direction)
            bracketed = (np.sign(g_hi) != np.sign(g0)) | (g_hi == 0)
            found = found | bracketed
            grow = ~found & (t_hi < reach)
            if not grow.any():
                break
            t_lo = np.where(grow, t_hi, t_lo)
            t_hi = np.where(grow, 2 * t_hi, t_hi)
        for _ in range(iterations):
            mid = 0.5 * (t_lo + t_hi)
            g_mid = self.level(X + (sign * mid)[:, np.newaxis] * direction)
            same = np.sign(g_mid) == np.sign(g0)
            t_lo = np.where(same, mid, t_lo)
            t_hi = np.where(same, t_hi, mid)
        distance = np.where(g0 == 0, 0.0, np.where(found, t_hi, np.inf))
        sd = np.where(g0 < 0, -distance, distance)
        return sd[0] if single else sd

    def project(self, x):
        x = _points(x)
        sd = self.signed_distance(x)
        direction = _unit(self.gradient(np.atleast_2d(x)))
        if x.ndim == 1:
            direction = direction[0]
        return x - np.asarray(sd)[..., np.newaxis] * direction

    def exterior_ball(self):
        status, _ = self.search_exterior_balls()
        return status

    def exterior_radius(self):
        status, certificates = self.search_exterior_balls()
        if status is not ExteriorBall.SATISFIED:
            return None
        return min(c.radius for c in certificates)

    def search_exterior_balls(self, n_cloud=1024, n_candidates=64, n_ball_samples=64, r0=None, r_min=None, seed=0):
        """
        Search tangent exterior balls at sampled boundary points.

        Boundary candidates are the Halton cloud points closest to the zero level set, refined by Newton steps. At
        each candidate the ball of radius r touching the boundary along the outward normal is accepted when g >= 0
        on all its sample points, trying r0, r0/2, ... down to r_min.

        Returns
        -------
        status : ExteriorBall
            SATISFIED when every candidate has a certificate, UNKNOWN otherwise
        certificates : list of BallCertificate
        """
        if self._search is not None:
            return self._search
        diam = self.diameter
        r0 = 0.25 * diam if r0 is None else r0
        r_min = 1e-3 * diam if r_min is None else r_min
        sampler = qmc.Halton(d=self.dim, scramble=True, seed=seed)
        cloud = self.lo + (self.hi - self.lo) * sampler.random(n_cloud)
        g = self.level(cloud)
        grad_norm = np.linalg.norm(self.gradient(cloud), axis=-1)
        with np.errstate(divide='ignore', invalid='ignore'):
            estimate = np.where(grad_norm > 0, np.abs(g) / grad_norm, np.inf)
        candidates = cloud[np.argsort(estimate, kind='stable')[:n_candidates]]

        ball_sampler = qmc.Halton(d=self.dim, scramble=True, seed=seed + 1)
        offsets = 2 * ball_sampler.random(4 * n_ball_samples) - 1
        offsets = offsets[np.linalg.norm(offsets, axis=-1) < 1][:n_ball_samples]

        certificates = []
        failures = 0
        for point in candidates:
            boundary = self._newton(point)
            if boundary is None:
                failures += 1
                continue
            normal = self.gradient(boundary)[0]
            norm = np.linalg.norm(normal)
            if norm < 1e-12:
                failures += 1
                continue
            normal = normal / norm
            radius = r0
            certificate = None
            while radius >= r_min:
                center = boundary + radius * normal
                if (self.level(center + 0.999 * radius * offsets) >= 0).all():
                    certificate = BallCertificate(boundary, center, radius)
                    break
                radius *= 0.5
            if certificate is None:
                failures += 1
            else:
                certificates.append(certificate)
        if failures or not certificates:
            logger().warning('exterior ball search failed at {} of {} boundary candidates'.format(failures,
                                                                                                 len(candidates)))
            status = ExteriorBall.UNKNOWN
        else:
            status = ExteriorBall.SATISFIED
        self._search = (status, certificates)
        return self._search

    def _newton(self, point, iterations=20, tol=1e-10):
        x = point.copy()
        for _ in range(iterations):
            g = float(self.level(x))
            if abs(g) <= tol:
                return x
            grad = self.gradient(x)[0]
            norm_sq = float(grad.dot(grad))
            if norm_sq < 1e-24:
                return None
            x = x - g * grad / norm_sq
        return x if abs(float(self.level(x))) <= tol else None

    def to_dict(self):
        return {'kind': self.kind, 'g': self.g.text, 'lo': self.lo.tolist(), 'hi': self.hi.tolist()}


def _sphere_points(dim, count):
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        angles = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    sampler = qmc.Halton(d=dim, scramble=False)
    v = 2 * sampler.random(4 * count) - 1
    return _unit(v)


def contains(domain, x, closed=False):
    return domain.contains(x, closed)


def erode(domain, eps):
    return domain.erode(eps)


def dilate(domain, eps):
    return domain.dilate(eps)


def exterior_ball(domain):
    return domain.exterior_ball()


def resolve_refinement(domain, refinement):
    """'auto' is the bridge for intervals and boxes and interpolation otherwise; no bridge without faces."""
    if refinement not in REFINEMENTS:
        raise ValueError('unknown refinement {!r}, expected one of {}'.format(refinement, REFINEMENTS))
    if refinement == AUTO:
        return BRIDGE if isinstance(domain, Box) else INTERPOLATE
    if refinement == BRIDGE and not domain.has_faces:
        return INTERPOLATE
    return refinement


def bridge_crossing_probability(domain, x_prev, x_next, covariance, dt):
    """
    Probability that the diffusion bridge between two inside points touched a face during the step.

    Per face with outward normal a and distances d1, d2 > 0 of the end points, exp(-2 d1 d2 / (a^T Sigma a dt));
    faces are combined as independent events.

    Parameters
    ----------
    domain : Domain with faces
    x_prev, x_next : array (m, n)
    covariance : array (m, n, n)
        diffusion matrix sigma gamma gamma^T sigma^T of the step
    dt : float

    Returns
    -------
    total : array (m,)
    per_face : array (m, F)
    d1, d2 : arrays (m, F)
    normals : array (m, F, n)
    """
    x_prev = np.atleast_2d(x_prev)
    x_next = np.atleast_2d(x_next)
    d1, normals = domain.faces(x_prev)
    d2 = d1 - np.einsum('mfn,mn->mf', normals, x_next - x_prev)
    variance = np.einsum('mfi,mij,mfj->mf', normals, np.broadcast_to(covariance, x_prev.shape[:1] +
                                                                       (x_prev.shape[1],) * 2), normals)
    active = (d1 > 0) & (d2 > 0) & (variance > 0)
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        exponent = np.where(active, -2.0 * d1 * d2 / (variance * dt), -np.inf)
    per_face = np.exp(exponent)
    total = 1.0 - np.prod(1.0 - per_face, axis=-1)
    return total, per_face, d1, d2, normals


def exit_event(domain, x_prev, x_next, dt, refinement=AUTO, covariance=None, uniforms=None):
    """
    Detect exits from Q and from Q-bar over one simulation step.

    The open exit uses the refinement: 'grid' exits at the step end, 'interpolate' at the linear crossing of the
    level function, 'bridge' adds the Brownian-bridge test for paths whose end points are both inside. The closed
    exit is the grid observation of a point strictly outside Q-bar.

    Parameters
    ----------
    domain : Domain
    x_prev, x_next : array (m, n)
    dt : float
    refinement : str
    covariance : array (m, n, n), required for the bridge
    uniforms : array (m,), required for the bridge

    Returns
    -------
    ExitEvent
        open_mask, open_fraction (of the step), open_point, closed_mask
    """
    refinement = resolve_refinement(domain, refinement)
    x_prev = np.atleast_2d(x_prev)
    x_next = np.atleast_2d(x_next)
    l_prev = domain.level(x_prev)
    l_next = domain.level(x_next)
    open_mask = l_next >= 0
    closed_mask = l_next > 0
    fraction = np.ones(x_prev.shape[0])
    point = x_next.copy()
    if refinement != GRID and open_mask.any():
        denom = l_prev - l_next
        crossing = open_mask & (denom < 0) & (l_prev < 0)
        with np.errstate(divide='ignore', invalid='ignore'):
            frac = np.clip(np.where(crossing, l_prev / denom, 1.0), 0.0, 1.0)
        fraction = np.where(open_mask, frac, fraction)
        if crossing.any():
            interpolated = x_prev[crossing] + frac[crossing, np.newaxis] * (x_next[crossing] - x_prev[crossing])
            point[crossing] = domain.project(interpolated)
    if refinement == BRIDGE and covariance is not None:
        inside = ~open_mask
        if inside.any():
            cov = np.broadcast_to(covariance, x_prev.shape[:1] + (x_prev.shape[1],) * 2)
            total, per_face, d1, d2, normals = bridge_crossing_probability(domain, x_prev[inside], x_next[inside],
                                                                           cov[inside], dt)
            hit = np.asarray(uniforms)[inside] < total
            if hit.any():
                rows = np.nonzero(inside)[0][hit]
                face = per_face[hit].argmax(axis=-1)
                k = np.arange(face.shape[0])
                a, b = d1[hit][k, face], d2[hit][k, face]
                fraction[rows] = a / (a + b)
                on_face = x_next[rows] + b[:, np.newaxis] * normals[hit][k, face]
                point[rows] = domain.project(on_face)
                open_mask = open_mask.copy()
                open_mask[rows] = True
    return ExitEvent(open_mask, fraction, point, closed_mask)

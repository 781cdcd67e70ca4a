"""
Monotone finite differences for the fully nonlinear Dirichlet problem

    max over controls of  1/2 tr(a D^2u) + <v, Du> - f = 0   in Q    (min in lower mode)
    u = phi                                                 on the boundary

with a = sigma gamma gamma^T sigma^T and v = b + sum_ij h_ij (gamma gamma^T)_ij + sigma mu for every vertex control
(gamma, mu). Second derivatives are central, first derivatives upwind and the mixed derivative uses the 7-point
stencil, which is monotone when a11 hy >= |a12| hx and a22 hx >= |a12| hy. The discrete Bellman equation is solved by
Howard policy iteration.
"""

__author__ = 'gsde developers'

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import LinAlgError, solve_banded

from gsde import geometry
from gsde.dynamics import GridFeedbackPolicy
from gsde.montecarlo import LOWER, UPPER
from gsde.utils import (DiagonalDominanceError, NumericalError, SolverError, SolverPreconditionError, logger)

INTERIOR = 0
BOUNDARY = 1
EXTERIOR = 2

_ROUNDING = 64 * np.finfo(float).eps


@dataclass
class GridConfig(object):
    nodes: int = None
    tolerance: float = 1e-10
    max_iterations: int = 100

    def nodes_for(self, dim):
        if self.nodes is not None:
            return self.nodes
        return 101 if dim == 1 else 41


class Grid(object):
    """
    Uniform grid over the domain's bounding box, padded by one node on every side.

    nodes counts the points from lo to hi along each axis, so the spacing is (hi - lo) / (nodes - 1). Interior nodes
    are those in the open domain; boundary nodes are the other nodes within one step (diagonals included) of an
    interior node and carry phi at their projection onto the boundary.

    Attributes
    ----------
    axes : list of numpy.ndarray
    spacing : numpy.ndarray
    shape : tuple
    coordinates : numpy.ndarray (N, dim)
    mask : numpy.ndarray (N,) of INTERIOR, BOUNDARY, EXTERIOR
    projection : numpy.ndarray (N, dim)
        nearest boundary point for non-interior nodes, the node itself for interior ones
    """

    def __init__(self, domain, nodes):
        self.dim = domain.dim
        if self.dim not in (1, 2):
            raise SolverPreconditionError('the grid solver handles 1 and 2 dimensions, got {}'.format(self.dim))
        if nodes < 3:
            raise ValueError('need at least 3 nodes per axis')
        lo, hi = domain.bounding_box()
        self.spacing = (hi - lo) / (nodes - 1)
        self.axes = []
        for l, u, h in zip(lo, hi, self.spacing):
            axis = l + h * np.arange(-1, nodes + 1)
            # box faces fall exactly on nodes
            axis[1], axis[-2] = l, u
            self.axes.append(axis)
        self.shape = tuple(len(a) for a in self.axes)
        mesh = np.meshgrid(*self.axes, indexing='ij')
        self.coordinates = np.stack([m.ravel() for m in mesh], axis=-1)
        interior = domain.contains(self.coordinates)
        near = interior.reshape(self.shape).copy()
        padded = np.pad(interior.reshape(self.shape), 1)
        for offset in np.ndindex(*(3,) * self.dim):
            window = tuple(slice(o, o + s) for o, s in zip(offset, self.shape))
            near |= padded[window]
        self.mask = np.full(self.coordinates.shape[0], EXTERIOR, dtype=int)
        self.mask[near.ravel()] = BOUNDARY
        self.mask[interior] = INTERIOR
        if not interior.any():
            raise SolverPreconditionError('no grid node inside {!r}; refine the grid'.format(domain))
        self.projection = self.coordinates.copy()
        outside = self.mask != INTERIOR
        self.projection[outside] = domain.project(self.coordinates[outside])
        self.index = np.full(self.coordinates.shape[0], -1, dtype=int)
        self.interior = np.nonzero(interior)[0]
        self.index[self.interior] = np.arange(self.interior.size)
        self.strides = np.array([int(np.prod(self.shape[i + 1:])) for i in range(self.dim)])

    @property
    def size(self):
        return self.coordinates.shape[0]

    def flat_offset(self, offset):
        return int(np.dot(self.strides, offset))


@dataclass
class PdeSolution(object):
    """
    Attributes
    ----------
    values : numpy.ndarray (N,)
        u at every grid node; phi at the projection for non-interior nodes
    policy_index : numpy.ndarray (M,)
        vertex index applied at each interior node
    controls : list of ControlValue
    history : list of numpy.ndarray
        interior values after each Howard step
    """
    grid: Grid
    values: np.ndarray
    policy_index: np.ndarray
    controls: list
    residual: float
    iterations: int
    mode: str
    converged: bool
    history: list = field(default_factory=list, repr=False)

    @property
    def policy(self):
        """Control at every interior node."""
        return [self.controls[k] for k in self.policy_index]

    def interior_values(self):
        return self.values[self.grid.interior]

    def interpolate(self, points):
        """
        Piecewise-linear interpolation of u.

        Parameters
        ----------
        points : array-like (m, dim) or (dim,)
        """
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        points = np.atleast_2d(points)
        if self.grid.dim == 1:
            out = np.interp(points[:, 0], self.grid.axes[0], self.values)
        else:
            table = RegularGridInterpolator(self.grid.axes, self.values.reshape(self.grid.shape),
                                            bounds_error=False, fill_value=None)
            out = table(points)
        return float(out[0]) if single else out

    __call__ = interpolate


class _Operator(object):
    """Per-control interior matrices A_k and boundary terms g_k, so that L^k u = A_k u_int + g_k."""

    def __init__(self, model, controls, grid, boundary_values):
        self.grid = grid
        X = grid.coordinates[grid.interior]
        m = X.shape[0]
        S = model.diffusion(X)
        drift = model.drift(X)
        self.matrices, self.offsets = [], []
        for control in controls:
            qv = control.qv_density
            a = np.einsum('aik,kl,ajl->aij', S, qv, S)
            v = drift + model.qv_drift(X, qv) + np.einsum('aij,j->ai', S, control.mu)
            if not (np.isfinite(a).all() and np.isfinite(v).all()):
                raise NumericalError('non-finite coefficients for control {!r}'.format(control))
            weights = self._weights(a, v, control, X)
            rows, cols, vals = [np.arange(m)], [np.arange(m)], [-np.sum([w for _, w in weights], axis=0)]
            g = np.zeros(m)
            for offset, w in weights:
                neighbor = grid.interior + grid.flat_offset(offset)
                inside = grid.index[neighbor] >= 0
                rows.append(np.arange(m)[inside])
                cols.append(grid.index[neighbor[inside]])
                vals.append(w[inside])
                g[~inside] += w[~inside] * boundary_values[neighbor[~inside]]
            matrix = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(m, m))
            self.matrices.append(matrix)
            self.offsets.append(g)
        self.diagonal_scale = np.max([np.abs(A.diagonal()) for A in self.matrices], axis=0)

    def _weights(self, a, v, control, X):
        h = self.grid.spacing
        if self.grid.dim == 1:
            diffusion = 0.5 * a[:, 0, 0] / h[0] ** 2
            return [((1,), diffusion + np.maximum(v[:, 0], 0) / h[0]),
                    ((-1,), diffusion + np.maximum(-v[:, 0], 0) / h[0])]
        hx, hy = h
        a11, a22, a12 = a[:, 0, 0], a[:, 1, 1], a[:, 0, 1]
        bad = (a11 * hy < np.abs(a12) * hx * (1 - 1e-12)) | (a22 * hx < np.abs(a12) * hy * (1 - 1e-12))
        if bad.any():
            row = int(np.nonzero(bad)[0][0])
            node = int(self.grid.interior[row])
            raise DiagonalDominanceError(node, X[row].tolist(),
                                         'cross-derivative stencil not monotone at node {} (x = {}) for control {!r}: '
                                         'a11 = {:.4g}, a22 = {:.4g}, a12 = {:.4g}; rotate coordinates or refine the '
                                         'uncertainty set'.format(node, X[row].tolist(), control, a11[row], a22[row],
                                                                  a12[row]))
        cross = np.abs(a12) / (2 * hx * hy)
        positive = a12 >= 0
        cx = 0.5 * a11 / hx ** 2 - cross
        cy = 0.5 * a22 / hy ** 2 - cross
        return [((1, 0), cx + np.maximum(v[:, 0], 0) / hx),
                ((-1, 0), cx + np.maximum(-v[:, 0], 0) / hx),
                ((0, 1), cy + np.maximum(v[:, 1], 0) / hy),
                ((0, -1), cy + np.maximum(-v[:, 1], 0) / hy),
                ((1, 1), np.where(positive, cross, 0.0)),
                ((-1, -1), np.where(positive, cross, 0.0)),
                ((1, -1), np.where(positive, 0.0, cross)),
                ((-1, 1), np.where(positive, 0.0, cross))]

    def apply(self, u, f):
        """L^k u - f for every control, shape (K, M)."""
        return np.stack([A.dot(u) + g - f for A, g in zip(self.matrices, self.offsets)])

    def select(self, policy):
        rows = [sp.diags((policy == k).astype(float)).dot(A) for k, A in enumerate(self.matrices)]
        matrix = rows[0]
        for r in rows[1:]:
            matrix = matrix + r
        offset = np.stack(self.offsets)[policy, np.arange(policy.size)]
        return sp.csr_matrix(matrix), offset

    def floor(self, u, f):
        return _ROUNDING * (self.diagonal_scale * max(1.0, float(np.max(np.abs(u)))) + np.abs(f))


def _bicgstab(matrix, rhs, tol):
    try:
        ilu = spla.spilu(matrix.tocsc())
        preconditioner = spla.LinearOperator(matrix.shape, ilu.solve)
    except RuntimeError:
        preconditioner = None
    try:
        x, info = spla.bicgstab(matrix, rhs, rtol=tol, atol=0.0, M=preconditioner, maxiter=1000)
    except TypeError:
        # scipy < 1.12
        x, info = spla.bicgstab(matrix, rhs, tol=tol, atol=0.0, M=preconditioner, maxiter=1000)
    return x, info


def _linear_solve(matrix, rhs, dim):
    m = matrix.shape[0]
    if dim == 1:
        ab = np.zeros((3, m))
        ab[0, 1:] = matrix.diagonal(1)
        ab[1, :] = matrix.diagonal(0)
        ab[2, :-1] = matrix.diagonal(-1)
        try:
            x = solve_banded((1, 1), ab, rhs)
        except (LinAlgError, ValueError) as e:
            raise SolverError('singular linear system: {}'.format(e))
    else:
        x, info = _bicgstab(matrix, rhs, 1e-12)
        scale = np.abs(matrix).dot(np.abs(x)) + np.abs(rhs)
        if info != 0 or not np.isfinite(x).all() or (np.abs(matrix.dot(x) - rhs) > 1e-10 * scale).any():
            logger().warning('BiCGSTAB did not reach 1e-12 (info = {}); falling back to a direct solve'.format(info))
            try:
                x = spla.spsolve(matrix.tocsc(), rhs)
            except RuntimeError as e:
                raise SolverError('singular linear system: {}'.format(e))
    if not np.isfinite(x).all():
        raise SolverError('singular linear system: non-finite solution')
    return x


def solve_dirichlet(model, theta, domain, f, phi, grid_config=None, mode=UPPER, initial_policy=None):
    """
    Howard policy iteration for the discrete Bellman equation.

    Parameters
    ----------
    model : SdeModel with n in {1, 2}
    theta : UncertaintySet
    domain : Domain
    f : Expression or None
        running cost; zero when None
    phi : Expression
        boundary data
    grid_config : GridConfig
    mode : 'upper' (max over controls) or 'lower' (min)
    initial_policy : int array over interior nodes, optional. Vertex 0 everywhere by default.

    Returns
    -------
    PdeSolution

    Raises
    ------
    DiagonalDominanceError
    SolverPreconditionError
    SolverError
        iteration cap exceeded or singular system
    """
    grid_config = grid_config or GridConfig()
    if mode not in (UPPER, LOWER):
        raise ValueError('mode must be {!r} or {!r}'.format(UPPER, LOWER))
    status = domain.exterior_ball()
    if status is geometry.ExteriorBall.VIOLATED:
        raise SolverPreconditionError('exterior ball condition violated for {!r}'.format(domain))
    if status is geometry.ExteriorBall.UNKNOWN:
        logger().warning('exterior ball condition unknown for {!r}; boundary values may not be attained'.format(
            domain))
    theta.ellipticity_params(require_elliptic=True)
    if model.n != domain.dim:
        raise ValueError('model dimension {} does not match domain dimension {}'.format(model.n, domain.dim))

    grid = Grid(domain, grid_config.nodes_for(domain.dim))
    boundary_values = np.zeros(grid.size)
    outside = grid.mask != INTERIOR
    boundary_values[outside] = np.broadcast_to(phi(grid.projection[outside]), (int(outside.sum()),))
    if not np.isfinite(boundary_values[grid.mask == BOUNDARY]).all():
        raise NumericalError('boundary data is not finite on the grid boundary')
    X = grid.coordinates[grid.interior]
    fvals = np.zeros(X.shape[0]) if f is None else np.array(np.broadcast_to(f(X), X.shape[:1]), dtype=float)
    if not np.isfinite(fvals).all():
        raise NumericalError('running cost is not finite on the grid')

    controls = list(theta.vertices)
    operator = _Operator(model, controls, grid, boundary_values)
    policy = np.zeros(X.shape[0], dtype=int) if initial_policy is None else np.array(initial_policy, dtype=int)
    history = []
    u = None
    for iteration in range(1, grid_config.max_iterations + 1):
        matrix, offset = operator.select(policy)
        u = _linear_solve(matrix, fvals - offset, grid.dim)
        history.append(u.copy())
        R = operator.apply(u, fvals)
        rows = np.arange(policy.size)
        current = R[policy, rows]
        best = np.argmax(R, axis=0) if mode == UPPER else np.argmin(R, axis=0)
        gain = R[best, rows] - current if mode == UPPER else current - R[best, rows]
        improve = gain > operator.floor(u, fvals)
        logger().debug('Howard step {}: {} policy changes'.format(iteration, int(improve.sum())))
        if not improve.any():
            break
        policy = np.where(improve, best, policy)
    else:
        raise SolverError('Howard iteration did not converge within {} iterations'.format(grid_config.max_iterations))

    values = boundary_values.copy()
    values[grid.interior] = u
    solution = PdeSolution(grid, values, policy, controls, 0.0, iteration, mode, False, history)
    solution.residual = _bellman_residual(operator, u, fvals, mode)
    floor = float(np.max(operator.floor(u, fvals)))
    solution.converged = solution.residual <= max(grid_config.tolerance, floor)
    if not solution.converged:
        logger().warning('Howard iteration stopped with residual {:.3g} above tolerance {:.3g}'.format(
            solution.residual, grid_config.tolerance))
    logger().info('{} solve on {} interior nodes: {} iterations, residual {:.3g}'.format(
        mode, X.shape[0], iteration, solution.residual))
    return solution


def _bellman_residual(operator, u, fvals, mode):
    R = operator.apply(u, fvals)
    extreme = R.max(axis=0) if mode == UPPER else R.min(axis=0)
    return float(np.max(np.abs(extreme)))


def residual(solution, model, theta, f):
    """
    max over interior nodes of |max_k (L^k u - f)| (min in lower mode) for the solution's node values.

    The boundary data are taken from the solution itself.
    """
    grid = solution.grid
    X = grid.coordinates[grid.interior]
    fvals = np.zeros(X.shape[0]) if f is None else np.array(np.broadcast_to(f(X), X.shape[:1]), dtype=float)
    operator = _Operator(model, list(theta.vertices), grid, solution.values)
    return _bellman_residual(operator, solution.values[grid.interior], fvals, solution.mode)


def extract_policy(solution):
    """
    Grid-feedback policy returning the per-node control, nearest interior node off the grid.

    Raises
    ------
    SolverError
        unconverged solution
    """
    if not solution.converged:
        raise SolverError('cannot extract a policy from an unconverged solution (residual {:.3g})'.format(
            solution.residual))
    grid = solution.grid
    return GridFeedbackPolicy(grid.coordinates[grid.interior], solution.policy_index, solution.controls,
                              label='pde-feedback')

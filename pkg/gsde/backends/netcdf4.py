"""
netCDF4 files for grid solutions

A solution file has the dimensions node (all grid nodes), axis (space dimension), interior (unknown nodes) and
noise (d), and stores coordinates, mask, values, the applied vertex index per interior node and the vertex table
(gamma, mu). Run metadata goes into global attributes, the normalized configuration as JSON text.
"""

import json
import os

import netCDF4 as netcdf
import numpy as np

from gsde.utils import logger

__all__ = ['save_solution', 'load_solution']


def save_solution(path, solution, config=None):
    """ Write a PdeSolution
    :param path: str
        file name; an existing file is overwritten
    :param solution: PdeSolution
    :param config: dict, optional
        normalized run configuration stored as the `config` attribute
    """
    if os.path.exists(path):
        logger().debug('overwriting file %s' % path)
        os.remove(path)
    grid = solution.grid
    d = solution.controls[0].d
    ncfile = netcdf.Dataset(path, 'w', format='NETCDF4')
    try:
        ncfile.createDimension('node', grid.size)
        ncfile.createDimension('axis', grid.dim)
        ncfile.createDimension('interior', grid.interior.size)
        ncfile.createDimension('vertex', len(solution.controls))
        ncfile.createDimension('noise', d)

        ncfile.createVariable('coordinates', 'f8', ('node', 'axis'))[:] = grid.coordinates
        ncfile.createVariable('mask', 'i4', ('node',))[:] = grid.mask
        ncfile.createVariable('values', 'f8', ('node',))[:] = solution.values
        ncfile.createVariable('interior_node', 'i8', ('interior',))[:] = grid.interior
        ncfile.createVariable('policy_index', 'i4', ('interior',))[:] = solution.policy_index
        ncfile.createVariable('gamma', 'f8', ('vertex', 'noise', 'noise'))[:] = np.array(
            [c.gamma for c in solution.controls])
        ncfile.createVariable('mu', 'f8', ('vertex', 'noise'))[:] = np.array([c.mu for c in solution.controls])

        ncfile.setncattr('title', 'gsde grid solution')
        ncfile.setncattr('mode', solution.mode)
        ncfile.setncattr('residual', float(solution.residual))
        ncfile.setncattr('iterations', int(solution.iterations))
        ncfile.setncattr('converged', int(solution.converged))
        ncfile.setncattr('shape', np.array(grid.shape, dtype='i4'))
        ncfile.setncattr('spacing', np.asarray(grid.spacing, dtype='f8'))
        if config is not None:
            ncfile.setncattr('config', json.dumps(config, sort_keys=True))
    finally:
        ncfile.close()


def load_solution(path):
    """ Read a solution file back
    :param path: str
    :return: dict of numpy arrays and attributes
    """
    ncfile = netcdf.Dataset(path, 'r')
    try:
        out = {name: np.array(ncfile.variables[name][:]) for name in ncfile.variables}
        out['mode'] = ncfile.getncattr('mode')
        out['residual'] = float(ncfile.getncattr('residual'))
        out['iterations'] = int(ncfile.getncattr('iterations'))
        out['converged'] = bool(ncfile.getncattr('converged'))
        out['shape'] = tuple(int(s) for s in np.atleast_1d(ncfile.getncattr('shape')))
        out['spacing'] = np.atleast_1d(np.array(ncfile.getncattr('spacing'), dtype=float))
        out['config'] = json.loads(ncfile.getncattr('config')) if 'config' in ncfile.ncattrs() else None
    finally:
        ncfile.close()
    return out

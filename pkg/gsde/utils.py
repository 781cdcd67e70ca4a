__author__ = 'gsde developers'

import logging
import math
import sys

import numpy as np

verbose = False


class GsdeError(Exception):
    """Base class for all errors raised by gsde."""


class ConfigError(GsdeError):
    """Invalid run configuration.

    Parameters
    ----------
    field : str
        dotted path of the offending field, e.g. ``model.b[1]``
    message : str
    """

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super(ConfigError, self).__init__('{}: {}'.format(field, message))


class NumericalError(GsdeError):
    """NaN or Inf produced while simulating, assembling or estimating."""


class SolverPreconditionError(GsdeError):
    """A precondition of a solver or estimator does not hold."""


class DiagonalDominanceError(SolverPreconditionError):
    """The 7-point cross-derivative stencil would not be monotone at a node."""

    def __init__(self, node, coordinates, message):
        self.node = node
        self.coordinates = coordinates
        super(DiagonalDominanceError, self).__init__(message)


class DegenerateSetError(SolverPreconditionError):
    """Uncertainty set with zero lower volatility where ellipticity is required."""


class SolverError(GsdeError):
    """Howard iteration failed: iteration cap, singular system or unconverged solution."""


class DomainError(GsdeError, ValueError):
    """Invalid geometric request (empty erosion, implicit kind, NaN coordinate...)."""


def logger(name='gsde', pattern='%(asctime)s %(levelname)s %(name)s: %(message)s',
           date_format='%H:%M:%S', handler=logging.StreamHandler(sys.stdout)):
    """
    Retrieves the logger instance associated to the given name
    :param name: The name of the logger instance
    :param pattern: The associated pattern
    :param date_format: The date format to be used in the pattern
    :param handler: The logging handler
    :return: The logger
    """
    _logger = logging.getLogger(name)
    _logger.setLevel(log_level(verbose))

    if not _logger.handlers:
        formatter = logging.Formatter(pattern, date_format)
        handler.setFormatter(formatter)
        _logger.addHandler(handler)
        _logger.propagate = False
    handler.setLevel(log_level(verbose))
    return _logger


def log_level(verbose=None):
    if verbose is None:
        verbose = globals()['verbose']
    if verbose:
        return logging.DEBUG
    else:
        return logging.INFO


def fsum_mean(values):
    """Correctly rounded mean of a 1-D array; independent of summation order."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        return float('nan')
    return math.fsum(values) / values.size


def mean_and_stderr(values):
    """
    Mean and standard error of the mean with compensated sums.

    Parameters
    ----------
    values : array-like

    Returns
    -------
    mean : float
    std_error : float
        0 for fewer than two values
    """
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    mean = fsum_mean(values)
    if n < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


class KahanAccumulator(object):
    """Vectorized compensated summation, one running sum per slot."""

    def __init__(self, size):
        self.total = np.zeros(size)
        self._compensation = np.zeros(size)

    def add(self, index, values):
        y = values - self._compensation[index]
        t = self.total[index] + y
        self._compensation[index] = (t - self.total[index]) - y
        self.total[index] = t

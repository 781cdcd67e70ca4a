""" gsde: Monte Carlo and grid solvers for exit-time functionals of G-Brownian-motion driven SDEs.

This project simulates stochastic differential equations driven by G-Brownian motion up to the exit time from a
domain, estimates sublinear expectations over a family of representing controls, solves the matching fully
nonlinear Dirichlet problem on a grid, and runs numerical checks of the underlying exit-time estimates.
"""

from __future__ import print_function

import os

from setuptools import setup

DOCLINES = __doc__.split("\n")

########################
CLASSIFIERS = """\
Development Status :: 3 - Alpha
Intended Audience :: Science/Research
Intended Audience :: Developers
License :: OSI Approved :: MIT License
Programming Language :: Python
Programming Language :: Python :: 3
Topic :: Scientific/Engineering :: Mathematics
Operating System :: POSIX
Operating System :: Unix
Operating System :: MacOS
"""

################################################################################
# USEFUL SUBROUTINES
################################################################################
def read_version():
    scope = {}
    with open(os.path.join('gsde', 'version.py')) as handle:
        exec(handle.read(), scope)
    return scope['version']

def package_files(directory):
    paths = []
    for (path, directories, filenames) in os.walk(directory):
        for filename in filenames:
            paths.append(os.path.join('..', path, filename))
    return paths

################################################################################
# SETUP
################################################################################

setup(
    name='gsde',
    description=DOCLINES[0],
    long_description="\n".join(DOCLINES[2:]),
    version=read_version(),
    license='MIT',
    platforms=['Linux', 'Mac OS-X', 'Unix'],
    classifiers=CLASSIFIERS.splitlines(),
    packages=['gsde', 'gsde.tests', 'gsde.backends'],
    package_data={'': package_files('gsde/tests/reference')},
    zip_safe=False,
    python_requires='>=3.7',
    install_requires=[
        'numpy',
        'scipy',
        'pandas',
        'dask',
        'netCDF4',
        'pyyaml',
        'setuptools',
        ],
    entry_points={'console_scripts': ['gsde = gsde.cli:main']},
    )

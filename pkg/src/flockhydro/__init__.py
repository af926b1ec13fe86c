"""Kinetic-to-hydrodynamic toolkit for alignment dynamics with a radial speed potential."""

from .errors import *  # noqa: F401,F403
from .quadrature import (ModelParams, PolarGrid, SelfPropulsion, TabulatedRadial, ZeroPotential,
                         build_polar_grid, integrate_weighted, weight_e)

__version__ = "0.1.0"

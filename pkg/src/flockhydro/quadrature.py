"""Model parameters, radial potentials and the (theta, r) quadrature grid.

Every velocity integral against the equilibrium weight is reduced to the
half-strip (theta, r) in (0, pi) x (0, r_max) with ``c = cos(theta)``.
The reduction carries the jacobian ``r**(d-1) * sin(theta)**(d-2)`` and
the weight

    e(c, r) = exp(r c / sigma - (r**2 + 1) / (2 sigma) - eta V(r) / sigma),

which is ``exp(-Phi(v) / sigma)`` written in those coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, log, pi

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, IntegrandError, NonconfiningPotential

R_CAP = 1.0e3
SAFETY = 1.2


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

class Potential:
    """Radial potential V(r). Subclasses provide value and two derivatives."""

    def value(self, r):
        raise NotImplementedError

    def derivative(self, r):
        raise NotImplementedError

    def second_derivative(self, r):
        raise NotImplementedError

    @property
    def r_limit(self):
        """Largest radius where the potential is defined."""
        return np.inf

    def scaled(self, factor):
        return ScaledPotential(self, float(factor))


@dataclass(frozen=True)
class ZeroPotential(Potential):
    def value(self, r):
        return 0.0 * np.asarray(r)

    def derivative(self, r):
        return 0.0 * np.asarray(r)

    def second_derivative(self, r):
        return 0.0 * np.asarray(r)


@dataclass(frozen=True)
class SelfPropulsion(Potential):
    """V(r) = beta r^4 / 4 - alpha r^2 / 2."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise DomainError("alpha and beta must be positive")

    def value(self, r):
        r = np.asarray(r)
        return self.beta * r**4 / 4.0 - self.alpha * r**2 / 2.0

    def derivative(self, r):
        r = np.asarray(r)
        return self.beta * r**3 - self.alpha * r

    def second_derivative(self, r):
        r = np.asarray(r)
        return 3.0 * self.beta * r**2 - self.alpha


class TabulatedRadial(Potential):
    """Cubic-spline potential through ``(nodes, values)``.

    Evaluation outside ``[nodes[0], nodes[-1]]`` raises ``DomainError``;
    the table is expected to start at r = 0.
    """

    def __init__(self, nodes, values):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 4:
            raise DomainError("tabulated potential needs >= 4 matching nodes and values")
        if np.any(np.diff(nodes) <= 0):
            raise DomainError("tabulated potential nodes must be strictly increasing")
        if nodes[0] > 0:
            raise DomainError("tabulated potential must start at r = 0")
        self.nodes = nodes
        self.values = values
        self._spline = CubicSpline(nodes, values, extrapolate=False)

    def __repr__(self):
        return f"TabulatedRadial(n={self.nodes.size}, r_end={self.nodes[-1]:g})"

    def __eq__(self, other):
        return (isinstance(other, TabulatedRadial)
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash((self.nodes.tobytes(), self.values.tobytes()))

    @property
    def r_limit(self):
        return float(self.nodes[-1])

    def _eval(self, r, nu):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.nodes[0]) or np.any(r > self.nodes[-1]):
            raise DomainError(
                f"tabulated potential evaluated outside [{self.nodes[0]}, {self.nodes[-1]}]")
        return self._spline(r, nu)

    def value(self, r):
        return self._eval(r, 0)

    def derivative(self, r):
        return self._eval(r, 1)

    def second_derivative(self, r):
        return self._eval(r, 2)


@dataclass(frozen=True)
class ScaledPotential(Potential):
    base: Potential
    factor: float

    def value(self, r):
        return self.factor * self.base.value(r)

    def derivative(self, r):
        return self.factor * self.base.derivative(r)

    def second_derivative(self, r):
        return self.factor * self.base.second_derivative(r)

    @property
    def r_limit(self):
        return self.base.r_limit


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    sigma: float
    dim: int = 2
    potential: Potential = field(default_factory=ZeroPotential)
    eta: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if self.dim not in (2, 3):
            raise DomainError("dim must be 2 or 3")
        if not self.eta > 0:
            raise DomainError("eta must be positive")

    def V(self, r):
        return self.eta * self.potential.value(r)

    def dV(self, r):
        return self.eta * self.potential.derivative(r)

    def replace(self, **changes):
        kw = dict(sigma=self.sigma, dim=self.dim, potential=self.potential, eta=self.eta)
        kw.update(changes)
        return ModelParams(**kw)


def sphere_area(k):
    """Surface measure of the unit sphere S^k in R^(k+1); |S^0| = 2."""
    return 2.0 * pi ** ((k + 1) / 2.0) / gamma((k + 1) / 2.0)


def log_weight(c, r, params):
    """Natural log of e(c, r); no domain checks."""
    c = np.asarray(c, dtype=float)
    r = np.asarray(r, dtype=float)
    s = params.sigma
    return (r * c - 0.5 * (r * r + 1.0) - params.V(r)) / s


def weight_e(c, r, params):
    """Equilibrium weight e(c, r) = exp(-Phi(v) / sigma) with c = cos(v, Omega), r = |v|."""
    c = np.asarray(c, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(c) > 1.0) or np.any(np.isnan(c)):
        raise DomainError("c must lie in [-1, 1]")
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise DomainError("r must be nonnegative")
    out = np.exp(log_weight(c, r, params))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Tensor Gauss-Legendre rule on (0, pi) x (0, r_max).

    ``log_shift`` is the largest value of log e on the nodes; ``weight`` holds
    ``exp(log e - log_shift)`` so that ratios never overflow.
    """

    params: ModelParams
    n_theta: int
    n_r: int
    r_max: float
    theta_nodes: np.ndarray
    r_nodes: np.ndarray
    theta_weights: np.ndarray
    r_weights: np.ndarray
    truncation_tol: float
    log_shift: float
    weight: np.ndarray  # (n_theta, n_r), scaled e
    jacobian: np.ndarray  # (n_theta, n_r), r^(d-1) sin^(d-2)

    @property
    def C(self):
        return np.cos(self.theta_nodes)[:, None] * np.ones((1, self.n_r))

    @property
    def R(self):
        return np.ones((self.n_theta, 1)) * self.r_nodes[None, :]

    @property
    def S(self):
        return np.sin(self.theta_nodes)[:, None] * np.ones((1, self.n_r))

    @property
    def tensor_weights(self):
        return self.theta_weights[:, None] * self.r_weights[None, :]

    def measure(self):
        """|S^{d-2}| * sum of weights x jacobian: the truncated volume."""
        return sphere_area(self.params.dim - 2) * np.sum(self.tensor_weights * self.jacobian)


def _log_peak_profile(params):
    """Return ``g(r) = max_c log e(c, r)`` (attained at c = 1)."""
    return lambda r: float(log_weight(1.0, r, params))


def _truncation_radius(params, truncation_tol):
    g = _log_peak_profile(params)
    cap = min(R_CAP, params.potential.r_limit)
    # coarse scan for the global maximum, then refine
    scan = np.concatenate([np.linspace(0.0, min(cap, 20.0), 2001),
                           np.geomspace(20.0, cap, 400) if cap > 20.0 else []])
    vals = np.array([g(r) for r in scan])
    if not np.all(np.isfinite(vals)):
        raise NonconfiningPotential("weight is not finite on [0, R_cap]")
    k = int(np.argmax(vals))
    lo, hi = scan[max(k - 1, 0)], scan[min(k + 1, scan.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda r: -g(r), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        r_peak, g_peak = (res.x, -res.fun) if -res.fun > vals[k] else (scan[k], vals[k])
    else:
        r_peak, g_peak = scan[k], vals[k]
    target = g_peak + log(truncation_tol)
    beyond = scan > r_peak
    below = np.nonzero(beyond & (vals - target <= 0))[0]
    if below.size == 0:
        raise NonconfiningPotential(
            f"weight does not fall below {truncation_tol:g} of its maximum for r <= {cap:g}")
    j = below[0]
    a = max(scan[j - 1], r_peak)
    b = scan[j]
    if g(a) - target <= 0:
        return a
    return brentq(lambda r: g(r) - target, a, b, xtol=1e-13)


def build_polar_grid(params, n_theta=64, n_r=64, truncation_tol=1e-18):
    """Build the tensor Gauss-Legendre grid used for every (theta, r) integral.

    ``r_max`` is 1.2 times the smallest radius beyond the peak of the weight
    where ``max_c e(c, R)`` drops below ``truncation_tol`` times its maximum.
    """
    if n_theta < 4 or n_r < 4:
        raise DomainError("n_theta and n_r must be at least 4")
    if not 0 < truncation_tol < 1:
        raise DomainError("truncation_tol must lie in (0, 1)")
    radius = _truncation_radius(params, truncation_tol)
    r_max = SAFETY * radius
    if r_max > params.potential.r_limit:
        raise NonconfiningPotential(
            f"tabulated potential ends at {params.potential.r_limit:g} < r_max = {r_max:g}")

    x, w = leggauss(n_theta)
    theta = 0.5 * pi * (x + 1.0)
    wt = 0.5 * pi * w
    x, w = leggauss(n_r)
    r = 0.5 * r_max * (x + 1.0)
    wr = 0.5 * r_max * w

    d = params.dim
    T, Rr = np.meshgrid(theta, r, indexing="ij")
    loge = log_weight(np.cos(T), Rr, params)
    shift = float(np.max(loge))
    weight = np.exp(loge - shift)
    jac = Rr ** (d - 1) * np.sin(T) ** (d - 2)
    return PolarGrid(params=params, n_theta=n_theta, n_r=n_r, r_max=float(r_max),
                     theta_nodes=theta, r_nodes=r, theta_weights=wt, r_weights=wr,
                     truncation_tol=truncation_tol, log_shift=shift,
                     weight=weight, jacobian=jac)


def _evaluate_on_grid(f, grid):
    if callable(f):
        vals = f(grid.C, grid.R)
    else:
        vals = f
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (grid.n_theta, grid.n_r))
    bad = ~np.isfinite(vals)
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise IntegrandError("integrand is not finite", node=node)
    return vals


def scaled_integral(f, grid):
    """``integrate_weighted(f) * exp(-grid.log_shift)``; safe from overflow."""
    vals = _evaluate_on_grid(f, grid)
    return float(np.sum(grid.tensor_weights * grid.jacobian * grid.weight * vals))


def integrate_weighted(f, grid, params=None):
    """Integrate f(c, r) against e(c, r) r^(d-1) sin^(d-2)(theta) on the grid.

    ``f`` is a vectorised callable of ``(c, r)`` or an array of node values of
    shape ``(n_theta, n_r)``. The |S^{d-2}| factor is not included.
    """
    if params is not None and params != grid.params:
        raise DomainError("grid was built for different model parameters")
    return scaled_integral(f, grid) * float(np.exp(grid.log_shift))


def weighted_mean(f, grid):
    """Average of f(c, r) under the equilibrium: int f M dv."""
    return scaled_integral(f, grid) / scaled_integral(1.0, grid)

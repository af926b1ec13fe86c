"""Transport coefficients c1 and c2 and the large-penalisation limit of c1."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .equilibrium import check_unit
from .errors import DegenerateDenominator, DomainError, NoInteriorMinimum
from .gci_chi import _element_data, psi_values, transverse_basis, velocity_slices
from .parallel import parallel_map
from .quadrature import ModelParams, SelfPropulsion, ScaledPotential, build_polar_grid, scaled_integral

DEGENERACY = 1e-14
MIN_SUPPORT_NODES = 8


class ResolutionWarning(UserWarning):
    """The weight's effective radial support covers too few grid nodes."""


@dataclass(frozen=True)
class Coefficients:
    c1: float
    c2: float
    c1_tilde: float
    c2_tilde: float
    params: ModelParams
    chi_meta: dict = field(default_factory=dict)

    @property
    def sigma(self):
        return self.params.sigma

    @classmethod
    def given(cls, c1, c2, sigma, dim=2):
        """Coefficients supplied directly, e.g. to drive the hydrodynamic solver."""
        return cls(c1=float(c1), c2=float(c2), c1_tilde=float("nan"), c2_tilde=float("nan"),
                   params=ModelParams(sigma=sigma, dim=dim))


def compute_c1(params, grid):
    """c1 = int r^d cos(theta) e sin^(d-2) / int r^(d-1) e sin^(d-2)."""
    if grid.params != params:
        raise DomainError("grid was built for different model parameters")
    num = scaled_integral(grid.R * grid.C, grid)
    den = scaled_integral(1.0, grid)
    c1 = num / den
    if not c1 > 0:
        raise DomainError(f"directional moment is not positive: {c1!r}")
    return c1


def _chi_integrals(chi):
    """Numerator and denominator of c2 on the element Gauss rule of chi."""
    d = chi.params.dim
    theta, r, area, e, _, _ = _element_data(chi)
    vals = chi.evaluate(theta, r)
    # area carries r^(d-1) sin^(d-2); one more r sin(theta) gives the c2 measure
    base = area * e * vals * r * np.sin(theta)
    return float(np.sum(base * r * np.cos(theta))), float(np.sum(base))


def compute_c2(chi, params=None, grid=None):
    """c2 = int r^(d+1) cos(theta) chi e sin^(d-1) / int r^d chi e sin^(d-1)."""
    if params is not None and params != chi.params:
        raise DomainError("chi was solved for different model parameters")
    if grid is not None and grid is not chi.grid and grid.params != chi.params:
        raise DomainError("grid does not match chi")
    num, den = _chi_integrals(chi)
    scale = max(abs(num), np.finfo(float).tiny)
    if abs(den) < DEGENERACY * scale:
        raise DegenerateDenominator(f"c2 denominator {den:.3e} against numerator {num:.3e}")
    return num / den


def tilde_coefficients(chi, omega=None, n_phi=8):
    """(c1~, c2~) = int psi_E (v.E) M and int (v.Omega) psi_E (v.E) M, averaged over E.

    Computed in velocity space from the reconstructed invariants, so it shares
    no code with :func:`compute_c2` beyond the element rule.
    """
    d = chi.params.dim
    omega = np.eye(d)[0] if omega is None else check_unit(omega)
    basis = transverse_basis(omega)
    t1 = t2 = mass = 0.0
    for v, dv, e in velocity_slices(chi, omega, n_phi):
        m = dv * e
        mass += m.sum()
        par = v @ omega
        for E in basis:
            q = m * psi_values(chi, v, omega, E) * (v @ E)
            t1 += q.sum()
            t2 += (q * par).sum()
    k = len(basis)
    return t1 / k / mass, t2 / k / mass


def compute_coefficients(params, grid=None, chi=None, n_theta=128, n_r=128):
    """Both coefficients plus the velocity-space route, solving for chi if needed."""
    from .gci_chi import compute_chi

    if grid is None:
        grid = build_polar_grid(params, n_theta, n_r)
    if chi is None:
        chi = compute_chi(params, grid)
    c1 = compute_c1(params, grid)
    c2 = compute_c2(chi, params)
    t1, t2 = tilde_coefficients(chi)
    meta = {"n_theta": chi.mesh.n_theta, "n_r": chi.mesh.n_r, "r_max": chi.mesh.r_max,
            "residual_norm": chi.residual_norm}
    return Coefficients(c1=c1, c2=c2, c1_tilde=t1, c2_tilde=t2, params=params, chi_meta=meta)


def potential_minimiser(potential, r_hi=50.0):
    """Interior minimiser r0 of V with V''(r0) > 0."""
    base, _ = _unscale(potential)
    if isinstance(base, SelfPropulsion):
        r0 = float(np.sqrt(base.alpha / base.beta))
    else:
        hi = min(r_hi, potential.r_limit)
        res = minimize_scalar(lambda r: float(potential.value(r)), bounds=(0.0, hi),
                              method="bounded", options={"xatol": 1e-12})
        r0 = float(res.x)
        if r0 < 1e-6 * hi or r0 > hi * (1 - 1e-6):
            raise NoInteriorMinimum(f"minimiser search ended on the boundary (r = {r0:.3g})")
    try:
        curvature = float(potential.second_derivative(r0))
    except NotImplementedError:
        curvature = np.nan
    if not curvature > 0:
        raise NoInteriorMinimum(f"V''(r0) = {curvature:.3g} is not positive at r0 = {r0:.6g}")
    return r0


def _unscale(potential):
    factor = 1.0
    while isinstance(potential, ScaledPotential):
        factor *= potential.factor
        potential = potential.base
    return potential, factor


def laplace_limit_c1(potential, sigma, d):
    """Limit of c1 when the potential is multiplied by lambda -> infinity.

    r0 * int cos(t) exp(r0 cos(t)/sigma) sin^(d-2) t / int exp(r0 cos(t)/sigma) sin^(d-2) t.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if d not in (2, 3):
        raise DomainError("d must be 2 or 3")
    r0 = potential_minimiser(potential)
    k = r0 / sigma
    # exp(k (cos t - 1)) keeps both integrands below 1
    w = lambda t: np.exp(k * (np.cos(t) - 1.0)) * np.sin(t) ** (d - 2)
    opts = dict(epsabs=0.0, epsrel=1e-13, limit=200, points=[min(np.pi / 2, 5.0 / np.sqrt(k))])
    num = quad(lambda t: np.cos(t) * w(t), 0.0, np.pi, **opts)[0]
    den = quad(w, 0.0, np.pi, **opts)[0]
    return r0 * num / den


def effective_support_nodes(grid, level=1e-6):
    """Number of r-nodes where the theta-maximum of the weight exceeds ``level`` of its peak."""
    prof = grid.weight.max(axis=0)
    return int(np.count_nonzero(prof >= level * prof.max()))


def c1_lambda_curve(potential, sigma, d, lambdas, n_theta=64, n_r=256, eta=1.0):
    """[(lambda, c1 with potential lambda * V)], one grid per lambda."""
    lambdas = [float(x) for x in lambdas]
    if not lambdas or any(x <= 0 for x in lambdas):
        raise DomainError("lambdas must be positive")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise DomainError("lambdas must be increasing")

    def one(lam):
        params = ModelParams(sigma=sigma, dim=d, potential=potential.scaled(lam), eta=eta)
        grid = build_polar_grid(params, n_theta, n_r)
        support = effective_support_nodes(grid)
        if support < MIN_SUPPORT_NODES:
            warnings.warn(f"lambda = {lam:g}: weight support covers only {support} r-nodes",
                          ResolutionWarning, stacklevel=3)
        return lam, compute_c1(params, grid)

    return parallel_map(one, lambdas)

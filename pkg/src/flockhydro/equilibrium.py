"""Equilibria rho * M_Omega, their normalisation and low-order moments."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .quadrature import ModelParams, PolarGrid, build_polar_grid, scaled_integral, sphere_area

UNIT_TOL = 1e-12
NEAR_ZERO = 1e-14


class NearZeroMoment(UserWarning):
    """The moment was normalised although its length is below 1e-14."""


def frame(omega):
    """Orthonormal matrix whose first column is ``omega``."""
    omega = np.asarray(omega, dtype=float)
    d = omega.size
    if d == 2:
        return np.array([[omega[0], -omega[1]], [omega[1], omega[0]]])
    # Householder reflection mapping e1 to omega
    e1 = np.zeros(d)
    e1[0] = 1.0
    u = e1 - omega
    nu = np.linalg.norm(u)
    if nu < 1e-14:
        return np.eye(d)
    u /= nu
    return np.eye(d) - 2.0 * np.outer(u, u)


def check_unit(omega, tol=UNIT_TOL):
    omega = np.asarray(omega, dtype=float)
    if abs(np.linalg.norm(omega) - 1.0) > tol:
        raise DomainError(f"orientation must be a unit vector (|omega| = {np.linalg.norm(omega)!r})")
    return omega


def azimuth_rule(dim, n_phi=8):
    """Directions on S^{d-2} and weights summing to |S^{d-2}|."""
    if dim == 2:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(n_phi, 2.0 * np.pi / n_phi)


def velocity_rule(grid, n_phi=8):
    """Full-space nodes (frame Omega = e1) and weights from a polar grid.

    Returns ``(v, w, loge)`` where ``sum(w * exp(loge - grid.log_shift) * g(v))``
    is ``exp(-grid.log_shift)`` times the integral of ``g(v) exp(-Phi(v)/sigma)``.
    """
    d = grid.params.dim
    dirs, wphi = azimuth_rule(d, n_phi)
    th = grid.theta_nodes[:, None, None]
    r = grid.r_nodes[None, :, None]
    ct, st = np.cos(th), np.sin(th)
    shape = (grid.n_theta, grid.n_r, len(wphi))
    v = np.empty(shape + (d,))
    v[..., 0] = np.broadcast_to(r * ct, shape)
    for k in range(d - 1):
        v[..., k + 1] = r * st * dirs[None, None, :, k]
    w = (grid.tensor_weights * grid.jacobian)[:, :, None] * wphi[None, None, :]
    logw = np.broadcast_to(np.log(grid.weight)[:, :, None] + grid.log_shift, shape)
    return v.reshape(-1, d), w.reshape(-1), logw.reshape(-1)


@dataclass(frozen=True, eq=False)
class EquilibriumTable:
    params: ModelParams
    grid: PolarGrid
    Z: float
    c1: float


def partition_function(params, grid):
    """Truncated Z = int exp(-Phi_Omega(v)/sigma) dv; independent of Omega."""
    s = scaled_integral(1.0, grid)
    return sphere_area(params.dim - 2) * s * float(np.exp(grid.log_shift))


def _c1_ratio(grid):
    return scaled_integral(lambda c, r: r * c, grid) / scaled_integral(1.0, grid)


def make_table(params, grid=None, n_theta=64, n_r=64, truncation_tol=1e-18):
    if grid is None:
        grid = build_polar_grid(params, n_theta, n_r, truncation_tol)
    elif grid.params != params:
        raise DomainError("grid was built for different model parameters")
    Z = partition_function(params, grid)
    if not (np.isfinite(Z) and Z > 0):
        raise DomainError(f"partition function is not finite and positive: {Z!r}")
    c1 = _c1_ratio(grid)
    return EquilibriumTable(params=params, grid=grid, Z=Z, c1=c1)


def potential_phi(v, omega, params):
    """Phi_Omega(v) = |v - Omega|^2 / 2 + eta V(|v|).

    Complex input is accepted for the analytic potentials (complex-step checks).
    """
    v = np.asarray(v)
    r = np.sqrt(np.sum(v * v, axis=-1))
    diff = v - omega
    return 0.5 * np.sum(diff * diff, axis=-1) + params.V(r)


def grad_phi(v, omega, params):
    """grad_v Phi_Omega = v - Omega + eta V'(|v|) v / |v|."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        radial = np.where(r > 0, params.dV(r) / np.where(r > 0, r, 1.0), 0.0)
    return v - omega + radial * v


def equilibrium_density(v, omega, table):
    """M_Omega(v) = exp(-Phi_Omega(v)/sigma) / Z."""
    omega = check_unit(omega)
    phi = potential_phi(v, omega, table.params)
    return np.exp(-phi / table.params.sigma) / table.Z


def directional_moment_c1(table):
    """c1 = int (v . Omega) M_Omega dv as a ratio of two (theta, r) integrals."""
    c1 = _c1_ratio(table.grid)
    if not c1 > 0:
        raise DomainError(f"directional moment is not positive: {c1!r}")
    return c1


def first_moment(omega, table, n_phi=8):
    """int v M_Omega dv evaluated as a full-space quadrature in the rotated frame."""
    omega = check_unit(omega)
    grid = table.grid
    v, w, logw = velocity_rule(grid, n_phi)
    m = np.exp(logw - grid.log_shift) * w
    local = (m[:, None] * v).sum(axis=0) / m.sum()
    return frame(omega) @ local


def pressure_tensor(omega, table, n_phi=8):
    """int (v - Omega) (x) (I - Omega (x) Omega)(v - Omega) M_Omega dv.

    Evaluated in the frame where Omega = e1 and rotated back.
    """
    omega = check_unit(omega)
    grid = table.grid
    d = table.params.dim
    v, w, logw = velocity_rule(grid, n_phi)
    m = np.exp(logw - grid.log_shift) * w
    e1 = np.zeros(d)
    e1[0] = 1.0
    left = v - e1
    right = v.copy()
    right[:, 0] = 0.0
    local = np.einsum("n,ni,nj->ij", m, left, right) / m.sum()
    Q = frame(omega)
    return Q @ local @ Q.T


def transverse_second_moment(table):
    """int (|v|^2 - (v . Omega)^2) / (d - 1) M_Omega dv via the (theta, r) grid."""
    d = table.params.dim
    num = scaled_integral(lambda c, r: (r * r) * (1.0 - c * c) / (d - 1), table.grid)
    return num / scaled_integral(1.0, table.grid)


def orientation_of(moment):
    """moment / |moment|, or the zero vector for a vanishing moment.

    A nonzero moment shorter than 1e-14 is still normalised, with a
    ``NearZeroMoment`` warning.
    """
    m = np.asarray(moment, dtype=float)
    scale = np.max(np.abs(m)) if m.size else 0.0
    if scale == 0.0:
        return np.zeros_like(m)
    u = m / scale
    length = np.linalg.norm(u)
    if scale * length < NEAR_ZERO:
        warnings.warn(f"normalising a moment of length {scale * length:.3e}", NearZeroMoment,
                      stacklevel=2)
    return u / length


def ray_mode(params, bracket=(1e-9, 50.0)):
    """Maximiser of M_Omega along the ray t * Omega (root of t - 1 + V'(t) = 0)."""
    from scipy.optimize import minimize_scalar

    f = lambda t: (t - 1.0) ** 2 / 2.0 + float(params.V(t))
    res = minimize_scalar(f, bounds=bracket, method="bounded", options={"xatol": 1e-12})
    return float(res.x)

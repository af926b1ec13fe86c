"""Finite-volume solver for the density / orientation system on periodic meshes.

    d_t rho + div(rho c1 Omega) = 0
    d_t Omega + c2 (Omega . grad) Omega + sigma (I - Omega Omega) grad(rho) / rho = 0

The mesh may have fewer axes than the velocity dimension (a 1D mesh with
Omega in S^1 is the usual quasi-1D reduction); gradients then only have
components along the mesh axes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, VacuumCell, ZeroOrientation

VACUUM = 1e-30
ZERO_ORIENTATION = 1e-14


@dataclass(frozen=True)
class PeriodicMesh:
    """Uniform periodic mesh on [0, L_1) x ... with ``shape`` cells."""

    shape: tuple
    lengths: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        if len(shape) not in (1, 2) or len(lengths) != len(shape):
            raise DomainError("mesh must be 1D or 2D with one length per axis")
        if min(shape) < 3 or min(lengths) <= 0:
            raise DomainError("mesh needs at least 3 cells per axis and positive lengths")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def dx(self):
        return min(self.spacing)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def centers(self):
        """Cell centres, shape ``shape + (ndim,)``."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.shape, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def edges(self, axis=0):
        return np.linspace(0.0, self.lengths[axis], self.shape[axis] + 1)


@dataclass(frozen=True, eq=False)
class HydroState:
    mesh: PeriodicMesh
    rho: np.ndarray
    omega: np.ndarray  # shape mesh.shape + (d,)
    time: float
    coeffs: object  # anything with c1, c2 and sigma (or params.sigma)

    @property
    def mass(self):
        return float(np.sum(self.rho) * self.mesh.cell_volume)

    def unit_defect(self):
        return float(np.max(np.abs(np.linalg.norm(self.omega, axis=-1) - 1.0)))


@dataclass(frozen=True)
class SolverConfig:
    t_end: float
    cfl: float = 0.5
    flux: str = "rusanov"
    omega_update: str = "project_each_step"
    output_every: float | None = None

    def __post_init__(self):
        if not 0 < self.cfl <= 1:
            raise DomainError("cfl must lie in (0, 1]")
        if not self.t_end >= 0:
            raise DomainError("t_end must be nonnegative")
        if self.flux not in ("upwind", "rusanov"):
            raise DomainError(f"unknown flux {self.flux!r}")
        if self.omega_update != "project_each_step":
            raise DomainError(f"unknown omega update {self.omega_update!r}")
        if self.output_every is not None and not self.output_every > 0:
            raise DomainError("output_every must be positive")


def _coeff(coeffs):
    sigma = getattr(coeffs, "sigma", None)
    if sigma is None:
        sigma = coeffs.params.sigma
    return float(coeffs.c1), float(coeffs.c2), float(sigma)


def _normalise(omega, where="cell"):
    norm = np.linalg.norm(omega, axis=-1)
    bad = norm < ZERO_ORIENTATION
    if np.any(bad):
        cell = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ZeroOrientation(f"orientation vanishes at {where} {cell}")
    return omega / norm[..., None]


def init_state(mesh, rho_field, omega_field, coeffs, time=0.0):
    """Midpoint samples of ``rho_field(x)`` and normalised ``omega_field(x)``.

    Both callables receive the cell centres, shape ``mesh.shape + (ndim,)``.
    """
    x = mesh.centers()
    rho = np.broadcast_to(np.asarray(rho_field(x), dtype=float), mesh.shape).copy()
    if not np.all(np.isfinite(rho)) or np.any(rho < 0):
        raise DomainError("initial density must be finite and nonnegative")
    omega = np.asarray(omega_field(x), dtype=float)
    omega = np.broadcast_to(omega, mesh.shape + omega.shape[-1:]).copy()
    if omega.shape[-1] < mesh.ndim:
        raise DomainError("orientation has fewer components than the mesh has axes")
    return HydroState(mesh=mesh, rho=rho, omega=_normalise(omega), time=float(time), coeffs=coeffs)


def stable_dt(state, config):
    """cfl * dx / (max(|c1|, |c2|) + sqrt(sigma))."""
    c1, c2, sigma = _coeff(state.coeffs)
    return config.cfl * state.mesh.dx / (max(abs(c1), abs(c2)) + np.sqrt(sigma))


def _mass_flux(rho, u, axis, kind):
    """Numerical flux of rho u through the face between cell i and i+1 along ``axis``."""
    rho_r = np.roll(rho, -1, axis=axis)
    u_r = np.roll(u, -1, axis=axis)
    if kind == "rusanov":
        a = np.maximum(np.abs(u), np.abs(u_r))
        return 0.5 * (rho * u + rho_r * u_r) - 0.5 * a * (rho_r - rho)
    uf = 0.5 * (u + u_r)
    return np.where(uf > 0, uf * rho, uf * rho_r)


def _check_vacuum(rho):
    low = rho < VACUUM
    if np.any(low):
        cell = tuple(int(i) for i in np.argwhere(low)[0])
        raise VacuumCell(cell, float(rho[cell]))


def step(state, dt, config):
    """One explicit step: conservative mass update, upwind orientation transport
    with the projected pressure source, then renormalisation of Omega."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    limit = stable_dt(state, config)
    if dt > limit * (1 + 1e-12):
        raise DomainError(f"dt = {dt:.3e} exceeds the stable step {limit:.3e}")
    c1, c2, sigma = _coeff(state.coeffs)
    mesh = state.mesh
    rho, omega = state.rho, state.omega
    _check_vacuum(rho)

    drho = np.zeros_like(rho)
    domega = np.zeros_like(omega)
    grad_rho = np.zeros_like(omega)
    for k, h in enumerate(mesh.spacing):
        flux = _mass_flux(rho, c1 * omega[..., k], k, config.flux)
        drho -= (flux - np.roll(flux, 1, axis=k)) / h

        a = (c2 * omega[..., k])[..., None]
        back = (omega - np.roll(omega, 1, axis=k)) / h
        fwd = (np.roll(omega, -1, axis=k) - omega) / h
        domega -= np.where(a > 0, a * back, a * fwd)
        grad_rho[..., k] = (np.roll(rho, -1, axis=k) - np.roll(rho, 1, axis=k)) / (2 * h)

    g = grad_rho / rho[..., None]
    domega -= sigma * (g - np.sum(g * omega, axis=-1, keepdims=True) * omega)

    rho_new = rho + dt * drho
    _check_vacuum(rho_new)
    omega_new = _normalise(omega + dt * domega)
    return HydroState(mesh=mesh, rho=rho_new, omega=omega_new, time=state.time + dt,
                      coeffs=state.coeffs)


def run(state, config):
    """Step to ``config.t_end``; snapshots at t = 0 and every ``output_every``.

    The step size is the stable one, shortened to land on each output time.
    """
    every = config.output_every or config.t_end
    snaps = [state]
    if config.t_end == 0:
        return snaps
    targets = list(np.arange(every, config.t_end, every)) + [config.t_end]
    targets = [t for t in targets if t > state.time + 1e-14]
    dt_max = stable_dt(state, config)
    for target in targets:
        while state.time < target - 1e-14 * max(1.0, target):
            dt = min(dt_max, target - state.time)
            state = step(state, dt, config)
        state = replace(state, time=float(target))
        snaps.append(state)
    return snaps


def _fronts(x, pert, level):
    """Leftmost and rightmost positions where |pert| crosses ``level``, interpolated."""
    above = np.flatnonzero(np.abs(pert) >= level)
    if above.size == 0:
        return None
    i, j = above[0], above[-1]

    def cross(a, b):
        pa, pb = abs(pert[a]), abs(pert[b])
        t = (level - pa) / (pb - pa) if pb != pa else 0.0
        return x[a] + t * (x[b] - x[a])

    left = cross(i - 1, i) if i > 0 else x[i]
    right = cross(j + 1, j) if j + 1 < x.size else x[j]
    return left, right


def wave_speed_probe(state, duration=None, cfl=0.5, level=0.5):
    """Speeds of the trailing and leading half-maximum fronts of a 1D perturbation.

    The background is the median density; the perturbation is evolved for
    ``duration`` (default: a quarter box crossing at the maximal speed).
    Returns ``(min_speed, max_speed)``; ``(0, 0)`` without a perturbation.
    """
    mesh = state.mesh
    if mesh.ndim != 1:
        raise DomainError("wave_speed_probe needs a 1D state")
    x = mesh.centers()[..., 0]
    background = np.median(state.rho)
    pert0 = state.rho - background
    peak = np.max(np.abs(pert0))
    if peak <= 1e-14 * max(abs(background), 1.0):
        return 0.0, 0.0
    c1, c2, sigma = _coeff(state.coeffs)
    s_max = max(abs(c1), abs(c2)) + np.sqrt(sigma)
    duration = duration or 0.25 * mesh.lengths[0] / s_max
    # centre the bump so it does not cross the periodic seam
    shift = mesh.shape[0] // 2 - int(np.argmax(np.abs(pert0)))
    start = replace(state, rho=np.roll(state.rho, shift), omega=np.roll(state.omega, shift, axis=0))
    end = run(start, SolverConfig(t_end=duration, cfl=cfl))[-1]
    f0 = _fronts(x, start.rho - background, level * peak)
    pert1 = end.rho - background
    f1 = _fronts(x, pert1, level * np.max(np.abs(pert1)))
    speeds = [(b - a) / duration for a, b in zip(f0, f1)]
    return float(min(speeds)), float(max(speeds))

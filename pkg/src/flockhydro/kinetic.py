"""Particle simulation of the rescaled kinetic equation.

Each particle follows the Euler-Maruyama discretisation of

    dX = V dt
    dV = -(1/eps) [(V - Omega_hat) + eta grad V(|V|)] dt + sqrt(2 sigma / eps) dW

with Omega_hat the orientation of the empirical mean velocity, global in
homogeneous mode and per spatial cell otherwise. Gaussian increments come
from a Philox counter-based generator keyed by the seed with the step
number in the counter, so a run is reproducible whatever the chunking.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import ks_1samp

from .equilibrium import check_unit, orientation_of, NearZeroMoment
from .errors import DomainError, StiffStep
from .parallel import max_workers, parallel_map
from .quadrature import ModelParams, ZeroPotential, build_polar_grid, log_weight

STIFF_RATIO = 0.1
CHUNK = 262_144


class EmptyBinWarning(UserWarning):
    """A spatial bin had no particles (or zero mean velocity); its previous orientation was kept."""


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    velocities: np.ndarray  # (N, d)
    epsilon: float
    params: ModelParams
    rng_seed: int
    positions: np.ndarray | None = None  # (N, m), m <= d, or None when homogeneous
    box: tuple | None = None  # lengths of the periodic box, one per position axis
    n_cells: int = 1  # alignment cells along the first axis (inhomogeneous mode)
    total_mass: float = 1.0
    step_index: int = 0
    time: float = 0.0
    cell_orientation: np.ndarray | None = None  # last per-cell Omega_hat, (n_cells, d)
    fixed_orientation: np.ndarray | None = None  # overrides the mean-field Omega_hat when set

    def __post_init__(self):
        v = np.asarray(self.velocities, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] != self.params.dim:
            raise DomainError("velocities must have shape (N, dim) with N >= 1")
        if not np.all(np.isfinite(v)):
            raise DomainError("velocities must be finite")
        if not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.positions is not None:
            x = np.asarray(self.positions, dtype=float)
            if x.ndim != 2 or x.shape[0] != v.shape[0] or x.shape[1] > v.shape[1]:
                raise DomainError("positions must have shape (N, m) with m <= dim")
            if self.box is None or len(self.box) != x.shape[1]:
                raise DomainError("a periodic box length is needed per position axis")
            if self.n_cells < 1:
                raise DomainError("n_cells must be >= 1")

    @property
    def n(self):
        return self.velocities.shape[0]

    @property
    def homogeneous(self):
        return self.positions is None


@dataclass(frozen=True, eq=False)
class MomentField:
    bins: np.ndarray  # cell edges along the first axis
    rho_hat: np.ndarray
    omega_hat: np.ndarray  # unnormalised mean velocity per bin
    samples_per_bin: np.ndarray
    empty: np.ndarray  # bins with no particles

    @property
    def orientation(self):
        """Unit mean-velocity direction per bin; zero rows where the moment vanishes."""
        norm = np.linalg.norm(self.omega_hat, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(norm > 0, self.omega_hat / np.where(norm > 0, norm, 1.0), 0.0)


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def philox(seed, step, stream=0):
    """Generator for one (seed, step, stream) triple; counter words 2 and 3 hold step, stream."""
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, int(step), int(stream)]))


def sample_equilibrium(params, omega, n, rng):
    """Exact draws from M_omega by rejection from the Gaussian N(omega, sigma I).

    The acceptance probability is exp(-eta (V(|v|) - V_min)/sigma).
    """
    omega = check_unit(omega)
    d = params.dim
    sig = params.sigma
    r = np.linspace(0.0, 50.0, 20001)
    vmin = float(np.min(params.V(r)))
    out = np.empty((0, d))
    while out.shape[0] < n:
        m = max(2 * (n - out.shape[0]), 1024)
        v = omega + np.sqrt(sig) * rng.standard_normal((m, d))
        accept = rng.random(m) < np.exp(-(params.V(np.linalg.norm(v, axis=1)) - vmin) / sig)
        out = np.concatenate([out, v[accept]])
    return out[:n]


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def _orientations(ens):
    """Omega_hat per particle from pre-step velocities, and the per-cell table."""
    v = ens.velocities
    if ens.fixed_orientation is not None:
        return check_unit(ens.fixed_orientation)[None, :], ens.cell_orientation
    if ens.homogeneous:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NearZeroMoment)
            om = orientation_of(v.sum(axis=0))
        return om[None, :], None
    cells = cell_index(ens)
    d = v.shape[1]
    sums = np.stack([np.bincount(cells, weights=v[:, k], minlength=ens.n_cells) for k in range(d)],
                    axis=1)
    norm = np.linalg.norm(sums, axis=1)
    table = np.zeros_like(sums)
    ok = norm > 0
    table[ok] = sums[ok] / norm[ok, None]
    if not np.all(ok):
        previous = ens.cell_orientation
        if previous is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NearZeroMoment)
                previous = np.broadcast_to(orientation_of(v.sum(axis=0)), table.shape)
        table[~ok] = previous[~ok]
        warnings.warn(f"{int(np.sum(~ok))} bins without a mean velocity kept their previous "
                      "orientation", EmptyBinWarning, stacklevel=3)
    return table[cells], table


def cell_index(ens):
    x = ens.positions[:, 0]
    idx = np.floor(x / ens.box[0] * ens.n_cells).astype(np.int64)
    return np.clip(idx, 0, ens.n_cells - 1)


def _drift(v, om, params):
    drift = v - om
    if not isinstance(params.potential, ZeroPotential):
        r = np.sqrt(np.einsum("ij,ij->i", v, v))[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            drift += np.where(r > 0, params.dV(r) / np.where(r > 0, r, 1.0), 0.0) * v
    return drift


def kinetic_step(ens, dt, workers=None):
    """Advance every particle by one Euler-Maruyama step of size ``dt``."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    if dt > STIFF_RATIO * ens.epsilon * (1 + 1e-12):
        raise StiffStep(f"dt = {dt:.3e} exceeds {STIFF_RATIO} * epsilon = {STIFF_RATIO * ens.epsilon:.3e}")
    params = ens.params
    rate = dt / ens.epsilon
    amp = np.sqrt(2.0 * params.sigma * rate)
    v = ens.velocities
    om, table = _orientations(ens)
    noise = philox(ens.rng_seed, ens.step_index).standard_normal(v.shape)

    def advance(bounds):
        a, b = bounds
        out = noise[a:b]
        out *= amp
        out -= rate * _drift(v[a:b], om if om.shape[0] == 1 else om[a:b], params)
        out += v[a:b]
        return out

    workers = workers or max_workers()
    if workers > 1 and ens.n > CHUNK:
        parallel_map(advance, [(a, min(a + CHUNK, ens.n)) for a in range(0, ens.n, CHUNK)], workers)
    else:
        advance((0, ens.n))

    positions = ens.positions
    if positions is not None:
        m = positions.shape[1]
        positions = np.mod(positions + dt * v[:, :m], np.asarray(ens.box))
    return replace(ens, velocities=noise, positions=positions, step_index=ens.step_index + 1,
                   time=ens.time + dt, cell_orientation=table)


def simulate(ens, t_end, dt, callback=None, every=None):
    """Step until ``t_end``; the last step is shortened to land on it."""
    while ens.time < t_end - 1e-12 * max(1.0, t_end):
        h = min(dt, t_end - ens.time)
        ens = kinetic_step(ens, h)
        if callback is not None and every and ens.step_index % every == 0:
            callback(ens)
    return ens


# ---------------------------------------------------------------------------
# moments and diagnostics
# ---------------------------------------------------------------------------

def empirical_moments(ens, n_bins, indices=None):
    """Histogram density and mean velocity per bin along the first position axis.

    ``indices`` selects (possibly repeated) particles, e.g. for bootstrapping.
    Homogeneous ensembles give a single bin of unit width.
    """
    if n_bins < 1:
        raise DomainError("n_bins must be >= 1")
    v = ens.velocities if indices is None else ens.velocities[indices]
    n = v.shape[0]
    if ens.homogeneous:
        edges = np.array([0.0, 1.0])
        cells = np.zeros(n, dtype=np.int64)
        n_bins = 1
    else:
        L = ens.box[0]
        edges = np.linspace(0.0, L, n_bins + 1)
        x = ens.positions[:, 0] if indices is None else ens.positions[indices, 0]
        cells = np.clip(np.floor(x / L * n_bins).astype(np.int64), 0, n_bins - 1)
    counts = np.bincount(cells, minlength=n_bins)
    width = np.diff(edges)
    rho = counts * (ens.total_mass / n) / width
    sums = np.stack([np.bincount(cells, weights=v[:, k], minlength=n_bins) for k in range(v.shape[1])],
                    axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], 0.0)
    return MomentField(bins=edges, rho_hat=rho, omega_hat=mean, samples_per_bin=counts,
                       empty=counts == 0)


def marginal_cdfs(params, n_theta=2049, n_r=2049):
    """Quadrature CDFs of the speed |v| and of the angle to Omega under M_Omega.

    Returns two callables mapping arrays to probabilities.
    """
    d = params.dim
    grid = build_polar_grid(params, 64, 64)
    r_max = grid.r_max
    xg, wg = np.polynomial.legendre.leggauss(96)
    # speed: density r^(d-1) int e sin^(d-2) dtheta
    th_g = 0.5 * np.pi * (xg + 1.0)
    r = np.linspace(0.0, r_max, n_r)
    loge = log_weight(np.cos(th_g)[None, :], r[:, None], params)
    shift = loge.max()
    dens_r = r ** (d - 1) * (np.exp(loge - shift) * np.sin(th_g) ** (d - 2) * wg).sum(axis=1)
    # angle: density sin^(d-2) int r^(d-1) e dr
    r_g = 0.5 * r_max * (xg + 1.0)
    th = np.linspace(0.0, np.pi, n_theta)
    loge_t = log_weight(np.cos(th)[:, None], r_g[None, :], params)
    dens_t = np.sin(th) ** (d - 2) * (np.exp(loge_t - shift) * r_g ** (d - 1) * wg).sum(axis=1)
    cdf_r = cumulative_trapezoid(dens_r, r, initial=0.0)
    cdf_t = cumulative_trapezoid(dens_t, th, initial=0.0)
    cdf_r /= cdf_r[-1]
    cdf_t /= cdf_t[-1]
    return (lambda x: np.interp(x, r, cdf_r, right=1.0)), (lambda x: np.interp(x, th, cdf_t))


@dataclass(frozen=True)
class RelaxationReport:
    ks_speed: float
    ks_angle: float
    mean_orientation_norm: float
    time: float
    history: tuple = ()  # (time, ks_speed, ks_angle) at intermediate checkpoints


def _ks(ens, cdfs):
    cdf_r, cdf_t = cdfs
    v = ens.velocities
    om = orientation_of(v.mean(axis=0))
    speed = np.linalg.norm(v, axis=1)
    cos = np.clip((v @ om) / np.where(speed > 0, speed, 1.0), -1.0, 1.0)
    ks_r = ks_1samp(speed, cdf_r).statistic
    ks_t = ks_1samp(np.arccos(cos), cdf_t).statistic
    return float(ks_r), float(ks_t)


def relaxation_test(params, epsilon, N, t_end, seed, dt=None, initial="shifted", checkpoints=5):
    """Homogeneous run; KS distances of speed and angle samples to the M_Omega marginals.

    ``initial`` is ``"shifted"`` (a narrow Gaussian around 1.5 e1, far from
    equilibrium) or ``"equilibrium"`` (exact draws from M_e1).
    """
    if t_end < 10 * epsilon:
        raise DomainError("t_end must be at least 10 epsilon")
    d = params.dim
    e1 = np.eye(d)[0]
    rng = philox(seed, 0, stream=1)
    if initial == "equilibrium":
        v0 = sample_equilibrium(params, e1, N, rng)
    elif initial == "shifted":
        v0 = 1.5 * e1 + 0.3 * rng.standard_normal((N, d))
    else:
        raise DomainError(f"unknown initial condition {initial!r}")
    dt = dt or 0.01 * epsilon
    ens = ParticleEnsemble(velocities=v0, epsilon=epsilon, params=params, rng_seed=seed, step_index=1)
    cdfs = marginal_cdfs(params)
    history = []
    marks = np.linspace(0.0, t_end, checkpoints + 1)[1:] if checkpoints else [t_end]
    for t in marks:
        ens = simulate(ens, t, dt)
        history.append((float(t),) + _ks(ens, cdfs))
    ks_r, ks_t = history[-1][1:]
    mean_norm = float(np.linalg.norm(ens.velocities.mean(axis=0)))
    return RelaxationReport(ks_speed=ks_r, ks_angle=ks_t, mean_orientation_norm=mean_norm,
                            time=ens.time, history=tuple(history))


# ---------------------------------------------------------------------------
# comparison with the hydrodynamic solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    epsilon: float
    err_rho: float
    err_rho_sd: float
    err_angle: float
    err_angle_sd: float
    moments: "MomentField | None" = field(default=None, compare=False, repr=False)  # final binned ensemble


def _angle_error(field, omega_ref):
    """Mean angle between binned orientations and reference unit vectors over nonempty bins."""
    om = field.orientation
    ok = ~field.empty & (np.linalg.norm(om, axis=1) > 0)
    cos = np.clip(np.sum(om[ok] * omega_ref[ok], axis=1), -1.0, 1.0)
    return float(np.mean(np.arccos(cos)))


def _errors(ens, n_bins, rho_ref, omega_ref, indices=None):
    field = empirical_moments(ens, n_bins, indices)
    h = ens.box[0] / n_bins
    return float(np.sum(np.abs(field.rho_hat - rho_ref)) * h), _angle_error(field, omega_ref)


def _restrict(state, factor):
    """Cell averages of a refined 1D hydrodynamic state on a mesh ``factor`` times coarser."""
    rho = state.rho.reshape(-1, factor).mean(axis=1)
    om = state.omega.reshape(-1, factor, state.omega.shape[-1]).mean(axis=1)
    return rho, om / np.linalg.norm(om, axis=1, keepdims=True)


def sample_initial(params, mesh, rho_field, omega_field, N, rng):
    """Positions from rho (inverse CDF on a fine grid), velocities from M_Omega(x)."""
    L = mesh.lengths[0]
    xs = np.linspace(0.0, L, 16 * mesh.shape[0] + 1)
    dens = np.asarray(rho_field(xs[:, None]), dtype=float)
    cdf = cumulative_trapezoid(dens, xs, initial=0.0)
    mass = cdf[-1]
    x = np.interp(rng.random(N) * mass, cdf, xs)
    om = np.asarray(omega_field(x[:, None]), dtype=float)
    om = np.broadcast_to(om, (N, params.dim)) / np.linalg.norm(om, axis=-1, keepdims=True)
    d = params.dim
    # rotate draws from M_e1 into each particle's frame
    base = sample_equilibrium(params, np.eye(d)[0], N, rng)
    if d == 2:
        c, s = om[:, 0], om[:, 1]
        v = np.stack([c * base[:, 0] - s * base[:, 1], s * base[:, 0] + c * base[:, 1]], axis=1)
    else:
        from .equilibrium import frame

        v = np.einsum("nij,nj->ni", np.stack([frame(o) for o in om]), base)
    return x[:, None], v, float(mass)


def hydro_comparison(params, coeffs, epsilon_list, N, mesh, t_end, seed, rho_field, omega_field,
                     dt_ratio=0.01, refine=16, n_boot=50, cfl=0.5):
    """Particle runs at each epsilon against the hydrodynamic solution at ``t_end``.

    ``rho_field`` and ``omega_field`` take positions of shape ``(..., 1)`` and
    return densities ``(...)`` and orientations ``(..., dim)``.

    The hydrodynamic reference is computed on a mesh ``refine`` times finer
    and averaged back. Error bars are bootstrap standard deviations over
    particles of the final ensemble.
    """
    from .soh import PeriodicMesh, SolverConfig, init_state, run

    if mesh.ndim != 1:
        raise DomainError("hydro_comparison needs a 1D mesh")
    n_bins = mesh.shape[0]
    fine = PeriodicMesh((n_bins * refine,), mesh.lengths)
    state = init_state(fine, rho_field, omega_field, coeffs)
    final = run(state, SolverConfig(t_end=t_end, cfl=cfl))[-1]
    rho_ref, omega_ref = _restrict(final, refine)

    rows = []
    for k, eps in enumerate(epsilon_list):
        rng = philox(seed, 0, stream=100 + k)
        x, v, mass = sample_initial(params, mesh, rho_field, omega_field, N, rng)
        ens = ParticleEnsemble(velocities=v, epsilon=eps, params=params, rng_seed=seed + 7919 * (k + 1),
                               positions=x, box=mesh.lengths, n_cells=n_bins, total_mass=mass,
                               step_index=1)
        if t_end > 0:
            ens = simulate(ens, t_end, dt_ratio * eps)
        e_rho, e_ang = _errors(ens, n_bins, rho_ref, omega_ref)
        boot = philox(seed, 0, stream=1000 + k)
        samples = np.array([_errors(ens, n_bins, rho_ref, omega_ref, boot.integers(0, ens.n, ens.n))
                            for _ in range(n_boot)])
        sd = samples.std(axis=0, ddof=1) if n_boot > 1 else np.zeros(2)
        rows.append(ComparisonRow(epsilon=float(eps), err_rho=e_rho, err_rho_sd=float(sd[0]),
                                  err_angle=e_ang, err_angle_sd=float(sd[1]),
                                  moments=empirical_moments(ens, n_bins)))
    return rows


import math

import numpy as np
import pytest

from flockhydro.coefficients import Coefficients
from flockhydro.equilibrium import make_table
from flockhydro.errors import DomainError, StiffStep
from flockhydro.kinetic import (
    EmptyBinWarning,
    ParticleEnsemble,
    empirical_moments,
    hydro_comparison,
    kinetic_step,
    marginal_cdfs,
    philox,
    relaxation_test,
    sample_equilibrium,
    simulate,
)
from flockhydro.quadrature import ModelParams, SelfPropulsion
from flockhydro.soh import PeriodicMesh


def test_single_particle_relaxes_to_frozen_orientation():
    # sigma is tiny rather than zero: the model requires sigma > 0
    p = ModelParams(1e-300, 2)
    v0 = np.array([[-0.4, 1.7]])
    e1 = np.array([1.0, 0.0])
    eps = 0.1
    ens = ParticleEnsemble(v0, eps, p, rng_seed=0, fixed_orientation=e1)
    out = simulate(ens, 5 * eps, 0.01 * eps)
    assert np.linalg.norm(out.velocities[0] - e1) <= math.exp(-5) * np.linalg.norm(v0[0] - e1)


def test_gaussian_ensemble_moments():
    N = 100_000
    p = ModelParams(1.0, 2)
    rng = philox(3, 0, 1)
    v0 = np.array([1.5, 0.0]) + 0.3 * rng.standard_normal((N, 2))
    out = simulate(ParticleEnsemble(v0, 0.1, p, rng_seed=3), 1.0, 0.001)
    v = out.velocities
    mean = v.mean(axis=0)
    om = mean / np.linalg.norm(mean)
    bound = 3 / math.sqrt(N)
    assert abs(mean @ om - 1.0) < bound  # c1 = 1
    cov = np.cov(v.T)
    # Euler-Maruyama inflates the stationary variance to sigma / (1 - dt / (2 eps))
    bias = 1.0 / (1.0 - 0.001 / 0.2) - 1.0
    assert np.max(np.abs(cov - np.eye(2))) < 3 * math.sqrt(2) / math.sqrt(N) + bias


def test_seed_determinism():
    p = ModelParams(0.5, 2, SelfPropulsion(1.0, 1.0))
    v0 = philox(1, 0, 1).standard_normal((2000, 2))
    runs = [simulate(ParticleEnsemble(v0, 1.0, p, rng_seed=42), 1.0, 0.01) for _ in range(2)]
    assert runs[0].step_index == 100
    assert runs[0].velocities.tobytes() == runs[1].velocities.tobytes()
    other = simulate(ParticleEnsemble(v0, 1.0, p, rng_seed=43), 1.0, 0.01)
    assert other.velocities.tobytes() != runs[0].velocities.tobytes()


def test_thread_partition_does_not_change_results():
    p = ModelParams(1.0, 3, SelfPropulsion(1.0, 1.0))
    v0 = philox(2, 0, 1).standard_normal((600_000, 3))
    ens = ParticleEnsemble(v0, 1.0, p, rng_seed=9)
    a = kinetic_step(ens, 0.01, workers=1)
    b = kinetic_step(ens, 0.01, workers=3)
    assert a.velocities.tobytes() == b.velocities.tobytes()


def test_stiff_step_guard():
    ens = ParticleEnsemble(np.ones((3, 2)), 0.1, ModelParams(1.0, 2), rng_seed=0)
    with pytest.raises(StiffStep):
        kinetic_step(ens, 0.02)
    with pytest.raises(DomainError):
        kinetic_step(ens, 0.0)


def test_ensemble_validation():
    p = ModelParams(1.0, 2)
    with pytest.raises(DomainError):
        ParticleEnsemble(np.ones((3, 3)), 0.1, p, rng_seed=0)
    with pytest.raises(DomainError):
        ParticleEnsemble(np.ones((3, 2)), 0.0, p, rng_seed=0)
    with pytest.raises(DomainError):
        ParticleEnsemble(np.ones((3, 2)), 0.1, p, rng_seed=0, positions=np.zeros((3, 1)))


def _inhomogeneous(x, v, n_cells=4, seed=0):
    return ParticleEnsemble(v, 0.5, ModelParams(1.0, 2), rng_seed=seed, positions=x, box=(1.0,),
                            n_cells=n_cells, total_mass=2.0)


def test_moments_single_cell():
    x = np.full((50, 1), 0.3)
    v = np.tile([1.0, 0.0], (50, 1))
    m = empirical_moments(_inhomogeneous(x, v), 4)
    assert np.allclose(m.rho_hat * 0.25, [0.0, 2.0, 0.0, 0.0])
    assert list(m.empty) == [True, False, True, True]


def test_moments_equal_velocities():
    rng = np.random.default_rng(0)
    x = rng.random((200, 1))
    u = np.array([0.3, -0.4])
    m = empirical_moments(_inhomogeneous(x, np.tile(u, (200, 1))), 8)
    assert np.allclose(m.orientation[~m.empty], u / np.linalg.norm(u))


def test_moments_uniform_positions():
    N, bins = 1_000_000, 50
    x = philox(5, 0, 1).random((N, 1))
    m = empirical_moments(_inhomogeneous(x, np.ones((N, 2))), bins)
    assert np.sum(m.rho_hat) / bins == pytest.approx(2.0)
    assert np.max(np.abs(m.rho_hat / 2.0 - 1.0)) < 4 / math.sqrt(N / bins)
    with pytest.raises(DomainError):
        empirical_moments(_inhomogeneous(x[:10], np.ones((10, 2))), 0)


def test_particles_conserved_and_wrapped():
    rng = np.random.default_rng(1)
    x = rng.random((1000, 1))
    v = rng.standard_normal((1000, 2)) * 3
    ens = simulate(_inhomogeneous(x, v, n_cells=8), 0.5, 0.01)
    assert ens.n == 1000
    assert np.all((ens.positions >= 0) & (ens.positions < 1.0))


def test_empty_cells_keep_previous_orientation():
    x = np.full((20, 1), 0.1)
    v = np.tile([0.0, 1.0], (20, 1))
    ens = _inhomogeneous(x, v, n_cells=4)
    with pytest.warns(EmptyBinWarning):
        out = kinetic_step(ens, 0.01)
    assert np.allclose(out.cell_orientation, [0.0, 1.0])


@pytest.mark.parametrize("d", [2, 3])
def test_equilibrium_sampler_moments(d):
    p = ModelParams(0.5, d, SelfPropulsion(1.0, 1.0))
    N = 200_000
    om = np.eye(d)[-1]
    v = sample_equilibrium(p, om, N, np.random.default_rng(d))
    c1 = make_table(p).c1
    assert np.linalg.norm(v.mean(axis=0) - c1 * om) < 4 / math.sqrt(N)


def test_marginal_cdfs_are_distributions():
    cdf_r, cdf_t = marginal_cdfs(ModelParams(1.0, 3, SelfPropulsion(1.0, 1.0)))
    r = np.linspace(0.0, 10.0, 200)
    t = np.linspace(0.0, math.pi, 200)
    for f, x in ((cdf_r, r), (cdf_t, t)):
        y = f(x)
        assert y[0] == 0.0 and y[-1] == pytest.approx(1.0) and np.all(np.diff(y) >= 0)


def test_stationarity_from_equilibrium():
    p = ModelParams(1.0, 2)
    rep = relaxation_test(p, 1.0, 100_000, 10.0, 4, initial="equilibrium", checkpoints=3)
    assert all(ks_r < 0.01 and ks_t < 0.01 for _, ks_r, ks_t in rep.history)


def test_time_step_halving_within_noise():
    p = ModelParams(0.5, 2, SelfPropulsion(1.0, 1.0))
    N = 20_000
    a = relaxation_test(p, 1.0, N, 10.0, 6, dt=0.02, checkpoints=1)
    b = relaxation_test(p, 1.0, N, 10.0, 6, dt=0.01, checkpoints=1)
    floor = 1.36 * math.sqrt(2 / N)  # two-sample KS at 95%
    assert abs(a.ks_speed - b.ks_speed) < floor and abs(a.ks_angle - b.ks_angle) < floor


def test_relaxation_validation():
    with pytest.raises(DomainError):
        relaxation_test(ModelParams(1.0, 2), 1.0, 10, 5.0, 0)
    with pytest.raises(DomainError):
        relaxation_test(ModelParams(1.0, 2), 1.0, 10, 20.0, 0, initial="cold")


def _wave(x):
    return np.stack([np.cos(0.3 * np.sin(2 * np.pi * x[..., 0])), np.sin(0.3 * np.sin(2 * np.pi * x[..., 0]))],
                    axis=-1)


def test_comparison_at_time_zero_is_sampling_error():
    p = ModelParams(1.0, 2)
    co = Coefficients.given(1.0, 1.0, 1.0)
    mesh = PeriodicMesh((32,), (1.0,))
    N = 100_000
    rows = hydro_comparison(p, co, [0.2, 0.1], N, mesh, 0.0, 3,
                            lambda x: 1.0 + 0.2 * np.sin(2 * np.pi * x[..., 0]), _wave, n_boot=10)
    per_bin = N / 32
    floor_rho = math.sqrt(2 / math.pi) / math.sqrt(per_bin)
    floor_angle = math.sqrt(2 / math.pi) * math.sqrt(1.0 / per_bin)
    for r in rows:
        assert r.err_rho < 1.5 * floor_rho
        assert r.err_angle < 1.5 * floor_angle
        assert r.err_rho_sd > 0


def test_uniform_data_stays_at_noise_floor():
    p = ModelParams(1.0, 2)
    co = Coefficients.given(1.0, 1.0, 1.0)
    mesh = PeriodicMesh((16,), (1.0,))
    N = 50_000
    rows = hydro_comparison(p, co, [0.2, 0.1], N, mesh, 0.1, 8, lambda x: np.ones(x.shape[:-1]),
                            lambda x: np.array([1.0, 0.0]), n_boot=5)
    per_bin = N / 16
    for r in rows:
        assert r.err_rho < 1.5 * math.sqrt(2 / math.pi) / math.sqrt(per_bin)
        assert r.err_angle < 1.5 * math.sqrt(2 / math.pi) / math.sqrt(per_bin)


def test_comparison_needs_one_dimensional_mesh():
    with pytest.raises(DomainError):
        hydro_comparison(ModelParams(1.0, 2), Coefficients.given(1, 1, 1), [0.1], 10,
                         PeriodicMesh((4, 4), (1.0, 1.0)), 0.0, 0, lambda x: 1.0 + 0 * x[..., 0], _wave)

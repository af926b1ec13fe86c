import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flockhydro.coefficients import Coefficients
from flockhydro.errors import DomainError, VacuumCell, ZeroOrientation
from flockhydro.soh import (
    HydroState,
    PeriodicMesh,
    SolverConfig,
    init_state,
    run,
    stable_dt,
    step,
    wave_speed_probe,
)

CO = Coefficients.given(0.8, 0.6, 0.5)


def _angle(phi):
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


def _smooth_2d(mesh, coeffs=CO):
    rho = lambda x: 1.0 + 0.3 * np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])
    om = lambda x: _angle(0.4 + 0.8 * np.sin(2 * np.pi * (x[..., 0] + x[..., 1])))
    return init_state(mesh, rho, om, coeffs)


def test_constant_initial_state():
    mesh = PeriodicMesh((8, 6), (1.0, 2.0))
    s = init_state(mesh, lambda x: 2.0, lambda x: np.array([3.0, 4.0]), CO)
    assert np.all(s.rho == 2.0)
    assert np.allclose(s.omega, [0.6, 0.8])


def test_riemann_data_is_piecewise_constant():
    mesh = PeriodicMesh((10,), (1.0,))
    s = init_state(mesh, lambda x: np.where(x[..., 0] < 0.5, 1.0, 0.2), lambda x: np.array([1.0, 0.0]), CO)
    assert list(s.rho) == [1.0] * 5 + [0.2] * 5


def test_smooth_orientation_is_unit():
    s = _smooth_2d(PeriodicMesh((16, 16), (1.0, 1.0)))
    assert s.unit_defect() < 1e-15


def test_init_errors():
    mesh = PeriodicMesh((4,), (1.0,))
    with pytest.raises(ZeroOrientation):
        init_state(mesh, lambda x: 1.0, lambda x: np.zeros(x.shape[:-1] + (2,)), CO)
    with pytest.raises(DomainError):
        init_state(mesh, lambda x: -1.0, lambda x: np.array([1.0, 0.0]), CO)
    with pytest.raises(DomainError):
        PeriodicMesh((2,), (1.0,))


def test_stable_dt_example():
    mesh = PeriodicMesh((100,), (1.0,))
    s = init_state(mesh, lambda x: 1.0, lambda x: np.array([1.0, 0.0]), Coefficients.given(1.0, 0.5, 1.0))
    assert stable_dt(s, SolverConfig(t_end=1.0, cfl=0.5)) == pytest.approx(0.0025, rel=1e-14)


def test_stable_dt_scaling():
    make = lambda n, r: init_state(PeriodicMesh((n,), (1.0,)), lambda x: r, lambda x: np.array([1.0, 0.0]), CO)
    cfg = SolverConfig(t_end=1.0)
    assert stable_dt(make(64, 1.0), cfg) == pytest.approx(0.5 * stable_dt(make(32, 1.0), cfg), rel=1e-14)
    assert stable_dt(make(64, 1.0), cfg) == stable_dt(make(64, 7.0), cfg)


def test_config_validation():
    for bad in (dict(cfl=0.0), dict(cfl=1.5), dict(t_end=-1.0), dict(flux="roe"),
                dict(omega_update="never"), dict(output_every=0.0)):
        with pytest.raises(DomainError):
            SolverConfig(**{"t_end": 1.0, **bad})


@pytest.mark.parametrize("flux", ["rusanov", "upwind"])
def test_constant_state_is_stationary(flux):
    mesh = PeriodicMesh((12, 9), (1.0, 0.7))
    s = init_state(mesh, lambda x: 1.3, lambda x: _angle(0.7), CO)
    cfg = SolverConfig(t_end=1.0, flux=flux)
    out = step(s, stable_dt(s, cfg), cfg)
    assert np.array_equal(out.rho, s.rho)
    assert np.max(np.abs(out.omega - s.omega)) < 1e-15


def test_one_dimensional_advection_moves_centre_of_mass():
    """Uniform Omega = e1 stays put and rho is carried at speed c1."""
    mesh = PeriodicMesh((200,), (10.0,))
    rho = lambda x: 1e-3 + np.exp(-((x[..., 0] - 3.0) ** 2) / 0.1)
    s = init_state(mesh, rho, lambda x: np.array([1.0, 0.0]), CO)
    out = run(s, SolverConfig(t_end=2.0, flux="upwind"))[-1]
    assert np.array_equal(out.omega, s.omega)
    x = mesh.centers()[..., 0]
    # the uniform background moves across the seam; track the bump alone
    bump0, bump1 = s.rho - 1e-3, out.rho - 1e-3
    shift = np.sum(x * bump1) / bump1.sum() - np.sum(x * bump0) / bump0.sum()
    assert shift == pytest.approx(CO.c1 * 2.0, rel=1e-10)


def test_rotation_equivariance():
    """Rotating the square by 90 degrees commutes with a step."""
    mesh = PeriodicMesh((16, 16), (1.0, 1.0))
    s = _smooth_2d(mesh)
    R = np.array([[0.0, -1.0], [1.0, 0.0]])
    rot_rho = np.rot90(s.rho)
    rot_om = np.rot90(s.omega) @ R.T
    r = HydroState(mesh, rot_rho, rot_om, 0.0, CO)
    cfg = SolverConfig(t_end=1.0)
    dt = stable_dt(s, cfg)
    a, b = step(s, dt, cfg), step(r, dt, cfg)
    assert np.max(np.abs(np.rot90(a.rho) - b.rho)) < 1e-12
    assert np.max(np.abs(np.rot90(a.omega) @ R.T - b.omega)) < 1e-12


def test_translation_equivariance():
    mesh = PeriodicMesh((16, 16), (1.0, 1.0))
    s = _smooth_2d(mesh)
    t = HydroState(mesh, np.roll(s.rho, 5, axis=0), np.roll(s.omega, 5, axis=0), 0.0, CO)
    cfg = SolverConfig(t_end=1.0)
    dt = stable_dt(s, cfg)
    assert np.array_equal(np.roll(step(s, dt, cfg).rho, 5, axis=0), step(t, dt, cfg).rho)


def test_mass_and_unit_constraint_over_many_steps():
    mesh = PeriodicMesh((32, 32), (1.0, 1.0))
    s = _smooth_2d(mesh)
    cfg = SolverConfig(t_end=1.0)
    dt = stable_dt(s, cfg)
    m0 = s.mass
    worst = 0.0
    for _ in range(1000):
        s = step(s, dt, cfg)
        worst = max(worst, s.unit_defect())
    assert abs(s.mass - m0) / m0 < 1e-13
    assert worst < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 2 * np.pi))
def test_mass_conservation_property(c1, amp, phase):
    mesh = PeriodicMesh((24,), (1.0,))
    co = Coefficients.given(c1, 0.5, 0.3)
    s = init_state(mesh, lambda x: 1.0 + 0.9 * amp * np.sin(2 * np.pi * x[..., 0] + phase),
                   lambda x: _angle(phase + amp * np.cos(2 * np.pi * x[..., 0])), co)
    out = run(s, SolverConfig(t_end=0.2))[-1]
    assert abs(out.mass - s.mass) <= 1e-13 * s.mass


def _advection_error(n):
    mesh = PeriodicMesh((n,), (1.0,))
    co = Coefficients.given(1.0, 1.0, 1.0)
    f = lambda x: 1.0 + 0.5 * np.sin(2 * np.pi * x)
    s = init_state(mesh, lambda x: f(x[..., 0]), lambda x: np.array([1.0, 0.0]), co)
    t = 0.5
    out = run(s, SolverConfig(t_end=t))[-1]
    # exact cell averages of the transported profile
    e = mesh.edges()
    F = lambda x: x - 0.5 * np.cos(2 * np.pi * x) / (2 * np.pi)
    exact = (F(e[1:] - t) - F(e[:-1] - t)) / np.diff(e)
    return np.sum(np.abs(out.rho - exact)) / n


def test_advection_order():
    errs = [_advection_error(n) for n in (50, 100, 200, 400)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9), orders


def test_run_snapshots():
    mesh = PeriodicMesh((20,), (1.0,))
    s = init_state(mesh, lambda x: 1.0 + 0.1 * np.sin(2 * np.pi * x[..., 0]), lambda x: _angle(0.2), CO)
    assert run(s, SolverConfig(t_end=0.0)) == [s]
    snaps = run(s, SolverConfig(t_end=0.3, output_every=0.1))
    assert [round(x.time, 12) for x in snaps] == [0.0, 0.1, 0.2, 0.3]


def test_step_guards():
    mesh = PeriodicMesh((20,), (1.0,))
    s = init_state(mesh, lambda x: 1.0, lambda x: _angle(0.0), CO)
    cfg = SolverConfig(t_end=1.0)
    with pytest.raises(DomainError):
        step(s, 2 * stable_dt(s, cfg), cfg)
    with pytest.raises(DomainError):
        step(s, 0.0, cfg)
    vac = init_state(mesh, lambda x: np.where(x[..., 0] < 0.5, 1.0, 0.0), lambda x: _angle(0.0), CO)
    with pytest.raises(VacuumCell) as info:
        step(vac, stable_dt(vac, cfg), cfg)
    assert info.value.cell == (10,)


def test_deterministic():
    mesh = PeriodicMesh((16, 16), (1.0, 1.0))
    a = run(_smooth_2d(mesh), SolverConfig(t_end=0.1))[-1]
    b = run(_smooth_2d(mesh), SolverConfig(t_end=0.1))[-1]
    assert a.rho.tobytes() == b.rho.tobytes() and a.omega.tobytes() == b.omega.tobytes()


def _bump_state(coeffs, n=400):
    mesh = PeriodicMesh((n,), (10.0,))
    return init_state(mesh, lambda x: 1.0 + 1e-3 * np.exp(-((x[..., 0] - 5.0) ** 2) / 0.05),
                      lambda x: _angle(0.0), coeffs)


def test_wave_speeds_bounded():
    co = Coefficients.given(1.0, 0.5, 1.0)
    lo, hi = wave_speed_probe(_bump_state(co))
    assert np.isfinite(lo) and np.isfinite(hi)
    assert -2.0 <= lo <= hi <= 2.0


def test_wave_speed_without_perturbation():
    s = init_state(PeriodicMesh((50,), (1.0,)), lambda x: 1.0, lambda x: _angle(0.0), CO)
    assert wave_speed_probe(s) == (0.0, 0.0)
    with pytest.raises(DomainError):
        wave_speed_probe(_smooth_2d(PeriodicMesh((8, 8), (1.0, 1.0))))


def test_wave_speeds_scale_with_c1():
    slow = wave_speed_probe(_bump_state(Coefficients.given(1.0, 1.0, 1e-8)), duration=1.0)
    fast = wave_speed_probe(_bump_state(Coefficients.given(2.0, 2.0, 1e-8)), duration=1.0)
    assert np.allclose(np.array(fast), 2 * np.array(slow), rtol=0.05)

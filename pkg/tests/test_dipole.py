import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capmound.core import InitialCondition, PhysicalParams, Profile, make_initial_profile
from capmound.dipole import (DipoleConfig, InstabilityError, RescaledState, boundary_speed, run_dipole,
                             sample_times, stable_dt, step_dipole)

from oracles import exact_dipole_profile


def _state(n=50, x_r=1.0):
    p = make_initial_profile(InitialCondition(), n)
    return RescaledState.from_profile(p)


def test_state_validation():
    with pytest.raises(ValueError):
        RescaledState(np.zeros(2), 1.0, 0.0)
    with pytest.raises(ValueError):
        RescaledState(np.zeros(5), 0.0, 0.0)
    with pytest.raises(ValueError):
        RescaledState.from_profile(Profile(0.5, 1.0, np.zeros(4)))


def test_boundary_speed_formula():
    s = RescaledState(np.array([0.0, 0.3, 0.2, 0.0]), 2.0, 0.0)
    # v = -2 kappa1 (H_N - H_{N-1}) / (dxi x_r)
    assert boundary_speed(s, PhysicalParams(kappa1=1.5)) == pytest.approx(2 * 1.5 * 0.2 / (2.0 / 3.0))


def test_stable_dt_formula():
    s = _state(40)
    par = PhysicalParams.from_ratio(0.5)
    dt = stable_dt(s, par, cfl=0.5)
    assert dt == pytest.approx(0.5 * (1 / 40) ** 2 / (4 * 2.0 * s.heights.max()))
    assert stable_dt(s, par, cfl=0.5, dt_max=1e-9) == 1e-9
    with pytest.raises(ValueError):
        stable_dt(s, par, cfl=1.5)


def test_step_keeps_endpoints_and_moves_front():
    s = _state(40)
    new = step_dipole(s, PhysicalParams(), stable_dt(s, PhysicalParams()))
    assert new.heights[0] == 0.0 and new.heights[-1] == 0.0
    assert new.x_r > s.x_r
    assert new.time > s.time
    assert np.all(new.heights >= 0)


def test_oversized_step_is_unstable():
    h = np.zeros(41)
    h[20] = 1.0
    s = RescaledState(h, 1.0, 0.0)
    with pytest.raises(InstabilityError) as err:
        step_dipole(s, PhysicalParams(), 10 * stable_dt(s, PhysicalParams(), cfl=1.0))
    assert err.value.time > 0


@given(st.floats(0.1, 10.0), st.sampled_from([1.0, 0.6, 0.3]))
@settings(max_examples=25, deadline=None)
def test_step_scaling_symmetry(c, ratio):
    # h -> c h with t -> t / c maps solutions to solutions
    par = PhysicalParams.from_ratio(ratio)
    s = _state(32)
    s = step_dipole(s, par, 1e-4)
    a = step_dipole(s, par, 1e-4)
    sc = RescaledState(c * s.heights, s.x_r, s.time, None if s.prev_d2 is None else c * c * s.prev_d2)
    b = step_dipole(sc, par, 1e-4 / c)
    assert np.allclose(b.heights, c * a.heights, rtol=1e-12, atol=1e-15 * c)
    assert b.x_r == pytest.approx(a.x_r, rel=1e-12)


def test_exact_profile_is_nearly_stationary_in_shape():
    # start from the ratio-1 similarity profile: the shape stays put, x_r grows like t^(1/4)
    n = 200
    xi = np.linspace(0, 1, n + 1)
    t0 = 1.0
    # h = t^-1/2 f(x / t^1/4) with kappa1 = 1 and x_r = 1 at t0 = 1
    s = RescaledState(exact_dipole_profile(xi), 1.0, t0)
    par = PhysicalParams()
    while s.time < 2.0:
        dt = min(stable_dt(s, par), 2.0 - s.time)
        s = step_dipole(s, par, dt)
    assert s.x_r == pytest.approx(2.0**0.25, rel=2e-3)
    shape = s.heights / s.heights.max()
    ref = exact_dipole_profile(xi) / exact_dipole_profile(xi).max()
    assert np.max(np.abs(shape - ref)) < 5e-3


def test_sample_times():
    assert np.allclose(sample_times(0.1, 10.0, 3), [0.1, 1.0, 10.0])
    assert np.allclose(sample_times(0.0, 1.0, 3), [0.0, 0.5, 1.0])
    assert np.array_equal(sample_times(2.0, 2.0, 5), [2.0])


def test_config_validation():
    with pytest.raises(ValueError):
        DipoleConfig(advection="upwind")
    with pytest.raises(ValueError):
        DipoleConfig(cfl=0.0)
    with pytest.raises(ValueError):
        DipoleConfig(t_start=2.0, t_end=1.0)
    with pytest.raises(ValueError):
        DipoleConfig(t_end=1.0, snapshot_times=(5.0,))


@pytest.fixture(scope="module")
def short_run():
    cfg = DipoleConfig(n_cells=100, t_start=0.1, t_end=10.0, n_series=40, snapshot_times=(1.0, 10.0))
    return run_dipole(cfg)


def test_run_records(short_run):
    t = short_run.column("time")
    assert t[0] == 0.1 and t[-1] == 10.0
    assert np.all(np.diff(t) > 0)
    assert [p.time for p in short_run.snapshots] == [1.0, 10.0]
    assert np.all(np.diff(short_run.column("x_right")) > 0)
    assert np.all(short_run.column("x_left") == 0.0)


def test_dipole_moment_conserved_at_equal_kappa(short_run):
    q = short_run.column("dipole_moment")
    assert np.max(np.abs(q - q[0])) / q[0] < 1e-2


def test_mass_decays_through_outflow(short_run):
    m = short_run.column("mass")
    assert np.all(np.diff(m) < 0)
    assert np.all(short_run.column("left_flux") > 0)


def test_run_is_deterministic(short_run):
    again = run_dipole(DipoleConfig(n_cells=100, t_start=0.1, t_end=10.0, n_series=40, snapshot_times=(1.0, 10.0)))
    assert np.array_equal(again.column("x_right"), short_run.column("x_right"))
    assert np.array_equal(again.snapshots[-1].heights, short_run.snapshots[-1].heights)


def test_dipole_moment_drifts_when_kappa_differ():
    out = run_dipole(DipoleConfig(params=PhysicalParams.from_ratio(0.5), n_cells=60, t_end=5.0, n_series=10))
    q = out.column("dipole_moment")
    assert q[-1] < 0.8 * q[0]


def test_backward_advection_option():
    out = run_dipole(DipoleConfig(n_cells=60, t_end=2.0, n_series=5, advection="backward"))
    assert out.final.x_right > 1.0

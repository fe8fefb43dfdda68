import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from capmound.core import InitialCondition, PhysicalParams, mass
from capmound.dipole import InstabilityError
from capmound.drainage import (DrainageConfig, DrainageSpec, FloodDrainConfig, FrontState, InitialFront,
                               _front_cell_mass, _settle_left, initial_state, run_drainage,
                               run_flood_then_drain, step_front, update_left_boundary,
                               update_right_boundary)

X0 = np.sqrt(12.0)


def barenblatt(x, t):
    """Exact source solution of h_t = (h^2)_xx with unit central height at t = 1."""
    return t ** (-1 / 3) * np.maximum(1 - np.asarray(x) ** 2 * t ** (-2 / 3) / 12, 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        DrainageSpec("sideways")
    with pytest.raises(ValueError):
        DrainageSpec("constant", q0=0.0)
    with pytest.raises(ValueError):
        DrainageSpec("law")
    with pytest.raises(ValueError):
        DrainageSpec("constant", q0=-1.0)
    bad = DrainageSpec("law", law=lambda t: -1.0)
    with pytest.raises(ValueError):
        bad.flux(1.0)
    assert DrainageSpec("constant", q0=0.3).flux(7.0) == 0.3
    assert DrainageSpec("law", law=lambda t: 2 * t).flux(1.5) == 3.0
    assert DrainageSpec("free").flux(1.0) == 0.0
    assert DrainageSpec("constant", q0=1).drains and not DrainageSpec("pinned").drains


def _fs(u, il, ir, x_l, x_r, dx=0.1):
    return FrontState(0.0, dx, np.asarray(u, dtype=float), il, ir, x_l, x_r)


def test_left_boundary_formula():
    s = _fs([0, 0, 0.4, 0.5, 0.3, 0], 2, 4, 0.15, 0.45)
    # extrapolate h^2 with slope q from the first wet node
    assert update_left_boundary(s, 4.0) == pytest.approx(0.2 - 0.16 / 4.0)
    # limited to one cell left of the previous front
    assert update_left_boundary(s, 0.1) == pytest.approx(0.05)
    with pytest.raises(ValueError):
        update_left_boundary(s, 0.0)


def test_right_boundary_formula():
    s = _fs([0, 0.3, 0.2, 0.1, 0, 0], 1, 3, 0.05, 0.38)
    # line through (0.2, 0.2), (0.3, 0.1) vanishes at 0.4
    assert update_right_boundary(s) == pytest.approx(0.4)
    flat = _fs([0, 0.2, 0.2, 0.2, 0, 0], 1, 3, 0.05, 0.35)
    assert update_right_boundary(flat) == pytest.approx(0.45)


@given(st.floats(0.0, 0.2), st.floats(0.05, 5.0))
@settings(max_examples=40)
def test_front_cell_mass_is_sqrt_profile_integral(a, q):
    dx = 0.2
    x = np.linspace(0.0, a + dx / 2, 200001)
    ref = np.trapezoid(np.sqrt(q * x), x)
    assert _front_cell_mass(a, dx, q) == pytest.approx(ref, rel=1e-5)


@given(st.floats(0.001, 0.099), st.floats(0.1, 3.0))
@settings(max_examples=40)
def test_settle_left_inverts_cell_mass(a, q):
    dx = 0.1
    s = _fs(np.zeros(8), 3, 6, 0.3 - a, 0.65, dx)
    u = np.array([0, 0, 0, 0.0, 0.3, 0.3, 0.2, 0])
    il, x_l = _settle_left(s, u, 3, 6, _front_cell_mass(a, dx, q), q)
    assert il == 3
    assert x_l == pytest.approx(0.3 - a, rel=1e-9, abs=1e-12)
    assert u[3] == pytest.approx(np.sqrt(q * a), rel=1e-9)


def test_settle_left_merges_empty_cells():
    dx = 0.1
    s = _fs(np.zeros(8), 3, 6, 0.29, 0.65, dx)
    u = np.array([0, 0, 0, 0.1, 0.3, 0.3, 0.2, 0])
    il, x_l = _settle_left(s, u, 3, 6, -0.01, 1.0)
    assert il == 4 and u[3] == 0.0
    assert x_l < 0.4


def test_from_function_checks():
    with pytest.raises(ValueError):
        FrontState.from_function(lambda x: np.ones_like(x), 0.5, 0.4, 0.0, 0.1, 11)
    with pytest.raises(ValueError):
        FrontState.from_function(lambda x: np.ones_like(x), -1.0, 0.5, 0.0, 0.1, 11)
    with pytest.raises(ValueError):
        FrontState.from_function(lambda x: np.ones_like(x), 0.41, 0.49, 0.0, 0.1, 11)
    with pytest.raises(ValueError):
        FrontState.from_function(lambda x: np.ones_like(x), 0.15, 0.55, 0.0, 0.1, 11, pinned=True)


def test_profile_of_pinned_state_has_single_zero():
    cfg = DrainageConfig(drainage=DrainageSpec("pinned"), dx=0.1, domain=(0.0, 3.0))
    p = initial_state(cfg).to_profile()
    assert p.x[0] == 0.0 and p.x[1] > 0.0
    assert p.heights[0] == 0.0


@pytest.fixture(scope="module")
def barenblatt_run():
    cfg = DrainageConfig(drainage=DrainageSpec("free"), initial=InitialFront(lambda x: barenblatt(x, 1.0), -X0, X0),
                         dx=0.05, domain=(-8.0, 8.0), t_start=1.0, t_end=8.0, snapshot_times=(8.0,), n_series=20)
    return run_drainage(cfg)


def test_free_fronts_match_exact_solution(barenblatt_run):
    p = barenblatt_run.snapshots[-1]
    assert p.x_right == pytest.approx(2 * X0, rel=1e-3)
    assert p.x_left == pytest.approx(-2 * X0, rel=1e-3)
    err = np.max(np.abs(p.heights - barenblatt(p.x, 8.0))) / barenblatt(0.0, 8.0)
    assert err < 1e-3


def test_free_spreading_conserves_mass(barenblatt_run):
    m = barenblatt_run.column("mass")
    assert np.max(np.abs(m / m[0] - 1)) < 1e-3


def test_step_front_advances_time():
    cfg = DrainageConfig(drainage=DrainageSpec("constant", q0=0.1), offset=1.0, dx=0.05, domain=(0.0, 4.0))
    s = initial_state(cfg)
    new = step_front(s, cfg.params, cfg.drainage, 1e-4)
    assert new.time == pytest.approx(1e-4)
    assert new.x_l >= s.x_l - cfg.dx and new.x_r >= s.x_r


def test_constant_drainage_extinguishes():
    cfg = DrainageConfig(drainage=DrainageSpec("constant", q0=0.3), offset=1.0, dx=0.02, domain=(0.0, 8.0),
                         t_end=20.0, n_series=100)
    out = run_drainage(cfg)
    assert out.extinction_time is not None and out.extinction_time < 20.0
    m = out.column("mass")
    assert np.all(np.diff(m) <= 0)


def test_stronger_drainage_is_faster():
    def ext(q):
        cfg = DrainageConfig(drainage=DrainageSpec("constant", q0=q), offset=1.0, dx=0.02, domain=(0.0, 8.0),
                             t_end=20.0, n_series=20)
        return run_drainage(cfg).extinction_time
    assert ext(0.6) < ext(0.3)


def test_front_leaving_domain_is_reported():
    cfg = DrainageConfig(drainage=DrainageSpec("free"), offset=0.5, dx=0.05, domain=(0.0, 2.0), t_end=50.0)
    with pytest.raises(InstabilityError):
        run_drainage(cfg)


def test_retention_speeds_extinction():
    # trapped water leaves less storage behind the receding level (kappa2 > kappa1)
    def ext(ratio):
        cfg = DrainageConfig(params=PhysicalParams.from_ratio(ratio), drainage=DrainageSpec("constant", q0=0.3),
                             offset=1.0, dx=0.02, domain=(0.0, 8.0), t_end=20.0, n_series=20)
        return run_drainage(cfg).extinction_time
    assert ext(0.5) < ext(1.0)


def test_flood_then_drain():
    base = dict(dx=0.02, domain=(0.0, 8.0), t_switch=1.0, t_end=20.0, n_series=100)
    two = run_flood_then_drain(FloodDrainConfig(multiplier=2.0, **base))
    four = run_flood_then_drain(FloodDrainConfig(multiplier=4.0, **base))
    none = run_flood_then_drain(FloodDrainConfig(multiplier=0.0, t_end=3.0, **{k: v for k, v in base.items() if k != "t_end"}))
    assert two.natural_flux > 0 and two.q0 == pytest.approx(2 * two.natural_flux)
    assert two.extinction_time is not None and four.extinction_time is not None
    assert four.extinction_time < two.extinction_time
    assert none.extinction_time is None
    t, m = two.column("time"), two.column("mass")
    assert np.all(np.diff(m[t >= 1.0]) <= 0)


def test_flood_config_validation():
    with pytest.raises(ValueError):
        FloodDrainConfig(t_switch=0.0)
    with pytest.raises(ValueError):
        FloodDrainConfig(multiplier=-1.0)
    with pytest.raises(ValueError):
        FloodDrainConfig(t_switch=200.0)


def test_drainage_config_validation():
    with pytest.raises(ValueError):
        DrainageConfig(dx=0.0)
    with pytest.raises(ValueError):
        DrainageConfig(domain=(1.0, 0.0))
    with pytest.raises(ValueError):
        DrainageConfig(cfl=2.0)


def test_initial_mass_matches_profile():
    cfg = DrainageConfig(initial=InitialCondition(), offset=1.0, dx=0.01, domain=(0.0, 3.0))
    assert mass(initial_state(cfg).to_profile()) == pytest.approx(2 / 3, rel=1e-3)

import numpy as np
import pytest

from flocklab import hydro_torus as ht

TWO_PI = 2 * np.pi


def generic_state(n, gamma):
    return ht.make_torus_state(n, gamma,
                               ("two_mode", 1.0, 0.3, 1, 0.0, 0.1, 2, 1.0),
                               ("single_mode", 0.0, 0.2, 1, 0.7), mean_u=0.1)


# --------------------------------------------------------------------------
# fields and velocity recovery


def test_field_validation():
    with pytest.raises(ValueError):
        ht.PeriodicField1D(np.zeros(20))  # not a power of two
    with pytest.raises(ValueError):
        ht.PeriodicField1D(np.zeros(8))  # too small
    with pytest.raises(ValueError):
        ht.PeriodicField1D(np.full(32, np.nan))


def test_state_requires_positive_density():
    rho = ht.PeriodicField1D(np.zeros(32))
    e = ht.PeriodicField1D(np.zeros(32))
    with pytest.raises(ValueError):
        ht.TorusState(rho, e, 0.0, 1.0)
    with pytest.raises(ValueError):
        ht.TorusState(ht.PeriodicField1D(np.ones(32)), e, 0.0, 2.5)


def test_recover_velocity_constant_state():
    st = ht.make_torus_state(32, 1.0, ("constant", 2.0), ("constant", 0.0), mean_u=0.7)
    u = ht.recover_velocity(st)
    np.testing.assert_allclose(u.values, 0.7, atol=1e-14)


def test_recover_velocity_antiderivative():
    # rho const, e = cos(x) -> u = mean_u + sin(x)
    st = ht.make_torus_state(64, 1.0, ("constant", 1.0),
                             ("single_mode", 0.0, 1.0, 1, 0.0), mean_u=0.2)
    u = ht.recover_velocity(st)
    x = st.rho.grid
    np.testing.assert_allclose(u.values, 0.2 + np.sin(x), atol=1e-13)


def test_recover_velocity_single_mode_multiplier():
    # rho = 1 + 0.1 cos(x), e = 0, gamma = 1: u_x = |1|^1 * 0.1 cos -> u = mean + 0.1 sin
    st = ht.make_torus_state(64, 1.0, ("single_mode", 1.0, 0.1, 1, 0.0),
                             ("constant", 0.0), mean_u=0.0)
    u = ht.recover_velocity(st)
    np.testing.assert_allclose(u.values, 0.1 * np.sin(st.rho.grid), atol=1e-14)


def test_recovery_warns_on_nonzero_mean_integrand():
    rho = ht.PeriodicField1D(np.ones(32))
    e = ht.PeriodicField1D(np.full(32, 0.1))  # mean e != 0: inconsistent data
    st = ht.TorusState(rho, e, 0.0, 1.0)
    with pytest.warns(ht.SolvabilityWarning):
        ht.recover_velocity(st)


def test_e_reconstruction_roundtrip():
    st = generic_state(128, 1.5)
    u = ht.recover_velocity(st)
    e_back = ht.reconstruct_e(st, u)
    assert np.abs(e_back.values - st.e.values).max() < 1e-10


# --------------------------------------------------------------------------
# stepping


def test_constant_state_is_fixed_point():
    st = ht.make_torus_state(32, 1.0, ("constant", 1.0), ("constant", 0.0), mean_u=0.5)
    out = ht.step_torus(st, 1e-2)
    np.testing.assert_allclose(out.rho.values, 1.0, atol=1e-15)
    np.testing.assert_allclose(out.e.values, 0.0, atol=1e-15)


def test_cfl_violation_raised():
    st = generic_state(64, 1.0)
    with pytest.raises(ht.CFLViolation):
        ht.step_torus(st, 10.0)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
def test_conservation_laws(gamma):
    st = generic_state(256, gamma)
    traj = ht.run_torus(st, 5.0, n_snapshots=11)
    mass = TWO_PI * traj.rho.mean(axis=1)
    e_mass = TWO_PI * traj.e.mean(axis=1)
    assert np.abs(mass - mass[0]).max() < 1e-9
    assert np.abs(e_mass - e_mass[0]).max() < 1e-9


def test_q_constant_profile_preserved():
    # e0 = c * rho0 (zero-mean part): q = e/rho stays near its initial values
    n = 128
    rho = ht.make_field(n, "single_mode", 1.0, 0.3, 1, 0.0)
    c = 0.2
    e_vals = c * rho.values - np.mean(c * rho.values)
    st = ht.TorusState(rho, ht.PeriodicField1D(e_vals), 0.0, 1.0)
    traj = ht.run_torus(st, 2.0, n_snapshots=11)
    drift = ht.q_transport_check(traj)
    assert drift["max_extremum_drift"] < 5e-5
    assert drift["min_extremum_drift"] < 5e-5


def test_q_zero_preserved():
    n = 64
    st = ht.make_torus_state(n, 1.0, ("single_mode", 1.0, 0.4, 1, 0.0),
                             ("constant", 0.0), mean_u=0.3)
    traj = ht.run_torus(st, 2.0, n_snapshots=11)
    drift = ht.q_transport_check(traj)
    assert drift["max_extremum_drift"] < 1e-12
    assert drift["min_extremum_drift"] < 1e-12


def test_q_extrema_drift_refines():
    drifts = []
    for n in (128, 256):
        traj = ht.run_torus(generic_state(n, 1.0), 5.0, n_snapshots=21)
        d = ht.q_transport_check(traj)
        drifts.append(max(d["max_extremum_drift"], d["min_extremum_drift"]))
    assert drifts[0] / drifts[1] >= 4.0


def test_density_floor_formula_values():
    # constant density, e = 0: floor equals the constant
    st = ht.make_torus_state(64, 1.0, ("constant", 0.7), ("constant", 0.0))
    assert ht.density_floor(st) == pytest.approx(0.7)
    # q = 0 generally: floor = min(rho_min, mean rho) = rho_min
    st2 = ht.make_torus_state(64, 1.0, ("single_mode", 1.0, 0.5, 1, 0.0),
                              ("constant", 0.0))
    assert ht.density_floor(st2) == pytest.approx(0.5)


def test_density_floor_spec_example_run():
    # rho0 = 1 + 0.5 cos x, u0 = 0.1 sin x, gamma = 1  ->  e0 = -0.4 cos x
    st = ht.make_torus_state(256, 1.0, ("single_mode", 1.0, 0.5, 1, 0.0),
                             ("single_mode", 0.0, -0.4, 1, 0.0))
    traj = ht.run_torus(st, 5.0, n_snapshots=26)
    assert traj.min_rho_seen >= ht.density_floor(st) - 1e-3


def test_torus_csv(tmp_path):
    st = generic_state(32, 1.0)
    traj = ht.run_torus(st, 0.5, n_snapshots=3)
    path = tmp_path / "torus.csv"
    ht.write_torus_csv(traj, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,x,rho,u,e,q"
    assert len(lines) == 1 + 3 * 32

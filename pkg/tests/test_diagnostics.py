import numpy as np
import pytest
from scipy.integrate import solve_ivp

from flocklab import diagnostics as dg
from flocklab import kernels as kn
from flocklab import particles as pt


def make_state(x, v, m=None, cid=None):
    return pt.ParticleEnsemble.create(x, v, m, cid)


# --------------------------------------------------------------------------
# kinetic energy and diameters


def test_kinetic_energy_zero_velocities():
    st = make_state(np.random.default_rng(0).normal(size=(4, 2)), np.zeros((4, 2)))
    assert dg.kinetic_energy(st) == 0.0


def test_kinetic_energy_identity_two_body():
    st = make_state([0.0, 1.0], [1.0, -1.0])
    assert dg.kinetic_energy(st) == pytest.approx(1.0)
    # (1/4N) sum_{ij} |v_i-v_j|^2 = (1/8)(2*4) = 1
    assert dg.kinetic_energy_pairwise(st) == pytest.approx(1.0)


def test_kinetic_energy_identity_needs_mean_zero():
    # rigid translation: energy N c^2 / 2 but pairwise term vanishes
    c = 0.7
    st = make_state(np.arange(3.0), np.full(3, c))
    assert dg.kinetic_energy(st) == pytest.approx(3 * c ** 2 / 2)
    assert dg.kinetic_energy_pairwise(st) == 0.0


def test_diameters():
    st1 = make_state([[0.0, 0.0]], [[1.0, 0.0]])
    assert dg.diameters(st1) == (0.0, 0.0)
    st2 = make_state([0.0, 3.0], [1.0, 1.0])
    pos, vel = dg.diameters(st2)
    assert pos == pytest.approx(3.0)
    assert vel == 0.0


# --------------------------------------------------------------------------
# flocking checks


def run_cs(state, alpha, t_end, n_samples=101, **kw):
    return pt.integrate(pt.CSSystem(kn.singular(alpha)), state, t_end,
                        n_samples=n_samples, **kw)[0]


def test_unconditional_flocking_consensus_trivial():
    x = np.array([[0.0, 0.0], [1.0, 1.0]])
    v = np.zeros((2, 2))
    traj = run_cs(make_state(x, v), 0.5, 1.0, n_samples=11)
    rep = dg.check_unconditional_flocking(traj, 0.5)
    assert rep.aligned and rep.flocked
    assert rep.bound_holds_sq and rep.bound_holds_root


def test_unconditional_flocking_two_body():
    traj = run_cs(make_state([0.0, 1.0], [0.5, -0.5]), 1.0, 20.0, n_samples=201)
    rep = dg.check_unconditional_flocking(traj, 1.0)
    assert rep.aligned
    assert rep.bound_holds_sq or rep.bound_holds_root
    # empirical decay beats the bound rate psi(x_M)
    assert rep.fitted_decay_rate > rep.bound_rate


def test_unconditional_flocking_regime_guard():
    traj = run_cs(make_state([0.0, 1.0], [0.1, -0.1]), 1.0, 1.0, n_samples=11)
    with pytest.raises(ValueError):
        dg.check_unconditional_flocking(traj, 1.5)


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0])
@pytest.mark.parametrize("seed", range(50))
def test_unconditional_flocking_random_suite(alpha, seed):
    state = pt.random_ensemble(seed, n=4, dim=2, x_scale=2.0, v_scale=0.3)
    traj = run_cs(state, alpha, 8.0, n_samples=81)
    rep = dg.check_unconditional_flocking(traj, alpha)
    assert rep.bound_holds_sq or rep.bound_holds_root


def test_conditional_flocking_zero_velocity_hypothesis():
    # v0 = 0 satisfies the hypothesis for any positions
    x = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]])
    traj = run_cs(make_state(x, np.zeros((3, 2))), 1.5, 1.0, n_samples=11)
    rep = dg.check_conditional_flocking(traj, 1.5)
    assert rep.hypothesis_met is True


def test_conditional_flocking_constructed_equality():
    # alpha=2, N=2: hypothesis is (2 x^2)^{-1/2} >= sqrt(2 v^2);
    # with x = 1 equality sits at |v_rel| = 1/2 (backed off by round-off)
    gap = 1.0
    vrel = 0.5 * (1.0 - 1e-12)
    st = make_state([0.0, gap], [vrel / 2, -vrel / 2])
    x_sq = 2 * gap ** 2
    v_sq = 2 * vrel ** 2
    assert np.sqrt(x_sq) ** (1 - 2.0) == pytest.approx((2.0 - 1) * np.sqrt(v_sq))
    traj = run_cs(st, 2.0, 5.0, n_samples=51)
    rep = dg.check_conditional_flocking(traj, 2.0)
    assert rep.hypothesis_met is True
    assert rep.bound_holds_sq or rep.bound_holds_root


def test_conditional_flocking_hypothesis_unmet_still_reports():
    st = make_state([0.0, 1.0], [5.0, -5.0])
    traj = run_cs(st, 1.5, 2.0, n_samples=21)
    with pytest.warns(dg.HypothesisUnmetWarning):
        rep = dg.check_conditional_flocking(traj, 1.5)
    assert rep.hypothesis_met is False


# --------------------------------------------------------------------------
# bonding and control reports


def test_bonding_report_stationary_pair():
    p = pt.BondingParams(K1=1.0, K2=1.0, Ktilde=1.0, R=0.5)
    x = [[-0.5, 0.0], [0.5, 0.0]]
    st = make_state(x, np.zeros((2, 2)))
    traj, _ = pt.integrate(pt.BondingSystem(kn.singular(1.0), p), st, 2.0,
                           n_samples=21)
    rep = dg.check_bonding_asymptotics(traj, p)
    assert rep.kinetic_ratio == 0.0
    assert rep.min_distance_late == pytest.approx(1.0)
    assert rep.max_distance_end <= rep.target_diameter * (1 + 1e-12)


def test_control_report_on_pattern():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    x = np.zeros((4, 2))
    for i in range(1, 4):
        x[i] = x[i - 1] - z[i - 1]
    p = pt.ControlParams(K=1.0, beta=0.5, z=z)
    st = make_state(x, np.zeros((4, 2)))
    traj, _ = pt.integrate(pt.ControlSystem(kn.singular(1.0), p), st, 2.0,
                           n_samples=21)
    rep = dg.check_control_pattern(traj, p)
    assert rep.pattern_residual < 1e-12
    assert rep.velocity_diameter_end < 1e-12


def test_control_collision_guard():
    z = np.array([[1.0]])
    p = pt.ControlParams(K=0.0, beta=0.5, z=z)
    # hand-made degenerate trajectory: both agents at the same point
    times = np.linspace(0, 1, 5)
    xs = np.zeros((5, 2, 1))
    vs = np.zeros((5, 2, 1))
    traj = pt.Trajectory(times, xs, vs, np.array([0.5, 0.5]),
                         np.tile(np.arange(2), (5, 1)), pt.EventLog(), {})
    with pytest.raises(dg.AsymptoticCollisionSuspected):
        dg.check_control_pattern(traj, p)


# --------------------------------------------------------------------------
# decay-rate fitting


def test_fit_decay_rate_exact_exponential():
    t = np.linspace(0, 5, 200)
    vals = np.exp(-2.0 * t)
    assert dg.fit_decay_rate(t, vals, (0.0, 5.0)) == pytest.approx(2.0, abs=1e-10)


def test_fit_decay_rate_constant():
    t = np.linspace(0, 5, 50)
    assert dg.fit_decay_rate(t, np.full(50, 3.0), (0.0, 5.0)) == pytest.approx(0.0, abs=1e-14)


def test_fit_decay_rate_errors():
    t = np.linspace(0, 1, 10)
    with pytest.raises(dg.NonPositiveValue):
        dg.fit_decay_rate(t, np.linspace(-1, 1, 10), (0.0, 1.0))
    with pytest.raises(ValueError):
        dg.fit_decay_rate(t, np.ones(10), (0.0, 2.0))


def test_two_bird_rate_beats_regular_kernel_bound():
    # relative dynamics x' = v, v' = -v (1+|x|)^-alpha
    alpha = 0.8

    def rhs(t, y):
        return [y[1], -y[1] * (1 + abs(y[0])) ** -alpha]

    sol = solve_ivp(rhs, (0, 30.0), [1.0, -0.4], rtol=1e-10, atol=1e-12,
                    dense_output=True)
    t = np.linspace(0, 30.0, 400)
    v = np.abs(sol.sol(t)[1])
    x_max = np.abs(sol.sol(t)[0]).max()
    rate = dg.fit_decay_rate(t, v, (5.0, 30.0))
    assert rate >= (1 + x_max) ** -alpha


# --------------------------------------------------------------------------
# invariants along CS runs


def test_kinetic_energy_monotone_and_identity_along_run():
    state = pt.random_ensemble(9, n=5, dim=2)
    traj = run_cs(state, 0.5, 5.0, n_samples=101)
    e = np.array([dg.kinetic_energy(traj.ensemble_at(k)) for k in range(traj.n_samples)])
    assert np.all(np.diff(e) <= 1e-9)
    for k in range(0, traj.n_samples, 10):
        st = traj.ensemble_at(k)
        assert dg.kinetic_energy(st) == pytest.approx(dg.kinetic_energy_pairwise(st),
                                                      abs=1e-12)


def test_flock_report_invariant():
    with pytest.raises(ValueError):
        dg.FlockReport(aligned=False, flocked=True, position_diameter_sup=1.0,
                       velocity_norm_series=np.zeros((1, 2)),
                       fitted_decay_rate=0.0, bound_rate=1.0)

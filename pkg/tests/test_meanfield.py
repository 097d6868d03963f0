import numpy as np
import pytest

from flocklab import kernels as kn
from flocklab import meanfield as mf
from flocklab import particles as pt


def unit_atom(x, v, dim=1):
    return mf.AtomicMeasure.from_xv(np.atleast_2d(x), np.atleast_2d(v), [1.0])


# --------------------------------------------------------------------------
# empirical measure


def test_empirical_measure_single_particle():
    st = pt.ParticleEnsemble.create([[0.0]], [[1.0]])
    mu = mf.empirical_measure(st)
    assert mu.n_atoms == 1 and mu.weights[0] == 1.0


def test_empirical_measure_merged_pair_is_one_atom():
    st = pt.ParticleEnsemble.create([[1.0], [1.0]], [[0.5], [0.5]], class_id=[0, 0])
    mu = mf.empirical_measure(st)
    assert mu.n_atoms == 1
    assert mu.weights[0] == pytest.approx(1.0)


def test_empirical_measure_three_atoms():
    st = pt.ParticleEnsemble.create([[0.0], [1.0], [2.0]], [[0.0], [1.0], [2.0]])
    mu = mf.empirical_measure(st)
    assert mu.n_atoms == 3
    np.testing.assert_allclose(mu.weights, 1 / 3)


# --------------------------------------------------------------------------
# d1 oracles


def test_d1_identity():
    mu = mf.AtomicMeasure.from_xv([[0.0], [1.0]], [[0.5], [-0.5]], [0.5, 0.5])
    assert mf.d1_distance(mu, mu) == 0.0


@pytest.mark.parametrize("gap", [0.3, 1.0, 1.7, 2.5, 10.0])
def test_d1_two_unit_atoms_min_gap_two(gap):
    # hand-derived: sup phi(a) - phi(b) = min(|a-b|, 2)
    a = unit_atom([0.0], [0.0])
    b = unit_atom([gap], [0.0])
    assert mf.d1_distance(a, b) == pytest.approx(min(gap, 2.0), abs=1e-12)


def test_d1_two_atom_exactness():
    # the two-variable LP solves at a vertex; the value is exact
    a = unit_atom([0.0], [0.0])
    b = unit_atom([1.25], [0.0])
    assert mf.d1_distance(a, b) == 1.25


def test_d1_half_weight_case():
    # d1(0.5 delta_a + 0.5 delta_b, delta_a) = 0.5 min(|a-b|, 2)
    for gap in (0.8, 3.0):
        mix = mf.AtomicMeasure.from_xv([[0.0], [gap]], [[0.0], [0.0]], [0.5, 0.5])
        a = unit_atom([0.0], [0.0])
        assert mf.d1_distance(mix, a) == pytest.approx(0.5 * min(gap, 2.0), abs=1e-12)


def test_d1_joint_phase_space_metric():
    # distance uses (x, v) jointly: atoms differing only in velocity
    a = unit_atom([0.0], [0.0])
    b = unit_atom([0.0], [1.0])
    assert mf.d1_distance(a, b) == pytest.approx(1.0, abs=1e-12)
    c = unit_atom([3.0 / 5.0], [4.0 / 5.0])
    assert mf.d1_distance(a, c) == pytest.approx(1.0, abs=1e-12)


def random_measure(rng, max_atoms=10, dim=2):
    n = rng.integers(1, max_atoms + 1)
    pts = rng.normal(scale=1.5, size=(n, 2 * dim))
    w = rng.uniform(0.1, 1.0, size=n)
    return mf.AtomicMeasure(pts, w, dim)


def test_d1_metric_axioms_random_triples():
    rng = np.random.default_rng(42)
    for _ in range(20):
        mu, nu, rho = (random_measure(rng) for _ in range(3))
        d_mn = mf.d1_distance(mu, nu)
        d_nm = mf.d1_distance(nu, mu)
        assert d_mn == d_nm  # exact symmetry by canonical objective
        d_mr = mf.d1_distance(mu, rho)
        d_rn = mf.d1_distance(rho, nu)
        assert d_mn <= d_mr + d_rn + 1e-9
        assert d_mn >= 0


def test_d1_bounded_by_signed_mass():
    rng = np.random.default_rng(7)
    for _ in range(10):
        mu, nu = random_measure(rng), random_measure(rng)
        d = mf.d1_distance(mu, nu)
        assert d <= mu.total_mass() + nu.total_mass() + 1e-12


# --------------------------------------------------------------------------
# weak-atomic consistency and convergence table


def test_weak_atomic_consistency_is_exact():
    kernel = kn.singular(0.25)
    st = pt.random_ensemble(3, n=5, dim=1, v_scale=0.2)
    mu0 = mf.empirical_measure(st)
    via_measure = mf.evolve_atomic(mu0, 1.0, kernel)
    traj, _ = pt.integrate(pt.CSSystem(kernel), st, 1.0, n_samples=2)
    via_particles = mf.empirical_measure(traj.ensemble_at(1))
    assert mf.d1_distance(via_measure, via_particles) == 0.0


def test_consensus_sampler_transports_rigidly():
    kernel = kn.singular(0.25)
    sampler = mf.SegmentSampler(0.0, 1.0, lambda x: np.full_like(x, 0.3))
    f8, f16 = sampler.atoms(8), sampler.atoms(16)
    gap0 = mf.d1_distance(f8, f16)
    e8 = mf.evolve_atomic(f8, 2.0, kernel)
    e16 = mf.evolve_atomic(f16, 2.0, kernel)
    gap_t = mf.d1_distance(e8, e16)
    assert gap_t == pytest.approx(gap0, abs=1e-9)


def test_convergence_table_structure_and_trend():
    kernel = kn.singular(0.25)
    sampler = mf.SegmentSampler(0.0, 1.0, lambda x: 0.25 * (x - 0.5))
    table = mf.meanfield_convergence(sampler, [4, 8, 16], 1.0, kernel)
    assert not table["regime_warning"]
    rows = table["rows"]
    assert [r["N"] for r in rows] == [4, 8, 16]
    gaps = [r["d1_initial_gap"] for r in rows]
    assert gaps[0] > gaps[-1]  # finer sampling sits closer to the proxy


def test_convergence_regime_warning():
    kernel = kn.singular(0.75)
    sampler = mf.SegmentSampler(0.0, 1.0, lambda x: np.zeros_like(x))
    with pytest.warns(UserWarning):
        table = mf.meanfield_convergence(sampler, [4], 0.5, kernel)
    assert table["regime_warning"]


def test_convergence_atomic_input_identity():
    kernel = kn.singular(0.25)
    mu = mf.SegmentSampler(0.0, 1.0, lambda x: 0.1 * x).atoms(6)
    table = mf.meanfield_convergence(mu, [6], 1.0, kernel)
    assert table["rows"][0]["d1_vs_double"] == 0.0


def test_convergence_csv(tmp_path):
    kernel = kn.singular(0.25)
    sampler = mf.SegmentSampler(0.0, 1.0, lambda x: np.zeros_like(x))
    table = mf.meanfield_convergence(sampler, [4], 0.5, kernel)
    path = tmp_path / "table.csv"
    mf.write_convergence_csv(table, path)
    assert path.read_text().splitlines()[0] == "N,t,d1_vs_double,d1_initial_gap"


# --------------------------------------------------------------------------
# weak-form residual


def setup_measure_run(alpha=0.25, n=4, t_end=1.0, n_samples=201, rtol=1e-10):
    kernel = kn.singular(alpha)
    st = pt.random_ensemble(12, n=n, dim=1, v_scale=0.3)
    mu0 = mf.empirical_measure(st)
    opts = pt.IntegrationOptions(rtol=rtol, atol=rtol * 1e-2)
    times, measures, _ = mf.measure_trajectory(mu0, t_end, kernel,
                                               n_samples=n_samples, opts=opts)
    return kernel, times, measures


def trajectory_bounds(measures):
    pts = np.vstack([m.points for m in measures])
    center = 0.5 * (pts.min(0) + pts.max(0))
    radius = np.sqrt(((pts - center) ** 2).sum(-1)).max()
    return center, radius


def test_vlasov_residual_constant_is_exact():
    kernel, times, measures = setup_measure_run(n_samples=21, rtol=1e-8)
    center, radius = trajectory_bounds(measures)
    battery = mf.default_test_battery(1, center, radius * 1.5 + 1.0)
    const = [tf for tf in battery if tf.name == "const"]
    assert mf.vlasov_residual(times, measures, const, kernel) < 1e-14


def test_vlasov_residual_momentum_roundoff():
    kernel, times, measures = setup_measure_run(n_samples=21, rtol=1e-10)
    center, radius = trajectory_bounds(measures)
    battery = mf.default_test_battery(1, center, radius * 1.5 + 1.0)
    mom = [tf for tf in battery if tf.name == "v_1"]
    assert mf.vlasov_residual(times, measures, mom, kernel) < 1e-10


def test_vlasov_residual_generic_battery_refines():
    kernel, times, measures = setup_measure_run(n_samples=401, rtol=1e-11)
    center, radius = trajectory_bounds(measures)
    # partially active cutoff so the gradient terms matter
    battery = mf.default_test_battery(1, center, max(radius, 0.5))
    res = mf.vlasov_residual(times, measures, battery, kernel)
    assert res < 1e-6

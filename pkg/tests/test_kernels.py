import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from flocklab import kernels as kn


def test_singular_weight_values():
    assert kn.psi(kn.singular(0.5), 1.0) == 1.0
    assert kn.psi(kn.singular(2.0), 0.25) == pytest.approx(16.0, rel=0, abs=0)
    assert kn.psi(kn.regular(1.0), 1.0) == 0.5
    assert kn.psi(kn.control_phi(1.0), 0.0) == 1.0


def test_singular_domain_errors():
    with pytest.raises(ValueError):
        kn.psi(kn.singular(1.0), 0.0)
    with pytest.raises(ValueError):
        kn.psi(kn.singular(1.0), -1.0)
    with pytest.raises(ValueError):
        kn.psi(kn.regular(1.0), -0.5)
    kn.psi(kn.regular(1.0), 0.0)  # boundary allowed for bounded families


def test_exponent_must_be_positive():
    with pytest.raises(ValueError):
        kn.singular(0.0)
    with pytest.raises(ValueError):
        kn.regular(-1.0)


def test_primitive_values():
    # power branch at alpha = 1/2: Psi(s) = 2 sqrt(s)
    assert kn.psi_primitive(0.5, 1.0) == pytest.approx(2.0)
    # logarithmic branch selected by exact comparison
    assert kn.psi_primitive(1.0, 1.0) == 0.0
    # alpha = 2: antiderivative of s**-2 is -1/s
    assert kn.psi_primitive(2.0, 1.0) == pytest.approx(-1.0)


def test_primitive_alpha2_against_quadrature():
    # independent check: Psi(b) - Psi(a) must equal the integral of psi
    k = kn.singular(2.0)
    a, b = 0.5, 1.0
    val, _ = quad(lambda s: kn.psi(k, s), a, b)
    assert kn.psi_primitive(2.0, b) - kn.psi_primitive(2.0, a) == pytest.approx(val, rel=1e-10)


def test_primitive_domain_error():
    with pytest.raises(ValueError):
        kn.psi_primitive(0.5, 0.0)
    with pytest.raises(ValueError):
        kn.psi_primitive(0.5, -2.0)


def test_frac_symbol_values():
    assert kn.frac_laplacian_symbol(1.0, 0) == 0.0
    assert kn.frac_laplacian_symbol(1.0, 3) == 3.0
    assert kn.frac_laplacian_symbol(0.5, 4) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        kn.frac_laplacian_symbol(2.0, 1)
    with pytest.raises(ValueError):
        kn.frac_laplacian_symbol(0.0, 1)


def test_frac_symbol_vectorized():
    ks = np.array([-2, -1, 0, 1, 2])
    np.testing.assert_allclose(kn.frac_laplacian_symbol(1.0, ks), [2, 1, 0, 1, 2])


_kernel_builders = [kn.singular, kn.regular, kn.control_phi]


@settings(max_examples=60, deadline=None)
@given(
    st.integers(min_value=0, max_value=2),
    st.floats(min_value=0.05, max_value=4.0),
    st.floats(min_value=1e-6, max_value=50.0),
    st.floats(min_value=1.0 + 1e-9, max_value=20.0),
)
def test_weights_nonincreasing_and_positive(which, exponent, s1, factor):
    kernel = _kernel_builders[which](exponent)
    s2 = s1 * factor
    v1, v2 = kn.psi(kernel, s1), kn.psi(kernel, s2)
    assert v1 > 0 and v2 > 0
    assert v1 >= v2


@settings(max_examples=40, deadline=None)
@given(
    st.floats(min_value=0.05, max_value=3.0).filter(lambda a: abs(a - 1.0) > 1e-3),
    st.floats(min_value=0.01, max_value=5.0),
    st.floats(min_value=1.1, max_value=10.0),
)
def test_primitive_consistent_with_quadrature(alpha, a, factor):
    b = a * factor
    k = kn.singular(alpha)
    val, _ = quad(lambda s: kn.psi(k, s), a, b, epsrel=1e-12, limit=200)
    diff = kn.psi_primitive(alpha, b) - kn.psi_primitive(alpha, a)
    assert diff == pytest.approx(val, rel=1e-8)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_singular_blowup_at_zero(alpha):
    k = kn.singular(alpha)
    vals = [kn.psi(k, s) for s in (1e-2, 1e-4, 1e-8)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] > 1e3


@pytest.mark.parametrize("alpha", [1.0, 1.5])
def test_nonintegrable_near_zero_for_strong_singularity(alpha):
    # quadrature over [eps, 1] must grow without bound as eps shrinks
    k = kn.singular(alpha)
    totals = []
    for eps in (1e-2, 1e-4, 1e-6):
        val, _ = quad(lambda s: kn.psi(k, s), eps, 1.0, limit=200)
        totals.append(val)
    assert totals[0] < totals[1] < totals[2]
    assert totals[2] / totals[0] > 2.0


def test_weakly_singular_integrable_near_zero():
    k = kn.singular(0.5)
    vals = []
    for eps in (1e-4, 1e-8, 1e-12):
        v, _ = quad(lambda s: kn.psi(k, s), eps, 1.0, limit=200)
        vals.append(v)
    # converges to Psi(1) - Psi(0) = 2
    assert vals[-1] == pytest.approx(2.0, rel=1e-6)


def test_sticking_time_quadrature_matches_closed_form():
    # on the critical trajectory dx/dt = -Psi(x) the travel time from x0 is
    # (1-alpha)/alpha * x0**alpha
    for alpha, x0 in [(0.5, 1.0), (0.25, 2.0), (0.75, 0.5)]:
        t = kn.sticking_time_quadrature(alpha, x0, 0.0)
        assert t == pytest.approx((1 - alpha) / alpha * x0 ** alpha, rel=1e-8)


def test_psi_on_matrix_masks_inactive_entries():
    k = kn.singular(1.0)
    r = np.array([[0.0, 2.0], [2.0, 0.0]])
    active = ~np.eye(2, dtype=bool)
    w = kn.psi_on_matrix(k, r, active)
    assert w[0, 0] == 0.0 and w[1, 1] == 0.0
    assert w[0, 1] == 0.5

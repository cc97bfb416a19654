import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from openbath import _backend
from openbath import rates as R
from openbath.bath import power_spectrum
from openbath.errors import PoleCollision
from openbath.expfit import ExponentialBath, effective_power_spectrum
from openbath.io import read_csv

ONE = ExponentialBath([0.7 + 0.2j], [0.4 + 1.1j])

# oracle values for the T = 0.05 underdamped bath at t = 3 (spectral and time-domain routes agree to 1e-15)
GOLDEN_PAIRS = [(0.64, 1.38), (1.2, 1.2), (-0.5, 0.7)]
GOLDEN_GAMMA = np.array([0.6725639309548928 - 1.3547712278011943j, 1.7000032750028478 + 0j,
                         -0.15268948430540313 - 0.6544670846969728j])
GOLDEN_XI = np.array([-0.03571050266614831 + 0.07193303017859934j, 0.03156737397783379 + 0j,
                      0.09486986398224868 + 0.40663706206428984j])
GOLDEN_HALFLINE = 0.43388682515979365 + 0.06778711295447701j  # int_0^3 e^{1.2 i s} C(s) ds


def square_integral(eb, w, wp, t, sgn):
    """int_0^t int_0^t [sgn(s1 - s2)] e^{i(w s1 - w' s2)} C(s1 - s2) by nested QUADPACK, one triangle at a time."""
    def C(u):
        return complex(np.exp(-eb.nu * abs(u)) @ eb.c) if u >= 0 else np.conj(complex(np.exp(-eb.nu * abs(u)) @ eb.c))

    def tri(lower):
        def f(s2, s1, part):
            v = np.exp(1j * (w * s1 - wp * s2)) * C(s1 - s2)
            return v.real if part == 0 else v.imag

        lo, hi = ((lambda s1: 0.0), (lambda s1: s1)) if lower else ((lambda s1: s1), (lambda s1: t))
        re = integrate.dblquad(f, 0, t, lo, hi, args=(0,), epsabs=1e-13, epsrel=1e-12)[0]
        im = integrate.dblquad(f, 0, t, lo, hi, args=(1,), epsabs=1e-13, epsrel=1e-12)[0]
        return re + 1j * im

    a, b = tri(True), tri(False)
    return (a - b) / 2j if sgn else a + b


@pytest.mark.skipif("compiled" not in _backend.BACKENDS, reason="compiled kernels not built")
def test_backends_agree():
    rng = np.random.default_rng(3)
    c = rng.normal(size=9) + 1j * rng.normal(size=9)
    nu = rng.uniform(0.01, 3, 9) + 1j * rng.uniform(-3, 3, 9)
    w, wp = rng.uniform(-3, 3, 7), rng.uniform(-3, 3, 7)
    t = np.concatenate([[0.0, 1e-6, 0.05], np.linspace(0.1, 300, 40)])
    py, cc = _backend.get("python"), _backend.get("compiled")
    for a, b in zip(py.gamma_xi(c, nu, w, wp, t), cc.gamma_xi(c, nu, w, wp, t)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13 * np.abs(a).max())
    np.testing.assert_allclose(py.redfield_gamma(c, nu, w, t), cc.redfield_gamma(c, nu, w, t), rtol=1e-12, atol=1e-14)
    for a, b in zip(py.tcl_sums(c, nu, t), cc.tcl_sums(c, nu, t)):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12 * np.abs(a).max())


@pytest.mark.parametrize("w, wp, t", [(0.3, 1.1, 2.0), (1.1, 1.1, 1.5), (-0.7, 0.4, 0.8)])
def test_cumulant_single_exponential_vs_nested_quadrature(backend, w, wp, t):
    g = R.gamma_cumulant(ONE, w, wp, t, backend=backend)
    x = R.xi_cumulant(ONE, w, wp, t, backend=backend)
    assert abs(g - square_integral(ONE, w, wp, t, sgn=False)) < 1e-10
    assert abs(x - square_integral(ONE, w, wp, t, sgn=True)) < 1e-10


def test_redfield_single_exponential_vs_quadrature(backend):
    w, t = 0.9, 2.5
    re = integrate.quad(lambda s: (np.exp(1j * w * s) * complex(np.exp(-ONE.nu * s) @ ONE.c)).real, 0, t)[0]
    im = integrate.quad(lambda s: (np.exp(1j * w * s) * complex(np.exp(-ONE.nu * s) @ ONE.c)).imag, 0, t)[0]
    assert abs(R.gamma_redfield(ONE, w, t, backend=backend) - (re + 1j * im)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(w=st.floats(-3, 3), wp=st.floats(-3, 3), t=st.floats(0, 100))
def test_cumulant_hermiticity(ud_esprit, w, wp, t):
    g1, x1 = R._pairs_eval(ud_esprit, [w, wp], [wp, w], [t])
    assert abs(g1[0, 0] - np.conj(g1[1, 0])) <= 1e-12 * max(1.0, abs(g1[0, 0]))
    assert abs(x1[0, 0] - np.conj(x1[1, 0])) <= 1e-12 * max(1.0, abs(x1[0, 0]))


@settings(max_examples=30, deadline=None)
@given(w=st.floats(-3, 3), t=st.floats(0.01, 50))
def test_diagonal_gamma_is_derivative_of_redfield(ud_esprit, w, t):
    # d/dt Gamma(w, w, t) = 2 Re int_0^t e^{i w s} C(s) ds
    h = 1e-4 * max(t, 1.0)
    g = R.gamma_cumulant(ud_esprit, w, w, np.array([t - h, t + h]))
    lhs = (g[1] - g[0]).real / (2 * h)
    rhs = 2 * R.gamma_redfield(ud_esprit, w, t).real
    assert abs(lhs - rhs) < 1e-6 * max(1.0, abs(rhs))


def test_cumulant_slope_approaches_gkls_rate(ud_esprit):
    w = 1.2
    g = R.gamma_cumulant(ud_esprit, w, w, np.array([400.0, 500.0]))
    gamma_inf, _ = R.gkls_rates(ud_esprit, w)
    assert abs((g[1] - g[0]).real / 100.0 - gamma_inf) < 1e-8


def test_gkls_rate_is_effective_spectrum(ud_bath, ud_esprit):
    w = np.array([-2.0, -0.5, 0.7, 1.2, 2.4])
    gam, lamb = R.gkls_rates(ud_esprit, w)
    np.testing.assert_allclose(gam, effective_power_spectrum(ud_esprit, w), rtol=1e-13)
    np.testing.assert_allclose(gam, power_spectrum(ud_bath, w), atol=1e-5)
    G = R.gamma_redfield(ud_esprit, w, np.inf)
    np.testing.assert_allclose(lamb, G.imag, rtol=1e-13)


def test_redfield_coefficients_diagonal():
    t = np.linspace(0.1, 5, 7)
    S, gam = R.redfield_coeffs(ONE, 0.8, 0.8, t)
    G = R.gamma_redfield(ONE, 0.8, t)
    np.testing.assert_allclose(S, G.imag, atol=1e-15)
    np.testing.assert_allclose(gam, 2 * G.real, atol=1e-15)


def test_redfield_interaction_phase():
    S_i, g_i = R.redfield_coeffs(ONE, 0.3, 1.0, 2.0)
    S_s, g_s = R.redfield_coeffs(ONE, 0.3, 1.0, 2.0, interaction_picture=False)
    ph = np.exp(1j * (0.3 - 1.0) * 2.0)
    assert abs(S_i - ph * S_s) < 1e-15 and abs(g_i - ph * g_s) < 1e-15


def test_zero_time_and_validation():
    assert R.gamma_cumulant(ONE, 0.1, 0.2, 0.0) == 0
    with pytest.raises(ValueError):
        R.gamma_cumulant(ONE, 0.1, 0.2, -1.0)
    with pytest.raises(PoleCollision):
        R.gamma_redfield(ExponentialBath([1.0], [1e-15 + 1.0j]), 1.0, 1.0)


def test_zero_term_bath_gives_zero_rates():
    eb = ExponentialBath([], [])
    assert R.gamma_cumulant(eb, 0.3, 0.5, 2.0) == 0
    assert np.all(R.gamma_redfield(eb, [0.1, 0.2], [1.0, 2.0]) == 0)
    assert R.gkls_rates(eb, 1.0) == (0.0, 0.0)


def test_table_is_hermitian_and_csv(tmp_path, ud_esprit):
    tab = R.cumulant_table(ud_esprit, [-1.0, 0.5, 2.0], [0.0, 1.0, 4.0])
    np.testing.assert_array_equal(tab.gamma, np.conj(tab.gamma.transpose(0, 2, 1)))
    np.testing.assert_array_equal(tab.xi, np.conj(tab.xi.transpose(0, 2, 1)))
    R.write_rate_table_csv(tab, tmp_path / "rates.csv")
    _, header, data = read_csv(tmp_path / "rates.csv")
    assert header[0].startswith("t ") and data.shape == (27, 7)


def test_oracle_golden_values(ud_bath):
    w, wp = np.array(GOLDEN_PAIRS).T
    g, x = R.oracle_rates(ud_bath, w, wp, [3.0], eps=1e-12)
    np.testing.assert_allclose(g[:, 0], GOLDEN_GAMMA, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(x[:, 0], GOLDEN_XI, rtol=1e-10, atol=1e-12)


def test_spectral_oracle_matches_time_domain_oracle(ud_bath):
    g, x = R.oracle_rates(ud_bath, [0.64], [1.38], [3.0], eps=1e-11)
    assert abs(g[0, 0] - R.oracle_gamma_2d(ud_bath, 0.64, 1.38, 3.0, eps=1e-11)) < 1e-9
    assert abs(x[0, 0] - R.oracle_xi_2d(ud_bath, 0.64, 1.38, 3.0, eps=1e-11)) < 1e-9


def test_halfline_oracle_golden(ud_bath):
    assert abs(R.oracle_halfline_gk(ud_bath, 1.2, 3.0, eps=1e-12) - GOLDEN_HALFLINE) < 1e-10


def test_closed_forms_match_golden(ud_fit):
    w, wp = np.array(GOLDEN_PAIRS).T
    g, x = R._pairs_eval(ud_fit, w, wp, [3.0])
    np.testing.assert_allclose(g[:, 0], GOLDEN_GAMMA, rtol=1e-5)
    np.testing.assert_allclose(x[:, 0], GOLDEN_XI, rtol=1e-4)
    assert abs(R.gamma_redfield(ud_fit, 1.2, 3.0) - GOLDEN_HALFLINE) < 1e-6


def test_scalar_wrappers(ud_bath):
    g = R.oracle_gamma_gk(ud_bath, 0.64, 1.38, 3.0, eps=1e-12)
    x = R.oracle_xi_pv(ud_bath, 0.64, 1.38, 3.0, eps=1e-12)
    assert abs(g - GOLDEN_GAMMA[0]) < 1e-10 and abs(x - GOLDEN_XI[0]) < 1e-10

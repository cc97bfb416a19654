import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from openbath.bath import (
    BathSpec,
    OhmicFamily,
    StructuredFMO,
    Tabulated,
    UnderdampedBrownian,
    correlation,
    correlation_grid,
    eval_spectral_density,
    load_fmo_modes,
    power_spectrum,
)
from openbath.errors import NegativeFrequency, OutOfTabulatedRange, UndefinedAtZero


def quadpack_correlation(bath, tau):
    """C(tau) from QUADPACK's Fourier-integral routine on [0, inf)."""
    def re_w(w):
        return float(bath.model(w)) / math.tanh(0.5 * bath.beta * w) if w > 0 else 0.0

    re, _ = integrate.quad(re_w, 0, np.inf, weight="cos", wvar=tau, limlst=200)
    im, _ = integrate.quad(lambda w: float(bath.model(w)), 0, np.inf, weight="sin", wvar=tau, limlst=200)
    return (re - 1j * im) / math.pi


def test_ohmic_formula():
    m = OhmicFamily(0.3, 1.5, 2.0)
    w = 0.7
    assert m(w) == pytest.approx(0.3 * w**1.5 * 2.0**-0.5 * math.exp(-w / 2.0), rel=1e-15)


def test_underdamped_formula():
    m = UnderdampedBrownian(1.0, 2.0, 1.2)
    w = 0.9
    assert m(w) == pytest.approx(2.0 * w / ((1.44 - 0.81) ** 2 + 4.0 * 0.81), rel=1e-15)


def test_eval_rejects_negative_frequency():
    with pytest.raises(NegativeFrequency):
        eval_spectral_density(OhmicFamily(1, 1, 1), -0.1)


def test_tabulated_range_and_interpolation():
    m = Tabulated((0.0, 1.0, 2.0), (0.0, 1.0, 0.5))
    assert eval_spectral_density(m, 1.0) == pytest.approx(1.0)
    with pytest.raises(OutOfTabulatedRange):
        eval_spectral_density(m, 2.5)
    assert m(3.0) == 0.0


@pytest.mark.parametrize("bad", [((0.0, 1.0), (1.0, -1.0)), ((1.0, 0.5), (0.0, 1.0)), ((0.0,), (0.0,))])
def test_tabulated_validation(bad):
    with pytest.raises(ValueError):
        Tabulated(*bad)


def test_fmo_table_shape():
    wk, sk = load_fmo_modes()
    assert wk.size == sk.size == 62
    assert np.all(wk > 0) and np.all(sk > 0)


def test_fmo_rescale_is_linear():
    a = StructuredFMO.bundled(rescale_g=1.0)
    b = StructuredFMO.bundled(rescale_g=1 / 15)
    w = np.linspace(1.0, 1500.0, 50)
    np.testing.assert_allclose(b(w), a(w) / 15, rtol=1e-14)


def test_ohmic_zero_temperature_closed_form():
    # T = 0: C(tau) = alpha w_c^(1-s) Gamma(s+1) / (pi (1/w_c + i tau)^(s+1))
    alpha, s, wc = 0.2, 1.5, 1.3
    bath = BathSpec(OhmicFamily(alpha, s, wc), math.inf)
    taus = np.array([0.0, 0.3, 2.0, 7.5])
    exact = alpha * wc ** (1 - s) * math.gamma(s + 1) / (math.pi * (1 / wc + 1j * taus) ** (s + 1))
    np.testing.assert_allclose(correlation_grid(bath, taus), exact, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("tau", [0.5, 3.0, 12.0])
def test_underdamped_correlation_matches_quadpack(ud_bath, tau):
    assert abs(correlation(ud_bath, tau) - quadpack_correlation(ud_bath, tau)) < 1e-8


def test_correlation_matches_matsubara_series(ud_bath, ud_matsubara):
    taus = np.linspace(0.05, 20.0, 40)
    C = correlation_grid(ud_bath, taus)
    Cm = np.exp(-np.multiply.outer(taus, ud_matsubara.nu)) @ ud_matsubara.c
    assert np.max(np.abs(C - Cm)) < 1e-10 * np.max(np.abs(C))


def test_correlation_hermitian_in_time(ohmic_bath):
    assert correlation(ohmic_bath, -1.7) == np.conj(correlation(ohmic_bath, 1.7))


def test_power_spectrum_zero_frequency():
    ud = BathSpec(UnderdampedBrownian(1.0, 2.0, 1.2), 20.0)
    assert power_spectrum(ud, 0.0) == pytest.approx(2 * ud.model.slope_at_zero() / 20.0)
    sub = BathSpec(OhmicFamily(0.1, 0.5, 1.0), 1.0)
    with pytest.raises(UndefinedAtZero):
        power_spectrum(sub, 0.0)


def test_power_spectrum_zero_temperature_is_one_sided():
    bath = BathSpec(OhmicFamily(0.1, 1.0, 1.0), math.inf)
    w = np.array([-2.0, -0.5, 0.5, 2.0])
    S = power_spectrum(bath, w)
    np.testing.assert_array_equal(S[:2], 0.0)
    np.testing.assert_allclose(S[2:], 2 * bath.model(w[2:]))


@settings(max_examples=60, deadline=None)
@given(w=st.floats(0.01, 5.0), beta=st.floats(0.1, 10.0), s=st.floats(0.5, 3.0))
def test_detailed_balance_property(w, beta, s):
    bath = BathSpec(OhmicFamily(0.1, s, 1.0), beta)
    assert power_spectrum(bath, w) == pytest.approx(math.exp(beta * w) * power_spectrum(bath, -w), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(w=st.floats(0.01, 10.0), beta=st.floats(0.05, 50.0))
def test_power_spectrum_nonnegative(w, beta):
    bath = BathSpec(UnderdampedBrownian(0.7, 0.5, 1.0), beta)
    assert power_spectrum(bath, w) >= 0 and power_spectrum(bath, -w) >= 0


def test_beta_validation():
    with pytest.raises(ValueError):
        BathSpec(OhmicFamily(1, 1, 1), 0.0)
    assert BathSpec(OhmicFamily(1, 1, 1), math.inf).temperature == 0.0

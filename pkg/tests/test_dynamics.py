import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from openbath import dynamics as D
from openbath.bath import BathSpec, UnderdampedBrownian
from openbath.expfit import ExponentialBath, matsubara_underdamped, reconstruct
from openbath.rates import gamma_redfield, gkls_rates

from _helpers import random_density, random_hermitian

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)
I2 = np.eye(2)


def qubit(eb, w=1.0):
    return D.SystemSpec(0.5 * w * SZ, [D.Coupling(SX, eb, "b")])


def two_qubits(eb1, eb2, g):
    h1, h2 = np.kron(0.5 * SZ, I2), np.kron(I2, 0.65 * SZ)
    h = h1 + h2 + g * np.kron(SX, SX)
    sys = D.SystemSpec(h, [D.Coupling(np.kron(SX, I2), eb1, "a"), D.Coupling(np.kron(I2, SX), eb2, "b")])
    return sys, [D.LocalSpec(h1, 0), D.LocalSpec(h2, 1)]


def trace_row(d):
    return D.vec(np.eye(d)).conj()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_column_stacking_identity(seed):
    rng = np.random.default_rng(seed)
    A, X, B = (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(3))
    np.testing.assert_allclose(D.vec(A @ X @ B), np.kron(B.T, A) @ D.vec(X), atol=1e-12)
    assert D.vec(X)[1 + 3 * 2] == X[1, 2]
    np.testing.assert_array_equal(D.unvec(D.vec(X)), X)


def test_commutator_superoperator():
    rng = np.random.default_rng(0)
    h, rho = random_hermitian(rng, 3), random_density(rng, 3)
    np.testing.assert_allclose(D.commutator_super(h).apply(rho), -1j * (h @ rho - rho @ h), atol=1e-14)


def test_choi_of_identity_and_transpose():
    d = 2
    ident = D.Superoperator.identity(d).choi()
    omega = D.vec(np.eye(d))
    np.testing.assert_allclose(ident, np.outer(omega, omega), atol=1e-15)
    T = np.zeros((d * d, d * d))
    for a in range(d):
        for b in range(d):
            T[b + d * a, a + d * b] = 1.0
    assert np.linalg.eigvalsh(D.Superoperator(T).choi()).min() < -0.5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_bohr_decomposition_reconstructs_coupling(seed):
    rng = np.random.default_rng(seed)
    h, q = random_hermitian(rng, 4), random_hermitian(rng, 4)
    dec = D.bohr_decompose(D.SystemSpec(h, [D.Coupling(q)]))
    np.testing.assert_allclose(dec.ops.sum(axis=0), q, atol=1e-10)
    for w, a in zip(dec.freqs, dec.ops):
        np.testing.assert_allclose(h @ a - a @ h, -w * a, atol=1e-9)
    assert np.all(np.diff(dec.freqs) > 0)


def test_bohr_decomposition_merges_degenerate_levels():
    # equally spaced ladder: both transitions share one Bohr frequency per sign
    h = np.diag([0.0, 1.0, 2.0]).astype(complex)
    q = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
    dec = D.bohr_decompose(D.SystemSpec(h, [D.Coupling(q)]))
    np.testing.assert_allclose(dec.freqs, [-1.0, 1.0])


def test_system_validation():
    with pytest.raises(ValueError):
        D.SystemSpec(np.array([[0, 1], [0, 0]], dtype=complex))
    with pytest.raises(ValueError):
        D.SystemSpec(SZ, [D.Coupling(np.eye(3))])
    with pytest.raises(TypeError):
        D.build_gkls_global(qubit(BathSpec(UnderdampedBrownian(1, 1, 1), 1.0)), None, None)


def generators(eb, t=2.0):
    sys, local = two_qubits(eb, eb, 0.1)
    return {
        "redfield": D.build_redfield_generator(sys, None, None, t),
        "redfield_inf": D.build_redfield_generator(sys, None, None, math.inf),
        "cumulant": D.build_cumulant_exponent(sys, None, None, t),
        "gkls_global": D.build_gkls_global(sys, None, None),
        "gkls_local": D.build_gkls_local(sys, local),
    }


def test_generators_preserve_trace_and_hermiticity(ud_esprit):
    rng = np.random.default_rng(4)
    rho = random_density(rng, 4)
    for name, L in generators(ud_esprit).items():
        assert abs(trace_row(4) @ L.matrix).max() < 1e-12, name
        out = L.apply(rho)
        assert np.abs(out - out.conj().T).max() < 1e-12, name


@pytest.mark.parametrize("name", ["cumulant", "gkls_global", "gkls_local"])
def test_maps_are_completely_positive(ud_matsubara, name):
    eb = ExponentialBath(0.05 * ud_matsubara.c, ud_matsubara.nu)
    L = generators(eb)[name]
    lam = np.linalg.eigvalsh(L.exp().choi())
    assert lam.min() > -1e-10


def test_gkls_global_lamb_shift_commutes_with_hamiltonian(ud_esprit):
    sys, _ = two_qubits(ud_esprit, ud_esprit, 0.1)
    parts = D.gkls_global_parts(sys, None, None)
    for h_ls in parts.lamb_operators:
        assert np.abs(h_ls @ sys.h_s - sys.h_s @ h_ls).max() < 1e-12


def test_local_equals_global_without_intersite_coupling(ud_esprit):
    sys, local = two_qubits(ud_esprit, ud_esprit, 0.0)
    a = D.build_gkls_global(sys, None, None).matrix
    b = D.build_gkls_local(sys, local).matrix
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_gkls_steady_state_populations(ud_esprit):
    w = 1.0
    L = D.build_gkls_global(qubit(ud_esprit, w), None, None)
    rho = D.steady_state(L)
    up, down = gkls_rates(ud_esprit, np.array([-w, w]))[0]
    # index 0 is the upper level of 0.5 w sigma_z; absorption rate uses S(-w)
    assert rho[0, 0].real / rho[1, 1].real == pytest.approx(up / down, rel=1e-9)
    assert np.abs(L.apply(rho)).max() < 1e-12


def test_gkls_steady_state_is_gibbs_for_matsubara_bath():
    bath = BathSpec(UnderdampedBrownian(0.2, 1.0, 1.5), 1.3)
    eb = matsubara_underdamped(bath, 4000)
    rho = D.steady_state(D.build_gkls_global(qubit(eb, 1.1), None, None))
    assert rho[0, 0].real / rho[1, 1].real == pytest.approx(math.exp(-1.3 * 1.1), rel=1e-5)


def test_redfield_rates_are_half_line_transforms():
    eb = ExponentialBath([0.3 + 0.1j], [0.8 + 0.4j])
    t = 1.7
    parts = D.redfield_parts(qubit(eb), None, None, t)
    dec = D.bohr_decompose(qubit(eb))
    g = gamma_redfield(eb, dec.freqs, t)
    expected = D._dissipator(g[None, :] + np.conj(g)[:, None], dec.ops)
    np.testing.assert_allclose(parts.dissipators[0].matrix, expected.matrix, atol=1e-15)


def test_redfield_pictures_agree(ud_esprit):
    # rho_I(t) = U^dag rho_S(t) U for the interaction- and Schrodinger-picture generators
    sys = qubit(ud_esprit)
    rho0 = random_density(np.random.default_rng(2), 2)
    t = np.linspace(0, 3, 7)
    s = D.propagate(lambda x: D.build_redfield_generator(sys, None, None, x), rho0, t, rtol=1e-10, atol=1e-13)
    i = D.propagate(lambda x: D.build_redfield_generator(sys, None, None, x, interaction_picture=True),
                    rho0, t, rtol=1e-10, atol=1e-13)
    for tj, a, b in zip(t, s.states, i.states):
        U = linalg.expm(-1j * sys.h_s * tj)
        np.testing.assert_allclose(U.conj().T @ a @ U, b, atol=1e-8)


def test_propagate_constant_generator_matches_expm(ud_esprit):
    L = D.build_gkls_global(qubit(ud_esprit), None, None)
    rho0 = random_density(np.random.default_rng(5), 2)
    res = D.propagate(L, rho0, [0.0, 0.5, 2.0], rtol=1e-11, atol=1e-14)
    np.testing.assert_allclose(res.states[-1], (L * 2.0).exp().apply(rho0), atol=1e-9)
    assert res.trace_error() < 1e-10 and res.hermiticity_error() < 1e-10


def test_propagate_map_rotates_back():
    h = 0.5 * SZ
    rho0 = random_density(np.random.default_rng(6), 2)
    res = D.propagate_map(lambda t: D.Superoperator.zero(2), rho0, [0.0, 1.3], h_s=h)
    U = linalg.expm(-1j * h * 1.3)
    np.testing.assert_allclose(res.states[1], U @ rho0 @ U.conj().T, atol=1e-14)
    assert res.meta["picture"] == "schrodinger"


def test_cumulant_exponents_grid_matches_direct(ud_esprit):
    sys = qubit(ud_esprit)
    ce = D.CumulantExponents(sys, None, None, [0.0, 1.0, 2.5])
    np.testing.assert_allclose(ce(2.5).matrix, D.build_cumulant_exponent(sys, None, None, 2.5).matrix,
                               atol=1e-14)
    np.testing.assert_allclose(ce(1.7).matrix, D.build_cumulant_exponent(sys, None, None, 1.7).matrix,
                               atol=1e-14)


# ---------------------------------------------------------------- RWA two-level model

def single_term_amplitude(c, mu, t):
    """c1'' + mu c1' + c c1 = 0 with c1(0) = 1, c1'(0) = 0 (f = c exp(-mu tau))."""
    disc = np.sqrt(complex(mu * mu - 4 * c))
    r1, r2 = (-mu + disc) / 2, (-mu - disc) / 2
    return (r2 * np.exp(r1 * t) - r1 * np.exp(r2 * t)) / (r2 - r1)


@pytest.mark.parametrize("c, nu", [(0.2 + 0j, 1.5 + 0.3j), (2.0 + 0.5j, 0.4 + 1.0j)])
def test_volterra_single_term_closed_form(c, nu):
    w0 = 0.7
    eb = ExponentialBath([c], [nu])
    t = np.linspace(0, 12, 49)
    np.testing.assert_allclose(D.volterra_solve(eb, w0, t), single_term_amplitude(c, nu - 1j * w0, t),
                               atol=1e-12)


def test_volterra_matches_direct_discretization(ud_esprit):
    eb = ExponentialBath(0.05 * ud_esprit.c, ud_esprit.nu)
    w0 = 1.2
    kernel = lambda tau: reconstruct(eb, tau) * np.exp(1j * w0 * tau)
    t, c_trap = D.volterra_trapezoid(kernel, 20.0, 800)
    np.testing.assert_allclose(D.volterra_solve(eb, w0, t), c_trap, atol=1e-7)


def test_volterra_rejects_bad_grid():
    with pytest.raises(ValueError):
        D.volterra_solve(ExponentialBath([1.0], [1.0]), 0.0, [1.0, 0.5])


def test_exact_rates_callable_matches_grid(ud_esprit):
    eb = ExponentialBath(0.05 * ud_esprit.c, ud_esprit.nu)
    t = np.array([0.5, 3.0, 9.0])
    g, s = D.tcl_exact_rates(eb, 1.2, t)
    fn = D.ExactTCLRates(eb, 1.2)
    np.testing.assert_allclose(np.array([fn(x) for x in t]), np.stack([g, s], axis=1), rtol=1e-9, atol=1e-12)


def test_tcl2_rates_are_redfield_transform(ud_esprit, backend):
    t = np.linspace(0.0, 15.0, 31)
    g, s = D.tcl_rwa_rates(ud_esprit, 1.2, 2, t, backend=backend)
    G = 2 * gamma_redfield(ud_esprit, 1.2, t)
    np.testing.assert_allclose(g + 1j * s, G, atol=1e-12)


def test_tcl4_closed_form_matches_quadrature_oracle(ud_esprit, backend):
    eb = ExponentialBath(0.05 * ud_esprit.c, ud_esprit.nu)
    w0, dt = 1.2, 0.005
    grid = dt * np.arange(2001)
    f = reconstruct(eb, grid) * np.exp(1j * w0 * grid)
    idx, go, so = D.tcl4_oracle(f, dt)
    sel = idx[::50]
    g, s = D.tcl_rwa_rates(eb, w0, 4, grid[sel], backend=backend)
    np.testing.assert_allclose(g, go[::50], atol=1e-8)
    np.testing.assert_allclose(s, so[::50], atol=1e-8)


def test_tcl4_beats_tcl2_at_weak_coupling(ud_esprit):
    eb = ExponentialBath(0.02 * ud_esprit.c, ud_esprit.nu)
    t = np.linspace(0.5, 10, 20)
    ge, se = D.tcl_exact_rates(eb, 1.2, t)
    g2, s2 = D.tcl_rwa_rates(eb, 1.2, 2, t)
    g4, s4 = D.tcl_rwa_rates(eb, 1.2, 4, t)
    e2 = np.abs(g2 + 1j * s2 - ge - 1j * se).max()
    e4 = np.abs(g4 + 1j * s4 - ge - 1j * se).max()
    assert e4 < 0.1 * e2


def test_tcl_zero_terms_and_validation():
    z, s = D.tcl_rwa_rates(ExponentialBath([], []), 1.0, 4, [0.0, 1.0])
    assert np.all(z == 0) and np.all(s == 0)
    with pytest.raises(ValueError):
        D.tcl_rwa_rates(ExponentialBath([1.0], [1.0]), 1.0, 3, [1.0])


def test_constant_rate_generator_decay():
    gam, S = 0.4, 0.3
    gen = D.build_tcl_rwa_generator(lambda t: gam, lambda t: S)
    rho0 = np.array([[0.6, 0.3 - 0.1j], [0.3 + 0.1j, 0.4]])
    t = 2.2
    out = (gen(t) * t).exp().apply(rho0)
    assert out[0, 0] == pytest.approx(0.6 * math.exp(-gam * t), rel=1e-12)
    assert out[0, 1] == pytest.approx(rho0[0, 1] * np.exp(-(gam + 1j * S) * t / 2), rel=1e-12)


def test_generator_from_sampled_series():
    tg = np.linspace(0, 5, 11)
    gen = D.build_tcl_rwa_generator((tg, 0.1 * tg), (tg, np.zeros_like(tg)))
    L = gen(2.5).matrix
    ref = D.build_tcl_rwa_generator(lambda t: 0.25, lambda t: 0.0)(0).matrix
    np.testing.assert_allclose(L, ref, atol=1e-14)

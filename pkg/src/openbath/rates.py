"""Decay rates and Lamb-shift coefficients from an exponential bath.

Closed forms (evaluated by the kernels in ``_backend``):

* cumulant: Gamma(w, w', t) = int_0^t int_0^t e^{i(w s1 - w' s2)} C(s1 - s2),
  xi(w, w', t) = (1/2i) int_0^t int_0^t sgn(s1 - s2) e^{i(w s1 - w' s2)} C(s1 - s2);
* Redfield: Gamma(w, t) = int_0^t e^{i w s} C(s) ds;
* GKLS: the t -> inf limit of the Redfield rate at w = w'.

The ``oracle_*`` functions evaluate the same quantities by adaptive quadrature
of the bath's spectral density or of its quadrature correlation function,
never touching the exponential decomposition.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import _backend
from . import _pykernels
from ._quadrature import gk21
from .bath import correlation_grid
from .errors import PoleCollision, QuadratureNotConverged

__all__ = [
    "RateTable",
    "gamma_cumulant",
    "xi_cumulant",
    "cumulant_table",
    "gamma_redfield",
    "redfield_coeffs",
    "gkls_rates",
    "oracle_rates",
    "oracle_gamma_gk",
    "oracle_xi_pv",
    "oracle_xi_2d",
    "oracle_halfline_gk",
    "write_rate_table_csv",
]

COLLISION_TOL = 1e-14
TAIL_FACTOR = 10.0  # oracle range [0, TAIL_FACTOR * bath scale] is integrated node by node
CHUNK_BUDGET = 4_000_000  # complex values per oracle integrand call


def n_threads():
    """Worker cap from ``OPENBATH_THREADS`` (default: CPU count)."""
    env = os.environ.get("OPENBATH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _check_collision(eb, freqs):
    if not len(eb):
        return
    d = np.abs(eb.nu[None, :] - 1j * np.asarray(freqs, dtype=float).reshape(-1)[:, None])
    if np.any(d < COLLISION_TOL):
        raise PoleCollision("an exponent rate coincides with i * (Bohr frequency)")


def _pairs_eval(eb, w, wp, t, backend=None):
    """Gamma and xi for paired frequency arrays, fanned out over threads in blocks."""
    k = _backend.get(backend)
    w = np.ascontiguousarray(w, dtype=float).reshape(-1)
    wp = np.ascontiguousarray(wp, dtype=float).reshape(-1)
    t = np.ascontiguousarray(t, dtype=float).reshape(-1)
    _check_collision(eb, np.concatenate([w, wp]))
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    workers = min(n_threads(), max(1, w.size // 8))
    if workers == 1:
        return k.gamma_xi(eb.c, eb.nu, w, wp, t)
    blocks = np.array_split(np.arange(w.size), workers)
    g = np.empty((w.size, t.size), dtype=complex)
    x = np.empty_like(g)

    def run(idx):
        g[idx], x[idx] = k.gamma_xi(eb.c, eb.nu, w[idx], wp[idx], t)

    with ThreadPoolExecutor(workers) as pool:
        list(pool.map(run, blocks))
    return g, x


def _scalar_or_array(out, t):
    return complex(out[0, 0]) if np.ndim(t) == 0 else out[0]


def gamma_cumulant(eb, omega, omega_prime, t, backend=None):
    """Gamma(w, w', t) for scalar frequencies; ``t`` scalar or 1-D array.

    Raises
    ------
    PoleCollision
        If ``|nu_k - i w| < 1e-14`` for some term and frequency.
    """
    g, _ = _pairs_eval(eb, [omega], [omega_prime], np.atleast_1d(t), backend)
    return _scalar_or_array(g, t)


def xi_cumulant(eb, omega, omega_prime, t, backend=None):
    """xi(w, w', t), the Lamb-shift coefficient of the cumulant exponent."""
    _, x = _pairs_eval(eb, [omega], [omega_prime], np.atleast_1d(t), backend)
    return _scalar_or_array(x, t)


@dataclass(frozen=True, eq=False)
class RateTable:
    """Gamma[j, a, b] = Gamma(freqs[a], freqs[b], t_grid[j]); same layout for xi."""

    bohr_freqs: np.ndarray
    t_grid: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray


def cumulant_table(eb, freqs, t_grid, backend=None):
    """Hermitian tables of Gamma and xi over all ordered pairs of ``freqs``.

    Only the upper triangle is evaluated; the lower one is filled by
    conjugation, so ``Gamma[:, b, a] == conj(Gamma[:, a, b])`` holds exactly.
    """
    freqs = np.asarray(freqs, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    F = freqs.size
    iu, ju = np.triu_indices(F)
    g, x = _pairs_eval(eb, freqs[iu], freqs[ju], t_grid, backend)
    G = np.zeros((t_grid.size, F, F), dtype=complex)
    X = np.zeros_like(G)
    G[:, iu, ju] = g.T
    X[:, iu, ju] = x.T
    G[:, ju, iu] = np.conj(g.T)
    X[:, ju, iu] = np.conj(x.T)
    # the diagonal is real by construction; drop the zero imaginary part explicitly
    d = np.arange(F)
    G[:, d, d] = G[:, d, d].real
    X[:, d, d] = X[:, d, d].real
    return RateTable(freqs, t_grid, G, X)


def gamma_redfield(eb, omega, t, backend=None):
    """Gamma(w, t) = sum_k c_k (1 - e^{-(nu_k - i w) t}) / (nu_k - i w).

    ``omega`` and ``t`` may be scalars or 1-D arrays (result shape
    ``(len(omega), len(t))`` for arrays); ``t = inf`` gives the stationary
    value ``sum_k c_k / (nu_k - i w)``.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(tt < 0):
        raise ValueError("t must be >= 0")
    _check_collision(eb, w)
    out = np.zeros((w.size, tt.size), dtype=complex)
    fin = np.isfinite(tt)
    if np.any(fin):
        out[:, fin] = _backend.get(backend).redfield_gamma(eb.c, eb.nu, w, tt[fin])
    if np.any(~fin) and len(eb):
        out[:, ~fin] = (eb.c[None, :] / (eb.nu[None, :] - 1j * w[:, None])).sum(axis=1)[:, None]
    if np.ndim(omega) == 0 and np.ndim(t) == 0:
        return complex(out[0, 0])
    if np.ndim(omega) == 0:
        return out[0]
    if np.ndim(t) == 0:
        return out[:, 0]
    return out


def redfield_coeffs(eb, omega, omega_prime, t, interaction_picture=True, backend=None):
    """(S_tilde, gamma_tilde) of the time-dependent Redfield equation.

    S_tilde = (1/2i) phase (Gamma(w', t) - conj Gamma(w, t)) and
    gamma_tilde = phase (Gamma(w', t) + conj Gamma(w, t)), where
    ``phase = exp(i (w - w') t)`` in the interaction picture and 1 otherwise.
    """
    g = gamma_redfield(eb, [omega, omega_prime], t, backend=backend)
    gw, gwp = g[0], g[1]
    phase = np.exp(1j * (omega - omega_prime) * np.asarray(t, dtype=float)) if interaction_picture else 1.0
    if np.ndim(t) == 0:
        gw, gwp = gw[0] if np.ndim(gw) else gw, gwp[0] if np.ndim(gwp) else gwp
    S = phase * (gwp - np.conj(gw)) / 2j
    gam = phase * (gwp + np.conj(gw))
    return S, gam


def gkls_rates(eb, omega):
    """(gamma_inf, lamb_inf) = (2 Re G, Im G) with G = sum_k c_k / (nu_k - i w)."""
    w = np.asarray(omega, dtype=float)
    if not len(eb):
        z = np.zeros(w.shape)
        return (0.0, 0.0) if w.ndim == 0 else (z, z.copy())
    _check_collision(eb, w)
    G = (eb.c / (eb.nu - 1j * np.multiply.outer(w, np.ones_like(eb.nu)))).sum(axis=-1)
    if w.ndim == 0:
        return float(2 * G.real), float(G.imag)
    return 2 * G.real, G.imag


# ---------------------------------------------------------------- oracles

def _bose_weights(bath, nu):
    """J(nu) (n(nu) + 1) and J(nu) n(nu) for nu > 0."""
    J = bath.model(nu)
    if math.isinf(bath.beta):
        return J, np.zeros_like(J)
    with np.errstate(over="ignore"):
        n = 1.0 / np.expm1(bath.beta * nu)
    return J * (n + 1), J * n


def _split_point(bath, freqs):
    """Upper end of the range integrated node by node; beyond it the kernels have no poles."""
    m = float(np.max(np.abs(freqs))) if np.size(freqs) else 0.0
    return max(TAIL_FACTOR * bath.model.scale(), 2.0 * m + 1.0)


def _F(x, t):
    """int_0^t e^{i x s} ds = t phi1(i x t)."""
    return t * _pykernels.phi1(1j * x * t)


def _signs(bath):
    return (1,) if math.isinf(bath.beta) else (1, -1)


def _tail(bath, w, wp, t, W, eps):
    """Contributions of nu > W, split into a smooth part and a Fourier part.

    For nu > W the kernels are regular and read, with p = w - s nu,
    q = w' - s nu and D = F(w - w'),

        Gamma: [(e^{i(w - w')t} + 1) - e^{ipt} - e^{-iqt}] / (p q)
        xi:    D (1/p + 1/q) / 2 + (e^{-iqt} - e^{ipt}) / (2i p q).

    The first pieces do not oscillate in nu; the exponentials are integrated
    with Fourier-weighted quadrature against the smooth factor 1 / (p q).
    """
    P = w.size
    gam = np.zeros((P, t.size), dtype=complex)
    xi = np.zeros_like(gam)
    D = _F((w - wp)[:, None], t[None, :])
    for sign in _signs(bath):
        def weight(nu):
            wp_, wm_ = _bose_weights(bath, nu)
            return wp_ if sign == 1 else wm_

        # smooth part on nu = W / u, u in (0, 1]
        def smooth(u):
            nu = W / u
            jac = weight(nu) * W / u**2
            p = w - sign * nu[..., None]
            q = wp - sign * nu[..., None]
            return np.concatenate([jac[..., None] / (p * q), jac[..., None] * (1 / p + 1 / q)], axis=-1)

        val, err, ok = gk21(smooth, np.linspace(0.0, 1.0, 17), epsabs=0.1 * eps, epsrel=0.1 * eps)
        if not ok and err > eps:
            raise QuadratureNotConverged("oracle tail did not converge", err)
        G1, G2 = val[:P], val[P:]
        gam += (np.exp(1j * np.outer(w - wp, t)) + 1) * G1[:, None]
        xi += 0.5 * D * G2[:, None]
        for i in range(P):
            g = lambda nu, i=i: float(weight(np.array([nu]))[0] / ((w[i] - sign * nu) * (wp[i] - sign * nu)))
            for j, tj in enumerate(t):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", integrate.IntegrationWarning)
                    ic, ec = integrate.quad(g, W, np.inf, weight="cos", wvar=tj, epsabs=0.1 * eps, limlst=100)
                    is_, es = integrate.quad(g, W, np.inf, weight="sin", wvar=tj, epsabs=0.1 * eps, limlst=100)
                if max(ec, es) > eps:
                    raise QuadratureNotConverged("oracle Fourier tail did not converge", max(ec, es))
                A = ic - 1j * sign * is_  # int g e^{-i s nu t}
                B = np.conj(A)
                ea, eb_ = np.exp(1j * w[i] * tj), np.exp(-1j * wp[i] * tj)
                gam[i, j] -= ea * A + eb_ * B
                xi[i, j] += (eb_ * B - ea * A) / 2j
    return gam, xi


def oracle_rates(bath, omegas, omegas_prime, t, eps=1e-10, parts=("gamma", "xi")):
    """Gamma and xi for paired frequencies by quadrature over the spectral density.

    Gamma = (1/pi) int_0^inf dnu J(nu) [(n+1) F(w - nu) conj F(w' - nu)
                                        + n F(w + nu) conj F(w' + nu)],
    with ``F(x) = int_0^t e^{i x s} ds``; xi uses the analytic double time
    integral of the sgn kernel in place of ``F conj F``, which turns the usual
    principal-value expression into a regular single integral. The range
    ``[0, W]`` is integrated adaptively for all pairs and times at once;
    beyond ``W`` see :func:`_tail`.

    Parameters
    ----------
    omegas, omegas_prime : array_like
        Paired frequencies, shape (P,).
    t : array_like
        Times, shape (T,).
    parts : tuple
        Any of ``"gamma"``, ``"xi"``; the other array is returned as None.

    Returns
    -------
    gamma, xi : complex arrays of shape (P, T) or None
    """
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    wp = np.atleast_1d(np.asarray(omegas_prime, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if w.shape != wp.shape:
        raise ValueError("omegas and omegas_prime must pair up")
    want_g, want_x = "gamma" in parts, "xi" in parts
    P = w.size
    gam = np.zeros((P, t.size), dtype=complex)
    xi = np.zeros_like(gam)
    pos = t > 0
    if np.any(pos) and P:
        tp = t[pos]
        W = _split_point(bath, np.concatenate([w, wp]))
        feats = [f for f in (*bath.model.features(), *np.abs(w), *np.abs(wp)) if 0 < f < W]
        signs = _signs(bath)

        def integrand(nu):
            wpl, wmi = _bose_weights(bath, nu)
            out = []
            for sign in signs:
                wt = (wpl if sign == 1 else wmi)[..., None, None]
                p = w[:, None] - sign * nu[..., None, None]
                q = wp[:, None] - sign * nu[..., None, None]
                if want_g:
                    out.append(wt * _F(p, tp) * np.conj(_F(q, tp)))
                if want_x:
                    H = tp**2 * _pykernels.dphi(1j * p * tp, -1j * q * tp)
                    Hr = tp**2 * _pykernels.dphi(-1j * q * tp, 1j * p * tp)
                    out.append(wt * (H - Hr) / 2j)
            n_out = len(out) // len(signs)
            acc = [sum(out[k::n_out]) for k in range(n_out)]
            return np.concatenate([a.reshape(nu.shape + (-1,)) for a in acc], axis=-1)

        # kernels oscillate with period ~ 2 pi / t in nu
        n_panels = int(min(200000, max(32, 2 * W * tp.max() / np.pi)))
        edges = np.unique(np.concatenate([np.linspace(0, W, n_panels + 1), feats]))
        n_out = (want_g + want_x) * P * tp.size
        chunk = max(1, CHUNK_BUDGET // (21 * n_out * len(signs)))
        val, err, ok = gk21(integrand, edges, epsabs=eps, epsrel=eps, chunk=chunk)
        if not ok and err > 10 * eps * max(1.0, np.max(np.abs(val))):
            raise QuadratureNotConverged("spectral oracle did not converge", err / np.pi)
        tg, tx = _tail(bath, w, wp, tp, W, eps)
        blocks = val.reshape(want_g + want_x, P, tp.size)
        k = 0
        if want_g:
            gam[:, pos] = (blocks[k] + tg) / np.pi
            k += 1
        if want_x:
            xi[:, pos] = (blocks[k] + tx) / np.pi
    return (gam if want_g else None), (xi if want_x else None)


def oracle_gamma_gk(bath, omega, omega_prime, t, eps=1e-10):
    """Gamma(w, w', t) by Gauss-Kronrod quadrature of the sinc-kernel frequency integral."""
    g, _ = oracle_rates(bath, [omega], [omega_prime], t, eps, parts=("gamma",))
    return complex(g[0, 0]) if np.ndim(t) == 0 else g[0]


def oracle_xi_pv(bath, omega, omega_prime, t, eps=1e-10):
    """xi(w, w', t) from the frequency representation of the sgn kernel."""
    _, x = oracle_rates(bath, [omega], [omega_prime], t, eps, parts=("xi",))
    return complex(x[0, 0]) if np.ndim(t) == 0 else x[0]


def _ordered_time_integral(bath, omega, omega_prime, t, eps):
    """I1(w, w', t) = int_0^t ds1 int_0^s1 ds2 e^{i(w s1 - w' s2)} C(s1 - s2) with quadrature C.

    Substituting u = s1 - s2 leaves the s1 integral analytic:
    I1 = int_0^t du C(u) e^{i w' u} int_u^t e^{i (w - w') s} ds.
    """
    d = omega - omega_prime

    def integrand(u):
        C = correlation_grid(bath, u.reshape(-1), epsabs=eps * 1e-2, epsrel=eps * 1e-2).reshape(u.shape)
        inner = (t - u) * np.exp(1j * d * u) * _pykernels.phi1(1j * d * (t - u))
        return (C * np.exp(1j * omega_prime * u) * inner)[..., None]

    n_panels = int(max(8, 2 * t * (abs(omega) + abs(omega_prime) + 1) / np.pi))
    edges = np.linspace(0.0, t, n_panels + 1)
    val, err, ok = gk21(integrand, edges, epsabs=eps, epsrel=eps)
    if not ok:
        raise QuadratureNotConverged("time-domain oracle did not converge", err)
    return complex(val[0])


def oracle_xi_2d(bath, omega, omega_prime, t, eps=1e-10):
    """xi(w, w', t) from the square-domain time integral with quadrature C(u).

    The square is split along the diagonal into the two ordered halves, each
    reduced to a single integral over the time difference; this needs C(u)
    on ``[0, t]`` only and is meant for moderate ``t``.
    """
    if t == 0:
        return 0j
    fwd = _ordered_time_integral(bath, omega, omega_prime, t, eps)
    bwd = _ordered_time_integral(bath, omega_prime, omega, t, eps)
    return (fwd - np.conj(bwd)) / 2j


def oracle_gamma_2d(bath, omega, omega_prime, t, eps=1e-10):
    """Gamma(w, w', t) from the same time-domain reduction as :func:`oracle_xi_2d`."""
    if t == 0:
        return 0j
    fwd = _ordered_time_integral(bath, omega, omega_prime, t, eps)
    bwd = _ordered_time_integral(bath, omega_prime, omega, t, eps)
    return fwd + np.conj(bwd)


def oracle_halfline_gk(bath, omega, t, eps=1e-10):
    """int_0^t e^{i w s} C(s) ds by Gauss-Kronrod quadrature of the quadrature C(s)."""
    if t == 0:
        return 0j

    def integrand(s):
        C = correlation_grid(bath, s.reshape(-1), epsabs=eps * 1e-2, epsrel=eps * 1e-2).reshape(s.shape)
        return (C * np.exp(1j * omega * s))[..., None]

    n_panels = int(max(8, 2 * t * (abs(omega) + 1) / np.pi))
    val, err, ok = gk21(integrand, np.linspace(0.0, t, n_panels + 1), epsabs=eps, epsrel=eps)
    if not ok:
        raise QuadratureNotConverged("half-line oracle did not converge", err)
    return complex(val[0])


def write_rate_table_csv(table, path):
    """CSV rows ``t, w, w', Re Gamma, Im Gamma, Re xi, Im xi`` at 17 significant digits."""
    from .io import write_csv

    rows = []
    F = table.bohr_freqs.size
    for j, tj in enumerate(table.t_grid):
        for a in range(F):
            for b in range(F):
                g = table.gamma[j, a, b]
                x = table.xi[j, a, b]
                rows.append((tj, table.bohr_freqs[a], table.bohr_freqs[b], g.real, g.imag, x.real, x.imag))
    header = ["t [1/energy]", "omega [energy]", "omega_prime [energy]", "re_gamma [1]",
              "im_gamma [1]", "re_xi [1]", "im_xi [1]"]
    write_csv(path, header, rows)

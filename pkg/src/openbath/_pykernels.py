"""NumPy implementation of the closed-form rate kernels.

Both this module and the compiled ``_ckernels`` expose the same functions:

``gamma_xi(c, nu, w, wp, t)``
    Cumulant coefficients Gamma(w[p], wp[p], t[j]) and xi(w[p], wp[p], t[j]),
    each of shape ``(P, T)``.
``redfield_gamma(c, nu, w, t)``
    Half-line integral Gamma(w[f], t[j]) = int_0^t e^{i w s} C(s) ds, shape ``(F, T)``.
``tcl_sums(c, mu, t)``
    For the kernel f(tau) = sum_k c_k exp(-mu_k tau): F(t) = int_0^t f,
    G(t) = int_0^t F and the convolution (f * G)(t), each of shape ``(T,)``.

With ``a = nu - i w``, ``b = nu - i w'`` the ordered integral over the
half square ``0 < s2 < s1 < t`` is

    I1(w, w', t) = c t^2 D(-a t, b t),   D(X, Y) = int_0^1 du int_0^u dv e^{X u + Y v}
                                                 = (phi1(X + Y) - phi1(X)) / Y,

with ``phi1(z) = (e^z - 1) / z``. Then ``Gamma = I1(w, w') + conj I1(w', w)``
and ``xi = (I1(w, w') - conj I1(w', w)) / 2i``. The double-integral form has
no 1/(w - w') singularity, so the resonant case needs no special branch.
"""
from __future__ import annotations

from math import factorial

import numpy as np

SMALL = 0.1
N_TAYLOR = 15

# D(X, Y) = sum_n sum_q X^(n-q) Y^q / ((n-q)! q! (q+1) (n+2))
_DCOEF = np.zeros((N_TAYLOR, N_TAYLOR))
for _n in range(N_TAYLOR):
    for _q in range(_n + 1):
        _DCOEF[_n - _q, _q] = 1.0 / (factorial(_n - _q) * factorial(_q) * (_q + 1) * (_n + 2))


def phi1(z):
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def dphi(X, Y):
    """D(X, Y) = int_0^1 du int_0^u dv exp(X u + Y v), elementwise."""
    X, Y = np.broadcast_arrays(np.asarray(X, dtype=complex), np.asarray(Y, dtype=complex))
    out = np.empty(X.shape, dtype=complex)
    small = np.maximum(np.abs(X), np.abs(Y)) < SMALL
    big = ~small
    if np.any(big):
        xb, yb = X[big], Y[big]
        out[big] = (phi1(xb + yb) - phi1(xb)) / yb
    if np.any(small):
        xs, ys = X[small], Y[small]
        # Horner in X for each power of Y
        acc = np.zeros(xs.shape, dtype=complex)
        for q in range(N_TAYLOR - 1, -1, -1):
            inner = np.zeros(xs.shape, dtype=complex)
            for p in range(N_TAYLOR - 1 - q, -1, -1):
                inner = inner * xs + _DCOEF[p, q]
            acc = acc * ys + inner
        out[small] = acc
    return out


def _chunks(n_rows, n_cols, m, budget=4_000_000):
    step = max(1, budget // max(1, n_cols * max(m, 1)))
    return range(0, n_rows, step), step


def gamma_xi(c, nu, w, wp, t):
    c = np.asarray(c, dtype=complex)
    nu = np.asarray(nu, dtype=complex)
    w = np.asarray(w, dtype=float)
    wp = np.asarray(wp, dtype=float)
    t = np.asarray(t, dtype=float)
    P, T = w.size, t.size
    gamma = np.zeros((P, T), dtype=complex)
    xi = np.zeros((P, T), dtype=complex)
    if c.size == 0:
        return gamma, xi
    starts, step = _chunks(P, T, c.size)
    tt = t[None, :, None]
    t2 = t[None, :, None] ** 2
    for s in starts:
        sl = slice(s, s + step)
        a = nu[None, None, :] - 1j * w[sl, None, None]
        b = nu[None, None, :] - 1j * wp[sl, None, None]
        fwd = (c * t2 * dphi(-a * tt, b * tt)).sum(axis=-1)
        bwd = (c * t2 * dphi(-b * tt, a * tt)).sum(axis=-1)
        gamma[sl] = fwd + np.conj(bwd)
        xi[sl] = (fwd - np.conj(bwd)) / 2j
    return gamma, xi


def redfield_gamma(c, nu, w, t):
    c = np.asarray(c, dtype=complex)
    nu = np.asarray(nu, dtype=complex)
    w = np.asarray(w, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.zeros((w.size, t.size), dtype=complex)
    if c.size == 0:
        return out
    starts, step = _chunks(w.size, t.size, c.size)
    for s in starts:
        sl = slice(s, s + step)
        a = nu[None, None, :] - 1j * w[sl, None, None]
        out[sl] = (c * t[None, :, None] * phi1(-a * t[None, :, None])).sum(axis=-1)
    return out


# ---------------------------------------------------------------- TCL sums

SMALL_PHI = 0.5
N_PHI = 20
SMALL_DD = 1.0
N_DD = 24

_PHICOEF = {n: np.array([1.0 / factorial(k + n) for k in range(N_PHI)]) for n in (1, 2)}
# exp[0, 0, x, y] = sum_{p,q} x^p y^q / (p + q + 3)!
_DDCOEF = np.array([[1.0 / factorial(p + q + 3) if p + q < N_DD else 0.0 for q in range(N_DD)]
                    for p in range(N_DD)])


def phi(z, n):
    """phi_n(z) = sum_k z^k / (k + n)! for n in {1, 2}."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < SMALL_PHI
    zs = z[small]
    acc = np.zeros_like(zs)
    for k in range(N_PHI - 1, -1, -1):
        acc = acc * zs + _PHICOEF[n][k]
    out[small] = acc
    zb = z[~small]
    e = np.expm1(zb) / zb
    out[~small] = e if n == 1 else (e - 1.0) / zb
    return out


def dd4(x, y):
    """Divided difference exp[0, 0, x, y] = int over the 3-simplex of exp(x s + y u).

    Small arguments use the double Taylor series; otherwise the nodes are
    ordered so that |x| >= |y| and the recursion only divides by x:

        e[x, y]       = e^a phi1(b - a), a the node with the larger real part
        e[x, y, 0]    = (e[x, y] - phi1(y)) / x
        e[x, y, 0, 0] = (e[x, y, 0] - phi2(y)) / x
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=complex), np.asarray(y, dtype=complex))
    out = np.empty(x.shape, dtype=complex)
    ax, ay = np.abs(x), np.abs(y)
    small = np.maximum(ax, ay) < SMALL_DD
    if np.any(small):
        xs, ys = x[small], y[small]
        acc = np.zeros_like(xs)
        for q in range(N_DD - 1, -1, -1):
            inner = np.zeros_like(xs)
            for p in range(N_DD - 1 - q, -1, -1):
                inner = inner * xs + _DDCOEF[p, q]
            acc = acc * ys + inner
        out[small] = acc
    big = ~small
    if np.any(big):
        swap = ay[big] > ax[big]
        xb = np.where(swap, y[big], x[big])
        yb = np.where(swap, x[big], y[big])
        first = xb.real >= yb.real
        hi = np.where(first, xb, yb)
        lo = np.where(first, yb, xb)
        e_xy = np.exp(hi) * phi(lo - hi, 1)
        e_xy0 = (e_xy - phi(yb, 1)) / xb
        out[big] = (e_xy0 - phi(yb, 2)) / xb
    return out


def tcl_sums(c, mu, t, chunk=64):
    c = np.asarray(c, dtype=complex)
    mu = np.asarray(mu, dtype=complex)
    t = np.asarray(t, dtype=float)
    x = -np.multiply.outer(t, mu)
    F = (c * t[:, None] * phi(x, 1)).sum(axis=1)
    G = (c * t[:, None] ** 2 * phi(x, 2)).sum(axis=1)
    fG = np.empty_like(F)
    cc = np.multiply.outer(c, c)
    for s in range(0, t.size, chunk):
        xs = x[s:s + chunk]
        d = dd4(xs[:, :, None], xs[:, None, :])
        fG[s:s + chunk] = t[s:s + chunk] ** 3 * np.einsum("jk,tjk->t", cc, d)
    return F, G, fG

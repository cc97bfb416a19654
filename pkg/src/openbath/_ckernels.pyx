# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of ``_pykernels``: same functions and formulas as scalar loops, with the
exponentials shared between terms, pairs and times computed once."""
import numpy as np

cdef extern from "complex.h" nogil:
    double complex cexp(double complex)
    double cabs(double complex)
    double complex conj(double complex)

DEF SMALL = 0.1
DEF N_TAYLOR = 15
DEF SMALL_PHI = 0.5
DEF N_PHI = 20
DEF SMALL_DD = 1.0
DEF N_DD = 24

cdef double DCOEF[N_TAYLOR][N_TAYLOR]
cdef double PHICOEF[N_TAYLOR]
cdef double PHI1C[N_PHI]
cdef double PHI2C[N_PHI]
cdef double DDC[N_DD][N_DD]


cdef void _init_tables() noexcept:
    cdef int n, q, p
    cdef double fact[N_DD + 4]
    fact[0] = 1.0
    for n in range(1, N_DD + 4):
        fact[n] = fact[n - 1] * n
    for p in range(N_PHI):
        PHI1C[p] = 1.0 / fact[p + 1]
        PHI2C[p] = 1.0 / fact[p + 2]
    for p in range(N_DD):
        for q in range(N_DD):
            DDC[p][q] = 1.0 / fact[p + q + 3] if p + q < N_DD else 0.0
    for p in range(N_TAYLOR):
        PHICOEF[p] = 1.0 / fact[p + 1]
        for q in range(N_TAYLOR):
            DCOEF[p][q] = 0.0
    for n in range(N_TAYLOR):
        for q in range(n + 1):
            DCOEF[n - q][q] = 1.0 / (fact[n - q] * fact[q] * (q + 1) * (n + 2))


_init_tables()


cdef inline double _abs2(double complex z) noexcept nogil:
    return z.real * z.real + z.imag * z.imag


cdef inline double complex _phi1e(double complex z, double complex ez) noexcept nogil:
    """phi1(z) given ez = e^z."""
    cdef int p
    cdef double complex acc
    if _abs2(z) < SMALL * SMALL:
        acc = 0
        for p in range(N_TAYLOR - 1, -1, -1):
            acc = acc * z + PHICOEF[p]
        return acc
    return (ez - 1.0) / z


cdef inline double complex _dphi(double complex X, double complex Y, double complex sxy,
                                 double complex ex) noexcept nogil:
    """D(X, Y) given sxy = phi1(X + Y) and ex = e^X."""
    cdef int p, q
    cdef double complex acc, inner
    if _abs2(X) < SMALL * SMALL and _abs2(Y) < SMALL * SMALL:
        acc = 0
        for q in range(N_TAYLOR - 1, -1, -1):
            inner = 0
            for p in range(N_TAYLOR - 1 - q, -1, -1):
                inner = inner * X + DCOEF[p][q]
            acc = acc * Y + inner
        return acc
    return (sxy - _phi1e(X, ex)) / Y


def gamma_xi(c, nu, w, wp, t):
    # X + Y = i (w - w') t does not depend on the term, and e^{-a t} = e^{-nu t} e^{i w t},
    # so the only exponentials per term are the shared e^{-nu_k t_j}
    cdef const double complex[::1] cc = np.ascontiguousarray(c, dtype=complex)
    cdef const double complex[::1] nn = np.ascontiguousarray(nu, dtype=complex)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=float)
    cdef const double[::1] wwp = np.ascontiguousarray(wp, dtype=float)
    cdef const double[::1] tt = np.ascontiguousarray(t, dtype=float)
    cdef Py_ssize_t P = ww.shape[0], T = tt.shape[0], M = cc.shape[0]
    cdef const double complex[:, ::1] E = np.ascontiguousarray(np.exp(-np.multiply.outer(tt, nn)))
    gamma = np.zeros((P, T), dtype=complex)
    xi = np.zeros((P, T), dtype=complex)
    cdef double complex[:, ::1] g = gamma
    cdef double complex[:, ::1] x = xi
    cdef Py_ssize_t p, j, k
    cdef double complex a, b, fwd, bwd, z, ez, sf, sb, ew, ewp, ek
    cdef double tj, t2
    with nogil:
        for p in range(P):
            for j in range(T):
                tj = tt[j]
                t2 = tj * tj
                z = 1j * (ww[p] - wwp[p]) * tj
                ez = cexp(z)
                sf = _phi1e(z, ez)
                sb = _phi1e(-z, conj(ez))
                ew = cexp(1j * ww[p] * tj)
                ewp = cexp(1j * wwp[p] * tj)
                fwd = 0
                bwd = 0
                for k in range(M):
                    a = nn[k] - 1j * ww[p]
                    b = nn[k] - 1j * wwp[p]
                    ek = E[j, k]
                    fwd = fwd + cc[k] * _dphi(-a * tj, b * tj, sf, ek * ew)
                    bwd = bwd + cc[k] * _dphi(-b * tj, a * tj, sb, ek * ewp)
                fwd = fwd * t2
                bwd = bwd * t2
                g[p, j] = fwd + conj(bwd)
                x[p, j] = (fwd - conj(bwd)) * -0.5j
    return gamma, xi


def redfield_gamma(c, nu, w, t):
    cdef const double complex[::1] cc = np.ascontiguousarray(c, dtype=complex)
    cdef const double complex[::1] nn = np.ascontiguousarray(nu, dtype=complex)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=float)
    cdef const double[::1] tt = np.ascontiguousarray(t, dtype=float)
    cdef Py_ssize_t F = ww.shape[0], T = tt.shape[0], M = cc.shape[0]
    cdef const double complex[:, ::1] E = np.ascontiguousarray(np.exp(-np.multiply.outer(tt, nn)))
    out = np.zeros((F, T), dtype=complex)
    cdef double complex[:, ::1] o = out
    cdef Py_ssize_t f, j, k
    cdef double complex a, acc, ew
    cdef double tj
    with nogil:
        for f in range(F):
            for j in range(T):
                tj = tt[j]
                ew = cexp(1j * ww[f] * tj)
                acc = 0
                for k in range(M):
                    a = nn[k] - 1j * ww[f]
                    acc = acc + cc[k] * _phi1e(-a * tj, E[j, k] * ew)
                o[f, j] = acc * tj
    return out


cdef inline double complex _phin(double complex z, int n) noexcept nogil:
    cdef int k
    cdef double complex acc, e
    if cabs(z) < SMALL_PHI:
        acc = 0
        for k in range(N_PHI - 1, -1, -1):
            acc = acc * z + (PHI1C[k] if n == 1 else PHI2C[k])
        return acc
    e = (cexp(z) - 1.0) / z
    return e if n == 1 else (e - 1.0) / z


cdef inline double complex _dd4(double complex x, double complex y, double complex ex, double complex ey,
                                double complex p1y, double complex p2y) noexcept nogil:
    """exp[0, 0, x, y] given e^x, e^y, phi1(y), phi2(y); same recursion as the NumPy twin."""
    cdef int p, q
    cdef double complex acc, inner, d, exy, exy0
    if cabs(x) < SMALL_DD and cabs(y) < SMALL_DD:
        acc = 0
        for q in range(N_DD - 1, -1, -1):
            inner = 0
            for p in range(N_DD - 1 - q, -1, -1):
                inner = inner * x + DDC[p][q]
            acc = acc * y + inner
        return acc
    d = x - y
    if cabs(d) < SMALL_PHI:
        # e[x, y] = e^a phi1(b - a) with a the node with the larger real part
        if x.real >= y.real:
            exy = ex * _phin(-d, 1)
        else:
            exy = ey * _phin(d, 1)
    else:
        exy = (ex - ey) / d
    exy0 = (exy - p1y) / x
    return (exy0 - p2y) / x


def tcl_sums(c, mu, t):
    cdef const double complex[::1] cc = np.ascontiguousarray(c, dtype=complex)
    cdef const double complex[::1] mm = np.ascontiguousarray(mu, dtype=complex)
    cdef const double[::1] tt = np.ascontiguousarray(t, dtype=float)
    cdef Py_ssize_t T = tt.shape[0], M = cc.shape[0]
    F = np.zeros(T, dtype=complex)
    G = np.zeros(T, dtype=complex)
    fG = np.zeros(T, dtype=complex)
    cdef double complex[::1] Fv = F
    cdef double complex[::1] Gv = G
    cdef double complex[::1] fGv = fG
    xs_a = np.zeros(M, dtype=complex)
    ex_a = np.zeros(M, dtype=complex)
    p1_a = np.zeros(M, dtype=complex)
    p2_a = np.zeros(M, dtype=complex)
    cdef double complex[::1] xs = xs_a
    cdef double complex[::1] ex = ex_a
    cdef double complex[::1] p1 = p1_a
    cdef double complex[::1] p2 = p2_a
    cdef Py_ssize_t i, j, k
    cdef double ti
    cdef double complex accF, accG, accC, row
    with nogil:
        for i in range(T):
            ti = tt[i]
            accF = 0
            accG = 0
            for j in range(M):
                xs[j] = -mm[j] * ti
                ex[j] = cexp(xs[j])
                p1[j] = _phin(xs[j], 1)
                p2[j] = _phin(xs[j], 2)
                accF = accF + cc[j] * ti * p1[j]
                accG = accG + cc[j] * ti * ti * p2[j]
            accC = 0
            for j in range(M):
                # symmetric in (j, k); the recursion divides by the larger node
                row = cc[j] * _dd4(xs[j], xs[j], ex[j], ex[j], p1[j], p2[j])
                for k in range(j + 1, M):
                    if cabs(xs[k]) > cabs(xs[j]):
                        row = row + 2.0 * cc[k] * _dd4(xs[k], xs[j], ex[k], ex[j], p1[j], p2[j])
                    else:
                        row = row + 2.0 * cc[k] * _dd4(xs[j], xs[k], ex[j], ex[k], p1[k], p2[k])
                accC = accC + cc[j] * row
            Fv[i] = accF
            Gv[i] = accG
            fGv[i] = accC * ti * ti * ti
    return F, G, fG

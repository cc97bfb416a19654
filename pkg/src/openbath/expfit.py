"""Exponential decompositions C(tau) ~ sum_k c_k exp(-nu_k tau).

Six routes are provided:

* :func:`matsubara_underdamped` -- closed-form series for the underdamped
  Brownian spectral density;
* :func:`prony` and :func:`esprit` -- Hankel-matrix methods on uniformly
  sampled C(tau);
* :func:`aaa` -- rational approximation of the power spectrum;
* :func:`espira` -- rational approximation of the DFT of the samples;
* :func:`nlsq_cf` and :func:`nlsq_ps` -- nonlinear least squares in the time
  and frequency domains.

Every fit returns an :class:`ExponentialBath` whose rates satisfy Re(nu) > 0.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from . import bath as _bath
from .errors import (
    MaxIterations,
    NoStablePoles,
    OptimizerNotConverged,
    OverdampedRegime,
    RankDeficient,
    TooFewSamples,
    ZeroTemperature,
)

__all__ = [
    "ExponentialBath",
    "Signal",
    "DecompositionReport",
    "sample_correlation",
    "sample_power_spectrum",
    "matsubara_underdamped",
    "prony",
    "esprit",
    "aaa",
    "espira",
    "nlsq_cf",
    "nlsq_ps",
    "reconstruct",
    "effective_power_spectrum",
    "detailed_balance_score",
    "report",
    "save_exponential_bath",
    "load_exponential_bath",
]

MERGE_TOL = 1e-10
SPURIOUS_REL = 1e-12
MARGINAL_REL = 1e-10


@dataclass(frozen=True, eq=False)
class ExponentialBath:
    """C(tau) ~ sum_k c[k] exp(-nu[k] tau) for tau >= 0; C(-tau) = conj C(tau)."""

    c: np.ndarray
    nu: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.c, dtype=complex).reshape(-1)
        nu = np.array(self.nu, dtype=complex).reshape(-1)
        if c.shape != nu.shape:
            raise ValueError("c and nu must have the same length")
        if np.any(nu.real <= 0):
            raise ValueError("every rate must have Re(nu) > 0")
        c.flags.writeable = False
        nu.flags.writeable = False
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self):
        return self.c.size

    @property
    def terms(self):
        return list(zip(self.c.tolist(), self.nu.tolist()))

    def scaled(self, factor):
        """Same rates with every amplitude multiplied by ``factor``."""
        return ExponentialBath(self.c * factor, self.nu, {**self.meta, "scaled_by": factor})

    def __call__(self, tau):
        return reconstruct(self, tau)


@dataclass(frozen=True, eq=False)
class Signal:
    """Uniform samples ``values[j] = C(t0 + j * dt)``."""

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex).reshape(-1)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", v)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.values.size)


@dataclass(frozen=True)
class DecompositionReport:
    method: str
    m: int
    rmse_time: float
    rmse_ps: float
    wall_time: float

    def as_dict(self):
        return dict(method=self.method, m=self.m, rmse_time=self.rmse_time,
                    rmse_ps=self.rmse_ps, wall_time=self.wall_time)


# ---------------------------------------------------------------- sampling

def sample_correlation(bath, n_samples=512, t_max=None, decay=1e-6, t0=0.0, rel_tol=1e-12):
    """Sample C(tau) on ``n_samples`` uniform points of ``[t0, t_max]``.

    Without ``t_max`` the window is doubled from ``4 / scale`` until
    ``|C(t_max)| <= decay * |C(0)|`` (checked on the last 5% of the window).
    The quadrature's absolute tolerance is ``rel_tol * |C(0)|`` so that baths
    in any unit system get the same relative accuracy.
    """
    c0 = abs(_bath.correlation(bath, 0.0, epsabs=1e-300, epsrel=1e-10))
    eps = rel_tol * c0 if c0 > 0 else 1e-12
    if t_max is None:
        t_max = 4.0 / bath.model.scale()
        for _ in range(30):
            tail = np.linspace(0.95 * t_max, t_max, 8)
            if np.max(np.abs(_bath.correlation_grid(bath, tail, epsabs=eps))) <= decay * c0:
                break
            t_max *= 2
    times = np.linspace(t0, t_max, n_samples)
    return Signal(t0, times[1] - times[0], _bath.correlation_grid(bath, times, epsabs=eps))


def sample_power_spectrum(bath, n_samples=1000, w_min=1e-3, w_max=None, log=True):
    """Symmetric frequency grid and S(w) on it (log-spaced magnitudes by default)."""
    if w_max is None:
        w_max = 20.0 * bath.model.scale()
    half = n_samples // 2
    mags = np.geomspace(w_min, w_max, half) if log else np.linspace(w_min, w_max, half)
    w = np.concatenate([-mags[::-1], mags])
    return w, _bath.power_spectrum(bath, w)


# ---------------------------------------------------------------- helpers

def _finalize(c, nu, meta, t_start):
    """Drop non-decaying and negligible terms, merge coincident rates."""
    c = np.asarray(c, dtype=complex)
    nu = np.asarray(nu, dtype=complex)
    ok = np.isfinite(c) & np.isfinite(nu)
    # rates sitting on the imaginary axis to rounding are treated as non-decaying
    floor = MARGINAL_REL * np.max(np.abs(nu[ok])) if np.any(ok) else 0.0
    unstable = int(np.count_nonzero(ok & (nu.real <= floor)))
    ok &= nu.real > floor
    c, nu = c[ok], nu[ok]
    order = np.lexsort((nu.imag, nu.real))
    c, nu = c[order], nu[order]
    mc, mn = [], []
    for ck, nk in zip(c, nu):
        if mn and abs(nk - mn[-1]) < MERGE_TOL:
            mc[-1] += ck
        else:
            mc.append(ck)
            mn.append(nk)
    c = np.array(mc, dtype=complex)
    nu = np.array(mn, dtype=complex)
    if c.size:
        keep = np.abs(c) >= SPURIOUS_REL * np.max(np.abs(c))
        dropped_small = int(np.count_nonzero(~keep))
        c, nu = c[keep], nu[keep]
    else:
        dropped_small = 0
    meta = dict(meta)
    meta["dropped_unstable"] = meta.get("dropped_unstable", 0) + unstable
    meta["dropped_small"] = dropped_small
    meta["wall_time"] = time.perf_counter() - t_start
    if unstable:
        warnings.warn(f"{unstable} growing mode(s) dropped", RuntimeWarning, stacklevel=3)
    return ExponentialBath(c, nu, meta)


def _signal_meta(signal):
    return {"t0": float(signal.t0), "dt": float(signal.dt), "n_samples": int(signal.values.size)}


def _check_signal(signal, m):
    n = signal.values.size
    if m < 1:
        raise ValueError("m must be >= 1")
    if n < 2 * m or n < 2:
        raise TooFewSamples(f"{n} samples cannot determine {m} exponentials (need >= {2 * m})")
    if not np.any(signal.values):
        raise RankDeficient("signal is identically zero")


def _amplitudes_from_phases(signal, z):
    """Least-squares amplitudes a for values[j] = sum a_l z_l^j; c rescaled to t = 0."""
    j = np.arange(signal.values.size)
    V = z[None, :] ** j[:, None]
    a, *_ = linalg.lstsq(V, signal.values)
    nu = -np.log(z) / signal.dt
    return a * np.exp(nu * signal.t0), nu


def _stable_phases(z):
    """Keep 0 < |z| < 1 (Re nu > 0), merging numerically equal phases."""
    z = np.asarray(z, dtype=complex)
    good = np.isfinite(z) & (np.abs(z) > 1e-300)
    dropped = int(np.count_nonzero(good & (np.abs(z) >= 1)))
    z = z[good & (np.abs(z) < 1)]
    uniq = []
    for zk in z:
        if all(abs(zk - u) > MERGE_TOL * max(1.0, abs(u)) for u in uniq):
            uniq.append(zk)
    return np.array(uniq, dtype=complex), dropped


# ---------------------------------------------------------------- Matsubara

def matsubara_underdamped(bath, n_matsubara):
    """Closed-form Matsubara series of the underdamped Brownian correlation.

    Terms 0 and 1 are the resonant pair ``nu = Gamma/2 -/+ i Omega`` with
    ``Omega = sqrt(w0^2 - Gamma^2/4)``; the remaining ``n_matsubara`` terms
    have real rates ``2 pi k / beta``.

    Raises
    ------
    OverdampedRegime
        If ``w0 <= Gamma / 2``.
    ZeroTemperature
        If ``beta`` is infinite.
    """
    t_start = time.perf_counter()
    model = bath.model
    if not isinstance(model, _bath.UnderdampedBrownian):
        raise TypeError("matsubara_underdamped needs an UnderdampedBrownian bath")
    if n_matsubara < 0:
        raise ValueError("n_matsubara must be >= 0")
    if math.isinf(bath.beta):
        raise ZeroTemperature("the Matsubara series is undefined at beta = inf")
    a2, G, w0, beta = model.alpha**2, model.gamma_width, model.omega_0, bath.beta
    if w0 <= G / 2:
        raise OverdampedRegime(f"omega_0 = {w0} <= Gamma/2 = {G / 2}")
    Om = math.sqrt(w0**2 - G**2 / 4)
    coth = lambda x: 1 / np.tanh(x)
    c = [a2 / (4 * Om) * (coth(beta * (Om + 0.5j * G) / 2) - 1),
         a2 / (4 * Om) * (coth(beta * (Om - 0.5j * G) / 2) + 1)]
    nu = [G / 2 - 1j * Om, G / 2 + 1j * Om]
    k = np.arange(1, n_matsubara + 1)
    vk = 2 * np.pi * k / beta
    ck = -4 * a2 * G * np.pi * k / (beta**2 * ((Om + 0.5j * G) ** 2 + vk**2) * ((Om - 0.5j * G) ** 2 + vk**2))
    c = np.concatenate([c, ck])
    nu = np.concatenate([nu, vk.astype(complex)])
    meta = {"method": "matsubara", "n_matsubara": int(n_matsubara),
            "wall_time": time.perf_counter() - t_start}
    # no filtering: the analytic series is kept term by term
    return ExponentialBath(c, nu, meta)


# ---------------------------------------------------------------- Prony family

def _hankel(values, rows, cols, shift=0):
    idx = np.arange(rows)[:, None] + np.arange(cols)[None, :] + shift
    return values[idx]


def prony(signal, m):
    """Matrix-pencil Prony fit with ``m`` exponentials.

    Phases are the eigenvalues of the least-squares solution of
    ``H(0) X = H(1)`` for the Hankel matrices of the samples; amplitudes come
    from a Vandermonde least-squares solve over all samples.
    """
    t_start = time.perf_counter()
    _check_signal(signal, m)
    f = signal.values
    n = f.size
    H0 = _hankel(f, n - m, m)
    H1 = _hankel(f, n - m, m, shift=1)
    X, _, rank, _ = linalg.lstsq(H0, H1)
    if rank == 0:
        raise RankDeficient("Hankel matrix has rank 0")
    z, dropped = _stable_phases(linalg.eigvals(X))
    c, nu = _amplitudes_from_phases(signal, z)
    meta = {"method": "prony", "m": int(m), "dropped_unstable": dropped, **_signal_meta(signal)}
    return _finalize(c, nu, meta, t_start)


def esprit(signal, m):
    """ESPRIT fit: phases from the shift invariance of the dominant right singular subspace."""
    t_start = time.perf_counter()
    _check_signal(signal, m)
    f = signal.values
    n = f.size
    L = n // 2
    H = _hankel(f, n - L, L + 1)
    _, s, Vh = linalg.svd(H, full_matrices=False)
    if s[0] == 0:
        raise RankDeficient("Hankel matrix has rank 0")
    W = Vh[:m].T
    Phi = linalg.pinv(W[:-1]) @ W[1:]
    z, dropped = _stable_phases(linalg.eigvals(Phi))
    c, nu = _amplitudes_from_phases(signal, z)
    meta = {"method": "esprit", "m": int(m), "dropped_unstable": dropped, **_signal_meta(signal)}
    return _finalize(c, nu, meta, t_start)


# ---------------------------------------------------------------- AAA

def _aaa_core(Z, F, tol, mmax):
    """Greedy AAA. Returns support points, values and barycentric weights.

    Stops when ``max|F - R| <= tol`` or after ``mmax`` support points.
    """
    M = Z.size
    mask = np.ones(M, dtype=bool)
    zs, fs = [], []
    C = np.zeros((M, 0), dtype=complex)
    R = np.full(M, np.mean(F))
    w = np.zeros(0, dtype=complex)
    errors = [float(np.max(np.abs(F - R)))]
    if errors[0] <= tol:
        return np.array(zs), np.array(fs), w, errors, True
    for _ in range(mmax):
        j = int(np.argmax(np.where(mask, np.abs(F - R), -np.inf)))
        zs.append(Z[j])
        fs.append(F[j])
        mask[j] = False
        with np.errstate(divide="ignore", invalid="ignore"):
            col = 1.0 / (Z - Z[j])
        C = np.column_stack([C, col])
        fv = np.array(fs)
        A = F[mask, None] * C[mask] - C[mask] * fv[None, :]
        _, _, Vh = linalg.svd(A, full_matrices=False)
        w = Vh[-1].conj()
        N = C[mask] @ (w * fv)
        D = C[mask] @ w
        R = F.copy()
        R[mask] = N / D
        errors.append(float(np.max(np.abs(F - R))))
        if errors[-1] <= tol:
            return np.array(zs), fv, w, errors, True
        if not np.any(mask):
            break
    return np.array(zs), np.array(fs), w, errors, False


def _aaa_poles(zs, w):
    m = zs.size
    if m < 2:
        return np.zeros(0, dtype=complex)
    B = np.eye(m + 1, dtype=complex)
    B[0, 0] = 0
    E = np.zeros((m + 1, m + 1), dtype=complex)
    E[0, 1:] = w
    E[1:, 0] = 1
    E[1:, 1:] = np.diag(zs)
    ev = linalg.eigvals(E, B)
    return ev[np.isfinite(ev)]


def aaa(omegas, values, tol, max_terms=None):
    """Fit the power spectrum with AAA and map its poles to exponential terms.

    A rational approximant of S(w) is built greedily; each pole ``p`` in the
    lower half plane gives a rate ``nu = i p``. Amplitudes are then obtained
    by linear least squares of ``2 Re sum c/(nu - i w)`` against the samples,
    which keeps the result real-valued by construction.

    Parameters
    ----------
    omegas, values : array_like
        Samples of S(w) covering negative and positive frequencies.
    tol : float
        Absolute stopping tolerance on ``max|S - R|``.
    max_terms : int, optional
        Cap on the number of returned terms; the AAA degree is capped at
        ``2 * max_terms``.

    Raises
    ------
    NoStablePoles
        No pole of the approximant lies in the lower half plane.
    MaxIterations
        The tolerance was not reached and no ``max_terms`` cap was given.
    """
    t_start = time.perf_counter()
    Z = np.asarray(omegas, dtype=float)
    F = np.asarray(values, dtype=float)
    if Z.size < 4 or not (Z.min() < 0 < Z.max()):
        raise ValueError("need >= 4 samples on both sides of w = 0")
    if not tol > 0:
        raise ValueError("tol must be positive")
    mmax = 2 * max_terms + 1 if max_terms is not None else min(Z.size - 1, 201)
    zs, fs, w, errors, converged = _aaa_core(Z.astype(complex), F.astype(complex), tol, mmax)
    meta = {"method": "aaa", "tol": float(tol), "support_points": int(zs.size),
            "aaa_error": errors[-1], "converged": bool(converged)}
    if not converged and max_terms is None:
        raise MaxIterations(f"AAA stopped at {zs.size} support points with error {errors[-1]:.3g}")
    if zs.size < 2:
        return _finalize([], [], meta, t_start)
    poles = _aaa_poles(zs, w)
    nu = 1j * poles[poles.imag < 0]
    if nu.size == 0:
        raise NoStablePoles("no poles of the approximant in the lower half plane")
    if max_terms is not None and nu.size > max_terms:
        nu = nu[np.argsort(nu.real)[:max_terms]]
    c = _ps_amplitudes(Z, F, nu)
    return _finalize(c, nu, meta, t_start)


def _ps_amplitudes(w, S, nu):
    """Least-squares c for S(w) = sum 2 Re(c / (nu - i w)) with fixed nu."""
    g = 1.0 / (nu[None, :] - 1j * w[:, None])
    A = np.hstack([2 * g.real, -2 * g.imag])
    x, *_ = linalg.lstsq(A, S)
    k = nu.size
    return x[:k] + 1j * x[k:]


def espira(signal, tol, max_terms=None, amplitude_rule="power_n"):
    """ESPIRA: AAA applied to the DFT of the samples on the unit circle.

    With ``M`` samples ``f_j = sum a_l z_l^j`` and ``w = exp(-2 pi i / M)`` the
    DFT satisfies ``w^k fhat_k = sum A_l / (x_k - z_l)`` on the nodes
    ``x_k = w^{-k}`` with ``A_l = a_l (1 - z_l^M)``. The poles
    of the AAA approximant are the phases ``z_l``; residues are fitted by
    least squares over all nodes.

    Parameters
    ----------
    signal : Signal
    tol : float
        Relative stopping tolerance, ``max|g - R| <= tol * max|g|``.
    max_terms : int, optional
        Cap on the rational degree (number of poles).
    amplitude_rule : {"power_n", "square"}
        ``"power_n"`` divides residues by ``1 - z^M``; ``"square"`` by
        ``1 - z^2``. Only the former inverts the DFT identity above; the
        latter is kept for comparison.
    """
    t_start = time.perf_counter()
    f = signal.values
    M = f.size
    if M < 8:
        raise TooFewSamples("espira needs at least 8 samples")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not np.any(f):
        raise RankDeficient("signal is identically zero")
    fhat = np.fft.fft(f)
    k = np.arange(M)
    nodes = np.exp(2j * np.pi * k / M)
    # fhat_k = sum_l A_l u_k^{-1} / (u_k^{-1} - z_l) with u_k = exp(-2 pi i k / M)
    g = fhat / nodes
    scale = np.max(np.abs(g))
    mmax = max_terms + 1 if max_terms is not None else min(M - 1, 201)
    zs, _, w, errors, converged = _aaa_core(nodes, g, tol * scale, mmax)
    meta = {"method": "espira", "tol": float(tol), "support_points": int(zs.size),
            "aaa_error": errors[-1] / scale, "converged": bool(converged),
            "amplitude_rule": amplitude_rule, **_signal_meta(signal)}
    if not converged and max_terms is None:
        raise MaxIterations(f"ESPIRA stopped at {zs.size} support points")
    poles = _aaa_poles(zs, w)
    z, dropped = _stable_phases(poles)
    meta["dropped_unstable"] = dropped
    if z.size == 0:
        raise NoStablePoles("no phases inside the unit circle")
    G = 1.0 / (nodes[:, None] - z[None, :])
    A, *_ = linalg.lstsq(G, g)
    if amplitude_rule == "power_n":
        a = A / (1 - z**M)
    elif amplitude_rule == "square":
        a = A / (1 - z**2)
    else:
        raise ValueError(f"unknown amplitude_rule {amplitude_rule!r}")
    nu = -np.log(z) / signal.dt
    c = a * np.exp(nu * signal.t0)
    return _finalize(c, nu, meta, t_start)


# ---------------------------------------------------------------- NLSQ

def _cf_unpack(p):
    p = p.reshape(-1, 6)
    cp = p[:, 0] + 1j * p[:, 1]
    cm = p[:, 2] + 1j * p[:, 3]
    return cp, cm, p[:, 4], p[:, 5]


def _cf_model(p, t):
    cp, cm, g, Om = _cf_unpack(p)
    Ep = np.exp(-(g + 1j * Om)[None, :] * t[:, None])
    Em = np.exp(-(g - 1j * Om)[None, :] * t[:, None])
    return Ep, Em, (Ep * cp + Em * cm).sum(axis=1)


def nlsq_cf(signal, m, init=None, bounds=None, max_nfev=2000):
    """Fit C(tau) with ``m`` rate pairs ``gamma_k +/- i Omega_k`` by trust-region least squares.

    Each pair carries two independent complex amplitudes, so the real and
    imaginary parts of C are fitted jointly with shared decay and
    oscillation rates; the paired cosine/sine model is the special case
    ``c+ = (a + b)/2, c- = (a - b)/2``. Mirror terms whose amplitude vanishes
    are dropped, so at most ``2 m`` exponentials are returned.

    Parameters
    ----------
    init : ExponentialBath or ndarray, optional
        Starting point. An ExponentialBath with up to ``m`` terms seeds one
        pair per term with a zero mirror amplitude; an array is taken as the
        raw ``(m, 6)`` parameter block ``[Re c+, Im c+, Re c-, Im c-, gamma, Omega]``.
    bounds : dict, optional
        ``{"re": (lo, hi), "im": (lo, hi)}`` box on ``gamma`` and ``Omega``.

    Warns
    -----
    OptimizerNotConverged
        When the optimizer stops on its evaluation budget; the best point
        found is still returned with ``meta["converged"] = False``.
    """
    t_start = time.perf_counter()
    _check_signal(signal, m)
    t = signal.times
    y = signal.values
    bounds = bounds or {}
    re_lo, re_hi = bounds.get("re", (1e-12, np.inf))
    im_lo, im_hi = bounds.get("im", (0.0, np.inf))
    p0 = _cf_initial(signal, m, init, (re_lo, re_hi), (im_lo, im_hi))
    lo = np.tile([-np.inf] * 4 + [re_lo, im_lo], m)
    hi = np.tile([np.inf] * 4 + [re_hi, im_hi], m)
    p0 = np.clip(p0, lo, hi)

    def resid(p):
        r = _cf_model(p, t)[2] - y
        return np.concatenate([r.real, r.imag])

    def jac(p):
        cp, cm, _, _ = _cf_unpack(p)
        Ep, Em, _ = _cf_model(p, t)
        cols = np.empty((t.size, m, 6), dtype=complex)
        cols[:, :, 0] = Ep
        cols[:, :, 1] = 1j * Ep
        cols[:, :, 2] = Em
        cols[:, :, 3] = 1j * Em
        cols[:, :, 4] = -t[:, None] * (cp * Ep + cm * Em)
        cols[:, :, 5] = -1j * t[:, None] * (cp * Ep - cm * Em)
        J = cols.reshape(t.size, 6 * m)
        return np.vstack([J.real, J.imag])

    sol = optimize.least_squares(resid, p0, jac=jac, bounds=(lo, hi), method="trf",
                                 max_nfev=max_nfev, x_scale="jac")
    if sol.status == 0:
        warnings.warn("nlsq_cf hit its evaluation budget", OptimizerNotConverged, stacklevel=2)
    cp, cm, g, Om = _cf_unpack(sol.x)
    c = np.concatenate([cp, cm])
    nu = np.concatenate([g + 1j * Om, g - 1j * Om])
    meta = {"method": "nlsq_cf", "m": int(m), "converged": bool(sol.status > 0),
            "nfev": int(sol.nfev), **_signal_meta(signal)}
    return _finalize(c, nu, meta, t_start)


def _cf_initial(signal, m, init, re_b, im_b):
    if isinstance(init, ExponentialBath):
        if len(init) > m:
            raise ValueError("init has more terms than m")
        p = np.zeros((m, 6))
        for k, (ck, nk) in enumerate(zip(init.c, init.nu)):
            if nk.imag <= 0:
                p[k] = [ck.real, ck.imag, 0, 0, nk.real, -nk.imag]
            else:
                p[k] = [0, 0, ck.real, ck.imag, nk.real, nk.imag]
        # unused slots: slow, weak, spread-out rates
        span = signal.times[-1] - signal.times[0]
        for k in range(len(init), m):
            p[k] = [0, 0, 0, 0, (k + 1) / span, 0]
        return p.reshape(-1)
    if init is not None:
        return np.asarray(init, dtype=float).reshape(-1)
    # rates log-spread over the window, oscillations from the dominant FFT bins,
    # amplitudes by a linear least-squares solve at those rates
    span = signal.times[-1] - signal.times[0]
    g = np.geomspace(1.0 / span, 0.1 / signal.dt, m)
    g = np.clip(g, max(re_b[0], 1e-12), re_b[1])
    freqs = np.fft.fftfreq(signal.values.size, signal.dt) * 2 * np.pi
    spec = np.abs(np.fft.fft(signal.values))
    Om = np.abs(freqs[np.argsort(spec)[::-1][:m]])
    Om = np.clip(Om, im_b[0], im_b[1])
    t = signal.times
    E = np.hstack([np.exp(-(g + 1j * Om) * t[:, None]), np.exp(-(g - 1j * Om) * t[:, None])])
    a, *_ = linalg.lstsq(E, signal.values)
    p = np.column_stack([a[:m].real, a[:m].imag, a[m:].real, a[m:].imag, g, Om])
    return p.reshape(-1)


def _ps_model(p, w):
    p = p.reshape(-1, 4)
    a, b, c, d = p[:, 0], p[:, 1], p[:, 2], p[:, 3]
    x = w[:, None] - d[None, :]
    den = x**2 + c**2
    num = a * c - b * x
    return 2 * num / den, (a, b, c, d, x, den, num)


def nlsq_ps(omegas, values, m, init=None, max_nfev=2000, stage_nfev=200, c_min=None):
    """Fit the power spectrum with ``m`` Lorentzian terms.

    The model is ``S(w) = sum 2 (a c + b (d - w)) / ((w - d)^2 + c^2)``,
    corresponding to ``C_k(t) = (a + i b) exp(-(c + i d) t)`` with width
    ``c > 0``. Terms are added one at a time at the frequency of the largest
    residual and the whole set is re-optimised after each addition, so the
    least-squares objective never increases with ``m``.

    Parameters
    ----------
    init : ExponentialBath, optional
        Warm start; must have at most ``m`` terms.
    max_nfev : int
        Evaluation budget of the final refinement with all ``m`` terms.
    stage_nfev : int
        Budget of each intermediate refinement.
    c_min : float, optional
        Lower bound on the widths; defaults to the sample spacing so that no
        Lorentzian falls between grid points unseen.

    Warns
    -----
    OptimizerNotConverged
        When the final refinement stops on its evaluation budget.
    """
    t_start = time.perf_counter()
    w = np.asarray(omegas, dtype=float)
    S = np.asarray(values, dtype=float)
    if m < 1:
        raise ValueError("m must be >= 1")
    if w.size < 4 * m:
        raise TooFewSamples(f"{w.size} samples for {4 * m} parameters")
    dw = np.min(np.diff(np.sort(w)))
    span = w.max() - w.min()
    if c_min is None:
        c_min = float(np.max(np.diff(np.sort(w))))

    def resid(p):
        return _ps_model(p, w)[0].sum(axis=1) - S

    def jac(p):
        _, (a, b, c, d, x, den, num) = _ps_model(p, w)
        J = np.empty((w.size, a.size, 4))
        J[:, :, 0] = 2 * c / den
        J[:, :, 1] = -2 * x / den
        J[:, :, 2] = 2 * a / den - 4 * num * c / den**2
        J[:, :, 3] = 2 * b / den + 4 * num * x / den**2
        return J.reshape(w.size, -1)

    def refine(p, budget):
        k = p.size // 4
        # centres stay inside the sampled band: a Lorentzian parked outside it is
        # invisible to the fit but not to C(t)
        lo = np.tile([-np.inf, -np.inf, c_min, w.min()], k)
        hi = np.tile([np.inf, np.inf, np.inf, w.max()], k)
        sol = optimize.least_squares(resid, np.clip(p, lo, hi), jac=jac, bounds=(lo, hi),
                                     method="trf", max_nfev=budget, x_scale="jac")
        return sol.x, sol.status > 0, sol.nfev

    if isinstance(init, ExponentialBath):
        if len(init) > m:
            raise ValueError("init has more terms than m")
        p = np.column_stack([init.c.real, init.c.imag, init.nu.real, init.nu.imag]).reshape(-1)
    else:
        p = np.zeros(0)
    nfev = 0
    while p.size // 4 < m:
        r = -resid(p) if p.size else S
        j = int(np.argmax(np.abs(r)))
        width = max(10 * dw, 1e-3 * span, c_min)
        # least-squares amplitude of the new Lorentzian against the residual,
        # so adding it cannot raise the objective
        shape = _ps_model(np.array([1.0, 0.0, width, w[j]]), w)[0][:, 0]
        amp = float(shape @ r / (shape @ shape))
        p = np.concatenate([p, [amp, 0.0, width, w[j]]])
        if p.size // 4 < m:
            p, _, n = refine(p, stage_nfev)
            nfev += n
    p, converged, n = refine(p, max_nfev)
    nfev += n
    if not converged:
        warnings.warn("nlsq_ps hit its evaluation budget", OptimizerNotConverged, stacklevel=2)
    p = p.reshape(-1, 4)
    c = p[:, 0] + 1j * p[:, 1]
    nu = p[:, 2] + 1j * p[:, 3]
    meta = {"method": "nlsq_ps", "m": int(m), "converged": bool(converged), "nfev": int(nfev)}
    return _finalize(c, nu, meta, t_start)


# ---------------------------------------------------------------- evaluation

def reconstruct(eb, tau):
    """sum_k c_k exp(-nu_k |tau|), conjugated for negative tau."""
    tau = np.asarray(tau, dtype=float)
    at = np.abs(tau)
    out = np.exp(-np.multiply.outer(at, eb.nu)) @ eb.c if len(eb) else np.zeros(at.shape, complex)
    out = np.where(tau < 0, np.conj(out), out)
    return complex(out) if out.ndim == 0 else out


def effective_power_spectrum(eb, omega):
    """S_eff(w) = 2 Re sum_k c_k / (nu_k - i w)."""
    w = np.asarray(omega, dtype=float)
    if not len(eb):
        return np.zeros(w.shape) if w.ndim else 0.0
    out = 2 * (eb.c / (eb.nu - 1j * np.multiply.outer(w, np.ones_like(eb.nu)))).sum(axis=-1).real
    return float(out) if out.ndim == 0 else out


def detailed_balance_score(eb, beta, omegas):
    """max over |w| of |S_eff(w) / S_eff(-w) - exp(beta w)| / exp(beta w), for w > 0.

    Each frequency is scored by the orientation with the positive exponent,
    so the ratio always compares against a number >= 1.
    """
    w = np.abs(np.atleast_1d(np.asarray(omegas, dtype=float)))
    w = np.unique(w[w > 0])
    sp = effective_power_spectrum(eb, w)
    sm = effective_power_spectrum(eb, -w)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        target = np.exp(beta * w)
        score = np.abs(sp / sm - target) / target
    score = np.where(np.isfinite(score), score, np.inf)
    return float(np.max(score)) if score.size else 0.0


def report(bath, eb, t_grid, w_grid):
    """RMSE of the decomposition against the bath's quadrature C(t) and closed-form S(w)."""
    t_grid = np.asarray(t_grid, dtype=float)
    w_grid = np.asarray(w_grid, dtype=float)
    if t_grid.size == 0 or w_grid.size == 0:
        raise ValueError("grids must be non-empty")
    C = _bath.correlation_grid(bath, t_grid)
    S = _bath.power_spectrum(bath, w_grid)
    rmse_t = float(np.sqrt(np.mean(np.abs(reconstruct(eb, t_grid) - C) ** 2)))
    rmse_s = float(np.sqrt(np.mean((effective_power_spectrum(eb, w_grid) - S) ** 2)))
    return DecompositionReport(
        method=str(eb.meta.get("method", "unknown")), m=len(eb), rmse_time=rmse_t,
        rmse_ps=rmse_s, wall_time=float(eb.meta.get("wall_time", 0.0)),
    )


# ---------------------------------------------------------------- serialization

def _json_safe(meta):
    out = {}
    for k, v in meta.items():
        if isinstance(v, (np.floating, np.integer, np.bool_)):
            v = v.item()
        if isinstance(v, (str, int, float, bool)) or v is None:
            out[k] = v
    return out


def save_exponential_bath(eb, path):
    """Write one term per row (Re c, Im c, Re nu, Im nu) at 17 digits after a '#' JSON header."""
    lines = ["# " + json.dumps(_json_safe(eb.meta), sort_keys=True),
             "# re_c im_c re_nu im_nu"]
    for ck, nk in zip(eb.c, eb.nu):
        lines.append(" ".join(f"{x:.17g}" for x in (ck.real, ck.imag, nk.real, nk.imag)))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_exponential_bath(path):
    meta = {}
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                if i == 0:
                    meta = json.loads(s[1:])
                continue
            rows.append([float(x) for x in s.split()])
    data = np.array(rows, dtype=float).reshape(-1, 4)
    return ExponentialBath(data[:, 0] + 1j * data[:, 1], data[:, 2] + 1j * data[:, 3], meta)


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

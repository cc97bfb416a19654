"""Spectral densities, bath correlation functions and power spectra.

Conventions: hbar = k_B = 1, bosonic baths in thermal equilibrium, and

    C(tau) = 1/pi int_0^inf J(w) [coth(beta w / 2) cos(w tau) - i sin(w tau)] dw
    S(w)   = int e^{i w t} C(t) dt = sign(w) J(|w|) [coth(beta w / 2) + 1]

All model objects are frozen dataclasses so they can be hashed, cached and
shared between workers.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Union

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from ._quadrature import gk21
from .errors import (
    NegativeFrequency,
    OutOfTabulatedRange,
    QuadratureNotConverged,
    UndefinedAtZero,
)

__all__ = [
    "OhmicFamily",
    "UnderdampedBrownian",
    "StructuredFMO",
    "Tabulated",
    "BathSpec",
    "MEV_TO_CM",
    "load_fmo_modes",
    "eval_spectral_density",
    "correlation",
    "correlation_grid",
    "power_spectrum",
]

MEV_TO_CM = 8.065543937  # 1 meV in cm^-1


@dataclass(frozen=True)
class OhmicFamily:
    """J(w) = alpha w^s w_c^(1-s) exp(-w / w_c)."""

    alpha: float
    s: float
    omega_c: float

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        return self.alpha * w**self.s * self.omega_c ** (1 - self.s) * np.exp(-w / self.omega_c)

    def slope_at_zero(self):
        if self.s > 1:
            return 0.0
        if self.s == 1:
            return float(self.alpha)
        return math.inf

    def features(self):
        return (self.omega_c,)

    def scale(self):
        return self.omega_c

    def cutoff(self):
        # exp(-w/w_c) w^s falls below 1e-18 of its peak well before this
        return self.omega_c * (60.0 + 4 * self.s)


@dataclass(frozen=True)
class UnderdampedBrownian:
    """J(w) = alpha^2 Gamma w / ((w_0^2 - w^2)^2 + Gamma^2 w^2)."""

    alpha: float
    gamma_width: float
    omega_0: float

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        a2 = self.alpha**2
        return a2 * self.gamma_width * w / ((self.omega_0**2 - w**2) ** 2 + self.gamma_width**2 * w**2)

    def slope_at_zero(self):
        return self.alpha**2 * self.gamma_width / self.omega_0**4

    def features(self):
        return (self.omega_0,)

    def scale(self):
        return max(self.omega_0, self.gamma_width)

    def cutoff(self):
        return 200.0 * self.scale()


@dataclass(frozen=True)
class StructuredFMO:
    """Adolphs-Renger continuum plus Lorentzian-broadened intramolecular modes.

    ``ar_params`` is ``(S, s1, s2, omega_1, omega_2)`` and ``modes`` a tuple of
    ``(omega_k, s_k, gamma_k)``. All frequencies share one unit (cm^-1 for the
    bundled data).
    """

    ar_params: tuple
    modes: tuple
    rescale_g: float = 1.0

    @classmethod
    def bundled(cls, rescale_g=1 / 15, gamma_k=5.0):
        """The FMO phonon spectral density in cm^-1, with every mode width set to ``gamma_k``."""
        omega_k, s_k = load_fmo_modes()
        modes = tuple((float(w), float(s), float(gamma_k)) for w, s in zip(omega_k, s_k))
        ar = (0.29, 0.8, 0.5, 0.069 * MEV_TO_CM, 0.24 * MEV_TO_CM)
        return cls(ar_params=ar, modes=modes, rescale_g=float(rescale_g))

    def _arrays(self):
        m = np.array(self.modes, dtype=float).reshape(-1, 3)
        return m[:, 0], m[:, 1], m[:, 2]

    def adolphs_renger(self, w):
        S, s1, s2, w1, w2 = self.ar_params
        w = np.asarray(w, dtype=float)
        out = np.zeros_like(w)
        for si, wi in ((s1, w1), (s2, w2)):
            out = out + si / (5040.0 * 2 * wi**4) * w**5 * np.exp(-np.sqrt(w / wi))
        return S / (s1 + s2) * out

    def vibrational(self, w):
        wk, sk, gk = self._arrays()
        w = np.asarray(w, dtype=float)
        if w.size * wk.size <= 1_000_000:
            x = w[..., None]
            num = 4 * wk * sk * gk * (wk**2 + gk**2) * x
            den = np.pi * ((x + wk) ** 2 + gk**2) * ((x - wk) ** 2 + gk**2)
            return np.sum(num / den, axis=-1)
        out = np.zeros_like(w)
        # large inputs: accumulate mode by mode to keep memory at the size of w
        for a, s, g in zip(wk, sk, gk):
            out += 4 * a * s * g * (a**2 + g**2) * w / (np.pi * ((w + a) ** 2 + g**2) * ((w - a) ** 2 + g**2))
        return out

    def __call__(self, w):
        return self.rescale_g * (self.adolphs_renger(w) + self.vibrational(w))

    def slope_at_zero(self):
        wk, sk, gk = self._arrays()
        return self.rescale_g * float(np.sum(4 * wk * sk * gk / (np.pi * (wk**2 + gk**2))))

    def features(self):
        wk, _, _ = self._arrays()
        w1, w2 = self.ar_params[3:]
        return tuple(sorted(set(wk.tolist()) | {100 * w1, 100 * w2}))

    def scale(self):
        wk, _, _ = self._arrays()
        return float(wk.max())

    def cutoff(self):
        return 4.0 * self.scale()


@dataclass(frozen=True)
class Tabulated:
    """Sampled J(w), interpolated with a monotone cubic and zero outside the samples."""

    omegas: tuple
    values: tuple
    _interp: object = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        w = np.asarray(self.omegas, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if w.ndim != 1 or w.shape != v.shape or w.size < 2:
            raise ValueError("omegas and values must be 1-D of equal length >= 2")
        if np.any(np.diff(w) <= 0) or w[0] < 0:
            raise ValueError("omegas must be strictly increasing and non-negative")
        if np.any(v < 0):
            raise ValueError("tabulated J must be non-negative")
        object.__setattr__(self, "_interp", PchipInterpolator(w, v, extrapolate=False))

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        out = self._interp(w)
        return np.where(np.isnan(out), 0.0, out)

    def slope_at_zero(self):
        if self.omegas[0] > 0:
            return 0.0
        return float(self._interp.derivative()(0.0))

    def features(self):
        return ()

    def scale(self):
        return float(self.omegas[-1])

    def cutoff(self):
        return float(self.omegas[-1])


SpectralDensityModel = Union[OhmicFamily, UnderdampedBrownian, StructuredFMO, Tabulated]


@dataclass(frozen=True)
class BathSpec:
    """A spectral density together with an inverse temperature (``math.inf`` for T = 0)."""

    model: SpectralDensityModel
    beta: float

    def __post_init__(self):
        if not (self.beta > 0):
            raise ValueError(f"beta must be positive or inf, got {self.beta}")

    @property
    def temperature(self):
        return 0.0 if math.isinf(self.beta) else 1.0 / self.beta


def load_fmo_modes():
    """Return ``(omega_k, s_k)`` arrays from the bundled 62-row table."""
    text = resources.files("openbath").joinpath("data/fmo_modes.txt").read_text()
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if len(rows) != 62:
        raise ValueError(f"FMO table must have 62 rows, found {len(rows)}")
    data = np.array(rows, dtype=float)
    return data[:, 0], data[:, 1]


def eval_spectral_density(model, omega):
    """Evaluate J(omega) for ``omega >= 0``.

    Raises
    ------
    NegativeFrequency
        For any negative input frequency.
    OutOfTabulatedRange
        For a :class:`Tabulated` model queried outside its sample range.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise NegativeFrequency(f"J(w) is defined for w >= 0, got {omega}")
    if isinstance(model, Tabulated) and (np.any(w < model.omegas[0]) or np.any(w > model.omegas[-1])):
        raise OutOfTabulatedRange(f"{omega} outside [{model.omegas[0]}, {model.omegas[-1]}]")
    out = model(w)
    return float(out) if out.ndim == 0 else out


def _thermal_weight(bath, w):
    """J(w) coth(beta w / 2) with the finite w -> 0 limit filled in."""
    w = np.asarray(w, dtype=float)
    J = bath.model(w)
    if math.isinf(bath.beta):
        return J
    with np.errstate(divide="ignore", invalid="ignore"):
        out = J / np.tanh(0.5 * bath.beta * w)
    zero = w == 0
    if np.any(zero):
        slope = bath.model.slope_at_zero()
        out = np.where(zero, 2 * slope / bath.beta if np.isfinite(slope) else 0.0, out)
    return out


def _breakpoints(bath):
    model = bath.model
    W = model.cutoff()
    pts = [p for p in model.features() if 0 < p < W]
    if not math.isinf(bath.beta):
        # thermal structure lives below a few k_B T
        pts += [t for t in (1 / bath.beta, 10 / bath.beta) if 0 < t < W]
    return W, sorted(set(pts))


def _tail(bath, tau, part, W, epsabs):
    """Integral over [W, inf) of the real (part=0) or imaginary (part=1) integrand."""
    if isinstance(bath.model, Tabulated):
        return 0.0, 0.0
    if part == 0:
        f = lambda w: float(_thermal_weight(bath, w))
        weight = "cos"
    else:
        f = lambda w: float(bath.model(w))
        weight = "sin"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if tau == 0:
            if part == 1:
                return 0.0, 0.0
            val, err = integrate.quad(f, W, np.inf, epsabs=epsabs, epsrel=1e-12, limit=400)
        else:
            val, err = integrate.quad(f, W, np.inf, weight=weight, wvar=abs(tau), epsabs=epsabs, limlst=200)
    if part == 1 and tau < 0:
        val = -val
    return val, err


def _n_panels(W, tau_max):
    # the fastest oscillation needs a couple of GK21 panels per period
    return int(min(50000, max(16, 2 * W * tau_max / np.pi)))


def _tau_chunks(taus, W, budget=2_000_000):
    """Blocks of indices sorted by |tau|, at most 32 long and within a memory budget."""
    order = np.argsort(np.abs(taus), kind="stable")
    start = 0
    while start < order.size:
        stop = start + 1
        while stop < order.size and stop - start < 32:
            n = _n_panels(W, abs(taus[order[stop]]))
            if 42 * n * (stop + 1 - start) > budget:
                break
            stop += 1
        yield order[start:stop]
        start = stop


def correlation_grid(bath, taus, epsabs=1e-12, epsrel=1e-10):
    """C(tau) on an array of times by adaptive 21-point Gauss-Kronrod quadrature.

    The bulk ``[0, W]`` is integrated panel-wise, vectorised over blocks of
    ``taus``; the algebraic tail beyond the model cutoff ``W`` goes through
    QUADPACK's Fourier-integral routine.

    Raises
    ------
    QuadratureNotConverged
        If the combined error estimate exceeds ``epsabs + epsrel * max|C|``.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    if not np.all(np.isfinite(taus)):
        raise ValueError("tau must be finite")
    W, pts = _breakpoints(bath)
    re = np.empty(taus.size)
    im = np.empty(taus.size)
    err = 0.0
    ok = True
    for chunk in _tau_chunks(taus, W):
        abs_t = np.abs(taus[chunk])

        def integrand(w, abs_t=abs_t):
            phase = w[..., None] * abs_t
            out = np.empty(w.shape + (2 * abs_t.size,))
            out[..., : abs_t.size] = _thermal_weight(bath, w)[..., None] * np.cos(phase)
            out[..., abs_t.size :] = bath.model(w)[..., None] * np.sin(phase)
            return out

        n_panels = _n_panels(W, abs_t.max())
        edges = np.unique(np.concatenate([np.linspace(0, W, n_panels + 1), pts]))
        res, e, conv = gk21(integrand, edges, epsabs=epsabs, epsrel=epsrel)
        re[chunk] = res[: abs_t.size]
        im[chunk] = res[abs_t.size :]
        err = max(err, e)
        ok = ok and conv
    tail_err = 0.0
    for k, t in enumerate(taus):
        v, e = _tail(bath, t, 0, W, epsabs)
        re[k] += v
        tail_err = max(tail_err, e)
        v, e = _tail(bath, abs(t), 1, W, epsabs)
        im[k] += v
        tail_err = max(tail_err, e)
    im = np.where(taus < 0, -im, im)
    C = (re - 1j * im) / np.pi
    total_err = (err + tail_err) / np.pi
    scale = np.max(np.abs(C)) if C.size else 0.0
    if not ok and total_err > 10 * (epsabs + epsrel * scale):
        raise QuadratureNotConverged("correlation quadrature did not converge", total_err)
    return C


@lru_cache(maxsize=65536)
def _correlation_cached(bath, tau, epsabs, epsrel):
    return complex(correlation_grid(bath, [tau], epsabs, epsrel)[0])


def correlation(bath, tau, epsabs=1e-12, epsrel=1e-10):
    """Bath correlation function C(tau) for a single time.

    For ``tau < 0`` the result is ``conj(correlation(bath, -tau))`` exactly.
    Values are memoised per ``(bath, tau)``.
    """
    tau = float(tau)
    if tau < 0:
        return _correlation_cached(bath, -tau, epsabs, epsrel).conjugate()
    return _correlation_cached(bath, tau, epsabs, epsrel)


def power_spectrum(bath, omega):
    """S(omega) = sign(w) J(|w|) [coth(beta w / 2) + 1].

    Written with ``expm1`` so that S(w) = exp(beta w) S(-w) holds to rounding.

    Raises
    ------
    UndefinedAtZero
        At ``omega == 0`` when J'(0) is infinite.
    """
    w = np.asarray(omega, dtype=float)
    scalar = w.ndim == 0
    w = np.atleast_1d(w)
    aw = np.abs(w)
    J = bath.model(aw)
    beta = bath.beta
    out = np.zeros_like(w)
    pos = w > 0
    neg = w < 0
    if math.isinf(beta):
        out[pos] = 2 * J[pos]
    else:
        out[pos] = 2 * J[pos] / -np.expm1(-beta * w[pos])
        with np.errstate(over="ignore"):
            out[neg] = 2 * J[neg] / np.expm1(beta * aw[neg])
    zero = w == 0
    if np.any(zero):
        slope = bath.model.slope_at_zero()
        if not np.isfinite(slope):
            raise UndefinedAtZero("S(0) diverges for this spectral density")
        out[zero] = 0.0 if math.isinf(beta) else 2 * slope / beta
    return float(out[0]) if scalar else out

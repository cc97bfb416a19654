"""Heat currents and state-comparison metrics.

Sign convention: a positive current ``J_k = Tr[H_S D_k(rho)]`` is energy
flowing from bath k into the system. ``H_S`` is time independent, so the
total current is the full rate of change of the system energy.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import dynamics as _dyn
from .errors import FiniteDifferenceUnstable, NonPositiveInput

__all__ = [
    "HeatRecord",
    "heat_current",
    "heat_from_parts",
    "cumulant_heat",
    "fidelity",
    "trace_distance",
    "write_heat_csv",
]

CLIP_TOL = 1e-7  # silently clipped below this magnitude
ERROR_TOL = 1e-6  # clipped with a warning up to this, rejected beyond


@dataclass(eq=False)
class HeatRecord:
    """Per-bath currents on a time grid; ``total`` is their sum at each time."""

    times: np.ndarray
    per_bath_currents: dict
    total: np.ndarray
    lamb_shift_included: bool
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_currents(cls, times, currents, lamb_shift_included, meta=None):
        currents = {k: np.asarray(v, dtype=float) for k, v in currents.items()}
        total = np.zeros(np.asarray(times).shape)
        for v in currents.values():
            total = total + v
        return cls(np.asarray(times, dtype=float), currents, total, bool(lamb_shift_included), dict(meta or {}))


def heat_current(h_s, dissipator_k, rho):
    """Re Tr[H_S D_k(rho)] for one bath's part of the generator."""
    return float(np.real(np.trace(np.asarray(h_s) @ dissipator_k.apply(rho))))


def _labels(sys):
    return [c.label or f"bath{k}" for k, c in enumerate(sys.couplings)]


def heat_from_parts(sys, parts_fn, result, lamb_shift=True, meta=None):
    """Currents of a generator-based method along its own trajectory.

    ``parts_fn(t)`` returns the :class:`~openbath.dynamics.GeneratorParts`
    in the Schrodinger picture; a constant GeneratorParts is accepted too.
    """
    if isinstance(parts_fn, _dyn.GeneratorParts):
        const = parts_fn
        parts_fn = lambda t: const
    labels = _labels(sys)
    cur = {l: np.empty(result.times.size) for l in labels}
    for j, (t, rho) in enumerate(zip(result.times, result.states)):
        parts = parts_fn(t)
        for k, l in enumerate(labels):
            cur[l][j] = heat_current(sys.h_s, parts.bath(k, lamb_shift), rho)
    return HeatRecord.from_currents(result.times, cur, lamb_shift, meta)


def _fd_derivatives(sys, decs, ebs, rho0, t, h, backend):
    """d/dt of Tr[H exp(K_t) rho0] per bath, differentiating one bath's exponent at a time."""
    base = _dyn.cumulant_parts(sys, decs, ebs, t, backend)
    H = sys.h_s
    v0 = _dyn.vec(rho0)
    d = sys.dim
    out = []
    for k in range(len(sys.couplings)):
        rest = base.total() - base.bath(k)

        def energy(s):
            # even extension K_{-s} := K_s, exact to O(s^3) since K_s = O(s^2)
            part = _dyn.cumulant_parts(sys, decs, ebs, abs(s), backend).bath(k)
            r = _dyn.unvec(linalg.expm((rest + part).matrix) @ v0, d)
            return float(np.real(np.trace(H @ r)))

        out.append((energy(t + h) - energy(t - h)) / (2 * h))
    return np.array(out)


def cumulant_heat(sys, decomps, rate_sources, result, mode="redfield_surrogate", lamb_shift=True,
                  h=None, fd_tol=1e-2, backend=None):
    """Bath-resolved currents for states produced by the cumulant map.

    Parameters
    ----------
    result : SimulationResult
        Output of ``propagate_map`` in the Schrodinger picture; ``states[0]``
        must be the state at ``times[0] = 0``.
    mode : {"redfield_surrogate", "finite_difference"}
        The surrogate applies the time-dependent Redfield bath parts to the
        cumulant states. The finite-difference route differentiates
        ``Tr[H exp(K_t) rho0]`` with central differences, varying one bath's
        exponent at a time so that the currents add up to the total.
    h : float, optional
        Finite-difference step, default ``1e-4 * times[-1]``.
    fd_tol : float
        Steps h and 2h must agree to ``fd_tol * max|J|``.

    Raises
    ------
    FiniteDifferenceUnstable
        When the two step sizes disagree beyond ``fd_tol``.
    """
    decs = _dyn._decomps(sys, decomps)
    ebs = _dyn._sources(sys, rate_sources)
    labels = _labels(sys)
    start = time.perf_counter()
    if mode == "redfield_surrogate":
        rec = heat_from_parts(sys, lambda t: _dyn.redfield_parts(sys, decs, ebs, t, backend=backend),
                              result, lamb_shift)
        rec.meta.update(method="cumulant", mode=mode, wall_time=time.perf_counter() - start)
        return rec
    if mode != "finite_difference":
        raise ValueError(f"unknown mode {mode!r}")
    if result.times[0] != 0:
        raise ValueError("finite differences need the initial state at t = 0")
    rho0 = result.states[0]
    h = h if h is not None else 1e-4 * max(float(result.times[-1]), 1.0)
    J1 = np.array([_fd_derivatives(sys, decs, ebs, rho0, t, h, backend) for t in result.times])
    J2 = np.array([_fd_derivatives(sys, decs, ebs, rho0, t, 2 * h, backend) for t in result.times])
    scale = max(np.max(np.abs(J1)), 1e-300)
    err = np.max(np.abs(J1 - J2)) / 3
    if err > fd_tol * scale:
        raise FiniteDifferenceUnstable(
            f"finite-difference heat unstable: steps h and 2h differ by {err:.3g} (scale {scale:.3g})")
    J = (4 * J1 - J2) / 3
    cur = {l: J[:, k] for k, l in enumerate(labels)}
    return HeatRecord.from_currents(result.times, cur, True,
                                    dict(method="cumulant", mode=mode, h=h, fd_error=float(err),
                                         wall_time=time.perf_counter() - start))


def _psd(rho, name):
    rho = np.asarray(rho, dtype=complex)
    rho = 0.5 * (rho + rho.conj().T)
    w, V = np.linalg.eigh(rho)
    if w.min() < -ERROR_TOL:
        raise NonPositiveInput(f"{name} has eigenvalue {w.min():.3g}")
    if w.min() < 0:
        if w.min() < -CLIP_TOL:
            warnings.warn(f"{name}: clipping eigenvalue {w.min():.3g}", RuntimeWarning, stacklevel=3)
        w = np.clip(w, 0, None)
    return w, V


def fidelity(rho, sigma):
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2, in [0, 1].

    Raises
    ------
    NonPositiveInput
        If an eigenvalue is below ``-1e-6``; smaller negative parts are clipped.
    """
    w, V = _psd(rho, "rho")
    ws, Vs = _psd(sigma, "sigma")
    sr = (V * np.sqrt(w)) @ V.conj().T
    s = (Vs * ws) @ Vs.conj().T
    m = sr @ s @ sr
    ev = np.clip(np.linalg.eigvalsh(0.5 * (m + m.conj().T)), 0, None)
    return float(min(1.0, np.sum(np.sqrt(ev)) ** 2))


def trace_distance(rho, sigma):
    """1/2 ||rho - sigma||_1, in [0, 1]."""
    _psd(rho, "rho")
    _psd(sigma, "sigma")
    d = np.asarray(rho, dtype=complex) - np.asarray(sigma, dtype=complex)
    ev = np.linalg.eigvalsh(0.5 * (d + d.conj().T))
    return float(min(1.0, 0.5 * np.sum(np.abs(ev))))


def write_heat_csv(record, path, meta=None):
    """Columns t, J_<bath>..., J_total with a JSON metadata line."""
    from .io import write_csv

    labels = list(record.per_bath_currents)
    header = ["t [1/energy]"] + [f"J_{l} [energy^2]" for l in labels] + ["J_total [energy^2]"]
    rows = [[t] + [record.per_bath_currents[l][j] for l in labels] + [record.total[j]]
            for j, t in enumerate(record.times)]
    m = {**record.meta, "lamb_shift": record.lamb_shift_included,
         "sign": "J > 0 is energy flowing from the bath into the system"}
    m.update(meta or {})
    m.pop("wall_time", None)
    write_csv(path, header, rows, m)

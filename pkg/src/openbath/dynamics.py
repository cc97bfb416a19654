"""Jump operators, master-equation generators, maps and propagation.

Vectorization is column-stacking, ``vec(rho)[a + d * b] = rho[a, b]``, so that
``vec(A X B) = kron(B.T, A) @ vec(X)``. Superoperator matrices, CSV dumps and
Choi matrices all follow this convention.

Generators come in two flavours: the plain :class:`Superoperator` used for
propagation and :class:`GeneratorParts`, which keeps the Hamiltonian term and
the per-bath dissipators and Lamb-shift terms apart for heat bookkeeping.

The RWA two-level routines work in the frame of ``H = w0 |e><e|`` with basis
index 0 the excited state, ``sigma_z = diag(1, -1)`` and
``sigma_- = |g><e|``.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import integrate, linalg
from scipy.interpolate import CubicSpline

from . import _backend
from . import rates as _rates
from .bath import BathSpec
from .errors import NonFiniteState, StepSizeUnderflow
from .expfit import ExponentialBath

__all__ = [
    "Coupling",
    "SystemSpec",
    "BohrDecomposition",
    "Superoperator",
    "GeneratorParts",
    "SimulationResult",
    "vec",
    "unvec",
    "bohr_decompose",
    "redfield_parts",
    "build_redfield_generator",
    "cumulant_parts",
    "build_cumulant_exponent",
    "CumulantExponents",
    "gkls_global_parts",
    "build_gkls_global",
    "LocalSpec",
    "gkls_local_parts",
    "build_gkls_local",
    "steady_state",
    "propagate",
    "propagate_map",
    "volterra_solve",
    "volterra_trapezoid",
    "tcl_exact_rates",
    "ExactTCLRates",
    "tcl_rwa_rates",
    "tcl4_oracle",
    "build_tcl_rwa_generator",
    "SIGMA_Z",
    "SIGMA_MINUS",
    "SIGMA_PLUS",
    "SIGMA_X",
]

HERMITICITY_TOL = 1e-12

SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()
SIGMA_X = SIGMA_MINUS + SIGMA_PLUS


def vec(rho):
    return np.asarray(rho, dtype=complex).reshape(-1, order="F")


def unvec(v, d=None):
    v = np.asarray(v)
    d = d or math.isqrt(v.size)
    return v.reshape(d, d, order="F")


def _check_hermitian(m, name):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    scale = max(np.linalg.norm(m), 1.0)
    if np.linalg.norm(m - m.conj().T) > HERMITICITY_TOL * scale:
        raise ValueError(f"{name} is not Hermitian")
    return m


# ---------------------------------------------------------------- systems

@dataclass(frozen=True, eq=False)
class Coupling:
    """System operator ``q`` coupled to one bath.

    ``bath`` is either a :class:`~openbath.bath.BathSpec` (it must be
    decomposed before rates can be computed) or an
    :class:`~openbath.expfit.ExponentialBath`.
    """

    q: np.ndarray
    bath: Union[BathSpec, ExponentialBath, None] = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "q", _check_hermitian(self.q, "coupling operator"))


@dataclass(frozen=True, eq=False)
class SystemSpec:
    h_s: np.ndarray
    couplings: tuple = ()

    def __post_init__(self):
        h = _check_hermitian(self.h_s, "h_s")
        cs = tuple(c if isinstance(c, Coupling) else Coupling(*c) for c in self.couplings)
        for c in cs:
            if c.q.shape != h.shape:
                raise ValueError("coupling operator and h_s have different shapes")
        object.__setattr__(self, "h_s", h)
        object.__setattr__(self, "couplings", cs)

    @property
    def dim(self):
        return self.h_s.shape[0]


@dataclass(frozen=True, eq=False)
class BohrDecomposition:
    """``q = sum_w A(w)`` with ``[H, A(w)] = -w A(w)``; ``ops[i]`` belongs to ``freqs[i]``."""

    freqs: np.ndarray
    ops: np.ndarray
    degeneracy_tol: float

    @property
    def jumps(self):
        return {float(w): a for w, a in zip(self.freqs, self.ops)}

    def __len__(self):
        return self.freqs.size


def _cluster(values, tol):
    """Labels grouping sorted values whose consecutive gaps are <= tol."""
    order = np.argsort(values, kind="stable")
    labels = np.empty(values.size, dtype=int)
    lab = 0
    prev = None
    for i in order:
        if prev is not None and values[i] - prev > tol:
            lab += 1
        labels[i] = lab
        prev = values[i]
    return labels


def bohr_decompose(sys, coupling_index=0, tol=None, h=None):
    """Eigenoperator decomposition of one coupling operator.

    Parameters
    ----------
    sys : SystemSpec
    coupling_index : int
    tol : float, optional
        Binning tolerance for energies and Bohr frequencies; default
        ``1e-9 * max(||H||, 1)``.
    h : array, optional
        Hamiltonian to decompose against instead of ``sys.h_s`` (used for
        local dissipators).

    Returns
    -------
    BohrDecomposition
        Distinct frequencies in increasing order, zero jump operators dropped.
    """
    H = sys.h_s if h is None else _check_hermitian(h, "h")
    q = sys.couplings[coupling_index].q
    if tol is None:
        tol = 1e-9 * max(np.linalg.norm(H, 2), 1.0)
    E, V = np.linalg.eigh(H)
    # snap degenerate levels to a common energy before forming differences
    elab = _cluster(E, tol)
    Eb = np.array([E[elab == l].mean() for l in elab])
    qe = V.conj().T @ q @ V
    diff = Eb[None, :] - Eb[:, None]  # diff[i, j] = E_j - E_i: |i><j| lowers energy by diff
    flat = diff.reshape(-1)
    lab = _cluster(flat, tol)
    freqs, ops = [], []
    qnorm = max(np.linalg.norm(q), 1.0)
    for l in np.unique(lab):
        mask = (lab == l).reshape(diff.shape)
        a = V @ np.where(mask, qe, 0) @ V.conj().T
        if np.linalg.norm(a) <= 1e-14 * qnorm:
            continue
        freqs.append(flat[lab == l].mean())
        ops.append(a)
    d = H.shape[0]
    freqs = np.array(freqs, dtype=float)
    ops = np.array(ops, dtype=complex).reshape(-1, d, d)
    order = np.argsort(freqs)
    return BohrDecomposition(freqs[order], ops[order], float(tol))


# ---------------------------------------------------------------- superoperators

@dataclass(frozen=True, eq=False)
class Superoperator:
    """A linear map on d x d matrices acting on column-stacked ``vec(rho)``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n = math.isqrt(m.shape[0])
        if m.ndim != 2 or m.shape[0] != m.shape[1] or n * n != m.shape[0]:
            raise ValueError("superoperator matrix must be d^2 x d^2")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self):
        return math.isqrt(self.matrix.shape[0])

    @classmethod
    def zero(cls, d):
        return cls(np.zeros((d * d, d * d), dtype=complex))

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d * d, dtype=complex))

    def apply(self, rho):
        return unvec(self.matrix @ vec(rho), self.dim)

    def __add__(self, other):
        return Superoperator(self.matrix + other.matrix)

    def __sub__(self, other):
        return Superoperator(self.matrix - other.matrix)

    def __mul__(self, s):
        return Superoperator(self.matrix * s)

    __rmul__ = __mul__

    def exp(self):
        """Matrix exponential (scaling and squaring with Pade)."""
        return Superoperator(linalg.expm(self.matrix))

    def choi(self):
        """Choi matrix sum_ij |i><j| (x) Phi(|i><j|), Hermitian PSD iff the map is CP."""
        d = self.dim
        T = self.matrix.reshape(d, d, d, d)  # [b, a, e, c]: rho[c, e] -> out[a, b]
        return T.transpose(3, 1, 2, 0).reshape(d * d, d * d)


def commutator_super(h):
    """-i [h, .]"""
    d = h.shape[0]
    I = np.eye(d)
    return Superoperator(-1j * (np.kron(I, h) - np.kron(h.T, I)))


def _anticomm(m):
    d = m.shape[0]
    I = np.eye(d)
    return np.kron(I, m) + np.kron(m.T, I)


def _dissipator(G, A):
    """sum_ab G_ab (A_b . A_a^dag - 1/2 {A_a^dag A_b, .})."""
    d = A.shape[-1]
    if A.shape[0] == 0:
        return Superoperator.zero(d)
    jump = np.einsum("ab,axy,buv->xuyv", G, A.conj(), A).reshape(d * d, d * d)
    M = np.einsum("ab,ayx,byz->xz", G, A.conj(), A)
    return Superoperator(jump - 0.5 * _anticomm(M))


def _lamb_operator(X, A):
    """H_LS = sum_ab X_ab A_a^dag A_b."""
    d = A.shape[-1]
    if A.shape[0] == 0:
        return np.zeros((d, d), dtype=complex)
    return np.einsum("ab,ayx,byz->xz", X, A.conj(), A)


@dataclass(frozen=True, eq=False)
class GeneratorParts:
    """``L = hamiltonian + sum_k (dissipators[k] + lamb_shifts[k])``."""

    hamiltonian: Superoperator
    dissipators: tuple
    lamb_shifts: tuple
    lamb_operators: tuple = ()

    def bath(self, k, lamb_shift=True):
        out = self.dissipators[k]
        return out + self.lamb_shifts[k] if lamb_shift else out

    def total(self, lamb_shift=True):
        out = self.hamiltonian
        for k in range(len(self.dissipators)):
            out = out + self.bath(k, lamb_shift)
        return out


def _decomps(sys, decomps):
    if decomps is None:
        return [bohr_decompose(sys, k) for k in range(len(sys.couplings))]
    if len(decomps) != len(sys.couplings):
        raise ValueError("one decomposition per coupling is required")
    return list(decomps)


def _sources(sys, rate_sources):
    if rate_sources is None:
        rate_sources = [c.bath for c in sys.couplings]
    rate_sources = list(rate_sources)
    if len(rate_sources) != len(sys.couplings):
        raise ValueError("one rate source per coupling is required")
    for k, eb in enumerate(rate_sources):
        if not isinstance(eb, ExponentialBath):
            raise TypeError(f"coupling {k}: rates need an ExponentialBath, got {type(eb).__name__}; "
                            "decompose the bath first")
    return rate_sources


def _assemble(hpart, coeffs, decs):
    diss, ls, lops = [], [], []
    for (G, X), dec in zip(coeffs, decs):
        diss.append(_dissipator(G, dec.ops))
        h_ls = _lamb_operator(X, dec.ops)
        lops.append(h_ls)
        ls.append(commutator_super(h_ls))
    return GeneratorParts(hpart, tuple(diss), tuple(ls), tuple(lops))


# ---------------------------------------------------------------- Redfield / TCL2

def redfield_parts(sys, decomps, rate_sources, t, interaction_picture=False, backend=None):
    """Time-dependent Redfield generator at time ``t`` split per bath.

    In the Schrodinger picture (default) the coefficient phases
    ``exp(i (w - w') t)`` cancel against the rotating jump operators and the
    term ``-i [H_S, .]`` is added. ``t = inf`` gives the Bloch-Redfield
    generator.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    decs = _decomps(sys, decomps)
    ebs = _sources(sys, rate_sources)
    coeffs = []
    for dec, eb in zip(decs, ebs):
        if len(dec) == 0:
            coeffs.append((np.zeros((0, 0)), np.zeros((0, 0))))
            continue
        g = np.atleast_1d(_rates.gamma_redfield(eb, dec.freqs, t, backend=backend))
        gb = g[None, :]
        ga = np.conj(g)[:, None]
        S = (gb - ga) / 2j
        gam = gb + ga
        if interaction_picture and np.isfinite(t):
            phase = np.exp(1j * (dec.freqs[:, None] - dec.freqs[None, :]) * t)
            S, gam = phase * S, phase * gam
        coeffs.append((gam, S))
    d = sys.dim
    hpart = Superoperator.zero(d) if interaction_picture else commutator_super(sys.h_s)
    return _assemble(hpart, coeffs, decs)


def build_redfield_generator(sys, decomps, rate_sources, t, lamb_shift=True,
                             interaction_picture=False, backend=None):
    """Redfield (TCL2) generator at time ``t`` as one :class:`Superoperator`."""
    return redfield_parts(sys, decomps, rate_sources, t, interaction_picture, backend).total(lamb_shift)


# ---------------------------------------------------------------- cumulant

def cumulant_parts(sys, decomps, rate_sources, t, backend=None, tables=None, index=None):
    """Cumulant exponent K_t split per bath (interaction picture, no Hamiltonian part)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    decs = _decomps(sys, decomps)
    ebs = _sources(sys, rate_sources)
    coeffs = []
    for k, (dec, eb) in enumerate(zip(decs, ebs)):
        if len(dec) == 0:
            coeffs.append((np.zeros((0, 0)), np.zeros((0, 0))))
            continue
        if tables is not None:
            tab = tables[k]
            coeffs.append((tab.gamma[index], tab.xi[index]))
            continue
        tab = _rates.cumulant_table(eb, dec.freqs, [t], backend=backend)
        coeffs.append((tab.gamma[0], tab.xi[0]))
    return _assemble(Superoperator.zero(sys.dim), coeffs, decs)


def build_cumulant_exponent(sys, decomps, rate_sources, t, backend=None):
    """K_t of the cumulant map ``rho_I(t) = exp(K_t) rho(0)``."""
    return cumulant_parts(sys, decomps, rate_sources, t, backend).total()


class CumulantExponents:
    """K_t on a fixed time grid from rate tables computed once per bath.

    Calling the object with a time on the grid returns the tabulated exponent;
    any other time is computed on demand.
    """

    def __init__(self, sys, decomps, rate_sources, t_grid, backend=None):
        self.sys = sys
        self.decomps = _decomps(sys, decomps)
        self.rate_sources = _sources(sys, rate_sources)
        self.t_grid = np.asarray(t_grid, dtype=float)
        self.backend = backend
        self.tables = [
            _rates.cumulant_table(eb, dec.freqs, self.t_grid, backend=backend) if len(dec) else None
            for dec, eb in zip(self.decomps, self.rate_sources)
        ]
        self._index = {float(t): j for j, t in enumerate(self.t_grid)}

    def parts(self, t):
        j = self._index.get(float(t))
        if j is None:
            return cumulant_parts(self.sys, self.decomps, self.rate_sources, t, self.backend)
        return cumulant_parts(self.sys, self.decomps, self.rate_sources, t,
                              tables=self.tables, index=j)

    def __call__(self, t):
        return self.parts(t).total()


# ---------------------------------------------------------------- GKLS

def gkls_global_parts(sys, decomps, rate_sources):
    """Global GKLS generator: one dissipator per Bohr frequency with gamma(w), S_ls(w)."""
    decs = _decomps(sys, decomps)
    ebs = _sources(sys, rate_sources)
    coeffs = []
    for dec, eb in zip(decs, ebs):
        g, s = _rates.gkls_rates(eb, dec.freqs)
        coeffs.append((np.diag(np.atleast_1d(g)).astype(complex), np.diag(np.atleast_1d(s)).astype(complex)))
    return _assemble(commutator_super(sys.h_s), coeffs, decs)


def build_gkls_global(sys, decomps, rate_sources, lamb_shift=True):
    return gkls_global_parts(sys, decomps, rate_sources).total(lamb_shift)


@dataclass(frozen=True, eq=False)
class LocalSpec:
    """Local dissipator data for one coupling: the bare subsystem Hamiltonian
    embedded in the full space, against which ``q`` is decomposed."""

    h_local: np.ndarray
    coupling_index: int

    def __post_init__(self):
        object.__setattr__(self, "h_local", _check_hermitian(self.h_local, "h_local"))


def gkls_local_parts(sys, local_specs, rate_sources=None, tol=None):
    """Local GKLS: each coupling's jumps come from its own subsystem Hamiltonian.

    Inter-site coupling enters only through the coherent ``-i [H_S, .]`` term.
    """
    ebs = _sources(sys, rate_sources)
    specs = sorted(local_specs, key=lambda s: s.coupling_index)
    if [s.coupling_index for s in specs] != list(range(len(sys.couplings))):
        raise ValueError("one LocalSpec per coupling is required")
    decs = [bohr_decompose(sys, s.coupling_index, tol=tol, h=s.h_local) for s in specs]
    return gkls_global_parts(sys, decs, ebs)


def build_gkls_local(sys, local_specs, rate_sources=None, lamb_shift=True):
    return gkls_local_parts(sys, local_specs, rate_sources).total(lamb_shift)


def steady_state(generator):
    """Normalized kernel vector of a generator, returned as a Hermitian density matrix."""
    L = generator.matrix if isinstance(generator, Superoperator) else np.asarray(generator)
    d = math.isqrt(L.shape[0])
    # null vector of L: append the trace condition and solve by least squares
    tr = vec(np.eye(d)).conj()
    A = np.vstack([L, tr[None, :]])
    b = np.zeros(A.shape[0], dtype=complex)
    b[-1] = 1.0
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    rho = unvec(x, d)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


# ---------------------------------------------------------------- propagation

@dataclass(eq=False)
class SimulationResult:
    """States ``states[j]`` at ``times[j]`` (Schrodinger picture unless noted in meta)."""

    times: np.ndarray
    states: np.ndarray
    observables: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def expect(self, op):
        return np.einsum("ij,tji->t", np.asarray(op), self.states).real

    def add_observables(self, ops):
        for name, op in ops.items():
            self.observables[name] = self.expect(op)
        return self

    def trace_error(self):
        return float(np.max(np.abs(np.einsum("tii->t", self.states) - 1.0)))

    def hermiticity_error(self):
        return float(np.max(np.abs(self.states - self.states.conj().transpose(0, 2, 1))))

    def min_eigenvalue(self):
        h = 0.5 * (self.states + self.states.conj().transpose(0, 2, 1))
        return float(np.min(np.linalg.eigvalsh(h)))


def _as_generator_fn(generator):
    if isinstance(generator, Superoperator):
        return lambda t: generator
    return generator


def propagate(generator_fn, rho0, t_grid, rtol=1e-8, atol=1e-12, method="RK45", meta=None):
    """Integrate ``d vec(rho)/dt = L(t) vec(rho)`` with an adaptive embedded Runge-Kutta pair.

    Parameters
    ----------
    generator_fn : callable or Superoperator
        ``t -> Superoperator``; a constant Superoperator is accepted too.
    rho0 : (d, d) array
    t_grid : 1-D increasing array, ``t_grid[0]`` is the initial time.

    Raises
    ------
    StepSizeUnderflow
        If the solver's step size collapses.
    NonFiniteState
        If the state or generator becomes non-finite.
    """
    fn = _as_generator_fn(generator_fn)
    rho0 = np.asarray(rho0, dtype=complex)
    d = rho0.shape[0]
    t_grid = np.asarray(t_grid, dtype=float)
    start = time.perf_counter()

    def rhs(t, y):
        out = fn(t).matrix @ y
        if not np.all(np.isfinite(out)):
            raise NonFiniteState(f"non-finite derivative at t={t}")
        return out

    if t_grid.size == 1:
        states = rho0[None].copy()
    else:
        sol = integrate.solve_ivp(rhs, (t_grid[0], t_grid[-1]), vec(rho0), method=method,
                                  t_eval=t_grid, rtol=rtol, atol=atol)
        if sol.status != 0:
            if "step size" in sol.message.lower():
                raise StepSizeUnderflow(sol.message)
            raise NonFiniteState(sol.message)
        states = np.array([unvec(y, d) for y in sol.y.T])
    if not np.all(np.isfinite(states)):
        raise NonFiniteState("non-finite state")
    m = {"method": "ode", "solver": method, "rtol": rtol, "wall_time": time.perf_counter() - start}
    m.update(meta or {})
    return SimulationResult(t_grid, states, {}, m)


def _rotate(rho, E, V, t):
    U = (V * np.exp(-1j * E * t)) @ V.conj().T
    return U @ rho @ U.conj().T


def propagate_map(map_fn, rho0, t_grid, h_s=None, workers=None, meta=None):
    """``rho(t) = U_t exp(K_t)[rho0] U_t^dag`` at each grid time.

    ``map_fn(t)`` returns the exponent K_t (a Superoperator). With ``h_s``
    given the interaction-picture result is rotated back by
    ``U_t = exp(-i h_s t)``; otherwise the interaction-picture state is returned.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    d = rho0.shape[0]
    t_grid = np.asarray(t_grid, dtype=float)
    v0 = vec(rho0)
    start = time.perf_counter()
    if h_s is not None:
        E, V = np.linalg.eigh(np.asarray(h_s, dtype=complex))

    def one(t):
        K = map_fn(t).matrix
        if not np.all(np.isfinite(K)):
            raise NonFiniteState(f"non-finite exponent at t={t}")
        r = unvec(linalg.expm(K) @ v0, d)
        return _rotate(r, E, V, t) if h_s is not None else r

    workers = workers or min(_rates.n_threads(), max(1, t_grid.size // 16))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            states = np.array(list(pool.map(one, t_grid)))
    else:
        states = np.array([one(t) for t in t_grid])
    m = {"method": "map", "picture": "schrodinger" if h_s is not None else "interaction",
         "wall_time": time.perf_counter() - start}
    m.update(meta or {})
    return SimulationResult(t_grid, states, {}, m)


# ---------------------------------------------------------------- exact RWA amplitude

def _rwa_kernel(eb, omega0):
    """Terms of f(tau) = C(tau) exp(i w0 tau) = sum_k c_k exp(-mu_k tau)."""
    return np.asarray(eb.c, dtype=complex), np.asarray(eb.nu, dtype=complex) - 1j * omega0


def _volterra_matrix(c, mu):
    m = c.size
    M = np.zeros((m + 1, m + 1), dtype=complex)
    M[0, 1:] = -1.0
    M[1:, 0] = c
    M[np.arange(1, m + 1), np.arange(1, m + 1)] = -mu
    return M


def volterra_solve(eb, omega0, t_grid, return_derivative=False):
    """Amplitude c1(t) of dc1/dt = -int_0^t f(t - s) c1(s) ds, c1(0) = 1.

    With ``f = sum_k c_k exp(-mu_k tau)`` the auxiliaries
    ``y_k = int_0^t c_k exp(-mu_k (t - s)) c1(s) ds`` obey
    ``dy_k/dt = c_k c1 - mu_k y_k`` and ``dc1/dt = -sum_k y_k``. The linear
    system is advanced exactly by matrix exponentials between grid points.

    Returns
    -------
    c1 : complex array
    dc1 : complex array, only with ``return_derivative``.
    """
    c, mu = _rwa_kernel(eb, omega0)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be non-negative and non-decreasing")
    M = _volterra_matrix(c, mu)
    x = np.zeros(c.size + 1, dtype=complex)
    x[0] = 1.0
    cache = {}
    out = np.empty((t_grid.size, c.size + 1), dtype=complex)
    t_prev = 0.0
    for j, t in enumerate(t_grid):
        dt = t - t_prev
        if dt > 0:
            key = round(dt, 15)
            P = cache.get(key)
            if P is None:
                P = cache[key] = linalg.expm(M * dt)
            x = P @ x
        out[j] = x
        t_prev = t
    c1 = out[:, 0]
    if return_derivative:
        return c1, -out[:, 1:].sum(axis=1)
    return c1


def volterra_trapezoid(kernel, t_max, n_steps, richardson=True):
    """Direct discretization of dc1/dt = -int_0^t f(t - s) c1(s) ds.

    Both the memory integral and the time step use the trapezoidal rule,
    which makes each step a scalar implicit update. With ``richardson`` the
    result on the coarse grid is extrapolated from step sizes h and h/2.

    Parameters
    ----------
    kernel : callable
        Vectorized ``f(tau)`` for ``tau >= 0``.

    Returns
    -------
    t : array of ``n_steps + 1`` times
    c1 : complex array
    """
    def solve(n):
        h = t_max / n
        tt = h * np.arange(n + 1)
        f = np.asarray(kernel(tt), dtype=complex)
        c = np.zeros(n + 1, dtype=complex)
        z = np.zeros(n + 1, dtype=complex)
        c[0] = 1.0
        for k in range(1, n + 1):
            # z_k = h [f_k c_0 / 2 + sum_{j=1}^{k-1} f_{k-j} c_j + f_0 c_k / 2]
            known = 0.5 * f[k] * c[0] + np.dot(f[k - 1:0:-1], c[1:k])
            rhs = c[k - 1] - 0.5 * h * z[k - 1] - 0.5 * h * h * known
            c[k] = rhs / (1.0 + 0.25 * h * h * f[0])
            z[k] = h * (known + 0.5 * f[0] * c[k])
        return tt, c

    t, c = solve(n_steps)
    if not richardson:
        return t, c
    _, cf = solve(2 * n_steps)
    return t, (4.0 * cf[::2] - c) / 3.0


def tcl_exact_rates(eb, omega0, t_grid):
    """gamma(t), S(t) with gamma + i S = -2 (dc1/dt) / c1 from the exact amplitude."""
    c1, dc1 = volterra_solve(eb, omega0, t_grid, return_derivative=True)
    r = -2.0 * dc1 / c1
    return r.real, r.imag


class ExactTCLRates:
    """Callable exact rates at arbitrary times, ``t -> (gamma, S)``."""

    def __init__(self, eb, omega0):
        c, mu = _rwa_kernel(eb, omega0)
        self.M = _volterra_matrix(c, mu)

    def __call__(self, t):
        x = linalg.expm(self.M * t)[:, 0]
        r = 2.0 * x[1:].sum() / x[0]
        return float(r.real), float(r.imag)


# ---------------------------------------------------------------- TCL2 / TCL4 closed form

def tcl_rwa_rates(eb, omega0, order, t_grid, backend=None):
    """TCL rates gamma(t), S(t) of the RWA two-level model at order 2 or 4.

    With ``f(tau) = C(tau) exp(i w0 tau) = sum_k c_k exp(-mu_k tau)``,
    ``F(t) = int_0^t f``, ``G(t) = int_0^t F`` and the convolution
    ``(f * G)(t)``, expanding ``-d/dt ln c1`` in the kernel strength gives

        (gamma + i S) / 2 = F                       (order 2)
                          + F G - f * G              (order 4)

    Every piece is a sum of exponential divided differences:
    ``F = sum c t phi1(-mu t)``, ``G = sum c t^2 phi2(-mu t)`` and
    ``f * G = sum_jk c_j c_k t^3 exp[0, 0, -mu_j t, -mu_k t]``, so order 4
    costs O(m^2) per time.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    c, mu = _rwa_kernel(eb, omega0)
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    if c.size == 0:
        z = np.zeros(t.shape)
        return z, z.copy()
    F, G, fG = _backend.get(backend).tcl_sums(c, mu, t)
    r = F if order == 2 else F + F * G - fG
    r = 2.0 * r
    return r.real, r.imag


def _cumsimpson(y, dx):
    re = integrate.cumulative_simpson(y.real, dx=dx, initial=0)
    im = integrate.cumulative_simpson(y.imag, dx=dx, initial=0)
    return re + 1j * im


def tcl4_oracle(kernel_values, dt, omega0=None):
    """Order-4 TCL rates from a kernel sampled on a uniform grid.

    ``kernel_values[j] = f(j dt)`` (the caller supplies ``C(tau) e^{i w0 tau}``
    from quadrature). The ordered double integral over
    ``t > t1 > t2 > t3 > 0`` of ``f(t - t2) f(t1 - t3) + f(t - t3) f(t1 - t2)``
    is reduced with the running integrals F and G to

        int_0^t ds { f(t - s) [G(t) - G(s) - G(t - s)] + [F(t) - F(t - s)] F(t - s) },

    which is evaluated with composite Simpson rules at every even grid index.

    Returns
    -------
    idx : int array of grid indices (even) where the rates are given
    gamma, S : real arrays at those indices
    """
    f = np.asarray(kernel_values, dtype=complex)
    F = _cumsimpson(f, dt)
    G = _cumsimpson(F, dt)
    idx = np.arange(2, f.size, 2)
    out = np.empty(idx.size, dtype=complex)
    for i, n in enumerate(idx):
        s = np.arange(n + 1)
        integrand = f[n - s] * (G[n] - G[s] - G[n - s]) + (F[n] - F[n - s]) * F[n - s]
        out[i] = F[n] + integrate.simpson(integrand, dx=dt)
    out = 2.0 * out
    return idx, out.real, out.imag


def _series_fn(series):
    if callable(series):
        return series
    tg, vals = series
    spline = CubicSpline(np.asarray(tg, dtype=float), np.asarray(vals, dtype=float))
    return lambda t: float(spline(t))


def build_tcl_rwa_generator(gamma_t, s_t=None):
    """``t -> L(t)`` with ``L = -i S/4 [sigma_z, .] + gamma D[sigma_-]``.

    ``gamma_t`` and ``s_t`` are callables ``t -> float`` or ``(t_grid, values)``
    pairs (interpolated with cubic splines). Alternatively ``gamma_t`` may be a
    single callable ``t -> (gamma, S)`` with ``s_t`` omitted.
    """
    if s_t is None:
        both = gamma_t
    else:
        gf, sf = _series_fn(gamma_t), _series_fn(s_t)
        both = lambda t: (gf(t), sf(t))
    lamb = commutator_super(SIGMA_Z).matrix / 4.0
    diss = _dissipator(np.ones((1, 1)), SIGMA_MINUS[None]).matrix

    def gen(t):
        g, s = both(t)
        return Superoperator(s * lamb + g * diss)

    return gen

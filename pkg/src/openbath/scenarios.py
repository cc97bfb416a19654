"""Scenario presets, config validation and the method runners behind the CLI.

A config is a nested mapping (read from YAML by the CLI). ``preset: <name>``
starts from one of :data:`PRESETS`; every other key overrides the preset,
mappings merging key by key and lists replacing wholesale. Unknown keys are
rejected with :class:`~openbath.errors.ConfigError` naming the dotted path.

Schema::

    preset: spin_boson | heat_transport | kerr | rwa_structured | underdamped
    seed: int                                  (default 0)
    system:
      builder: <preset system name>            parametrised Hamiltonian ...
      params: {name: value}                    ... and its parameters
      h_s: matrix                              or an inline Hamiltonian
      couplings: [{q: matrix, bath: int, label: str}]
      local: [{h_local: matrix, coupling: int}]  local GKLS subsystems
      bohr_tol: float                          Bohr-frequency binning tolerance
      rwa_omega0: float                        two-level frequency for RWA methods
    baths: [{label: str, temperature: float | beta: float,
             model: {type: ohmic, alpha, s, omega_c}
                  | {type: underdamped, alpha, gamma_width, omega_0}
                  | {type: fmo, rescale_g, gamma_k}
                  | {type: tabulated, omegas: [..], values: [..]}}]
    decomposition:                             shared by all baths ...
      method: matsubara | espira | esprit | prony | aaa | nlsq_cf | nlsq_ps | file
      params: {n | tol | m | max_terms | ...}
      path: file written by ``openbath decompose``   (method: file)
      sampling: {n_samples, t_max, w_min, w_max}
      tolerance: float                         rmse_time / max|C| accepted by decompose
      per_bath: [{...same keys...}]            ... or overridden per bath
    methods: [cumulant, redfield, redfield_no_ls, tcl2, tcl4,
              gkls_global, gkls_local, volterra_exact]
    t_grid: {t_max: float, n_points: int}
    initial_state: {type: ket, vector: [..]} | {type: density, matrix: ..}
                 | {type: basis, index: int} | {type: coherent, alpha: complex}
    observables: [names]                       see ``Scenario.observable_ops``
    outputs: {directory: str, formats: [csv, json, svg]}
    bench: {n_times, n_pairs, t_max, omega_max, eps, backend, oracle_xi}
    heat: {fd_points: int, fd_step: float, reference_bath: str}
    checks: {g_scaling: bool}

Matrices are nested lists whose entries are numbers or complex strings such
as ``"0.5-1j"``.
"""
from __future__ import annotations

import copy
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bath as _bath
from . import dynamics as _dyn
from . import expfit as _fit
from . import thermo as _thermo
from .errors import ConfigError, OpenBathError

__all__ = [
    "PRESETS",
    "METHODS",
    "HEAT_METHODS",
    "Scenario",
    "TruncationExceeded",
    "resolve_config",
    "validate_config",
    "build_bath",
    "decompose_baths",
    "build_scenario",
    "run_methods",
    "scenario_checks",
    "run_heat",
    "heat_checks",
    "relative_drift",
]

METHODS = ("cumulant", "redfield", "redfield_no_ls", "tcl2", "tcl4", "gkls_global", "gkls_local",
           "volterra_exact")
RWA_METHODS = ("tcl2", "tcl4", "volterra_exact")
HEAT_METHODS = ("redfield", "redfield_no_ls", "cumulant", "gkls_global", "gkls_local")
DECOMPOSITION_METHODS = ("matsubara", "espira", "esprit", "prony", "aaa", "nlsq_cf", "nlsq_ps", "file")


class TruncationExceeded(OpenBathError, RuntimeError):
    """A truncated oscillator reached populations where the cutoff matters."""


# ---------------------------------------------------------------- presets

PRESETS = {
    "spin_boson": {
        "system": {"builder": "spin_boson", "params": {"omega0": 1.0, "delta": 1.0}},
        "baths": [{"label": "bath", "temperature": 0.5,
                   "model": {"type": "ohmic", "alpha": 0.05 * math.pi, "s": 1.5, "omega_c": 1.0}}],
        "decomposition": {"method": "espira", "params": {"tol": 1e-7},
                          "sampling": {"n_samples": 1000, "t_max": 60.0}, "tolerance": 1e-4},
        "methods": ["cumulant", "redfield", "gkls_global"],
        "t_grid": {"t_max": 50.0, "n_points": 501},
        "initial_state": {"type": "ket", "vector": [1.0, 1.0]},
        "observables": ["coherence", "sigma_x", "sigma_z"],
    },
    "heat_transport": {
        "system": {"builder": "heat_transport",
                   "params": {"omega_c": 0.5, "omega_h": 0.5, "delta": 0.5, "g": 0.25}},
        "baths": [
            {"label": "cold", "temperature": 0.01,
             "model": {"type": "underdamped", "alpha": math.sqrt(0.05 * math.pi * 0.5),
                       "gamma_width": 1.0, "omega_0": 1.0}},
            {"label": "hot", "temperature": 2.0,
             "model": {"type": "underdamped", "alpha": math.sqrt(0.05 * math.pi * 0.5),
                       "gamma_width": 1.0, "omega_0": 1.0}},
        ],
        "decomposition": {"method": "matsubara", "tolerance": 1e-4,
                          "per_bath": [{"method": "matsubara", "params": {"n": 1000}},
                                       {"method": "matsubara", "params": {"n": 50}}]},
        "methods": ["redfield", "redfield_no_ls", "cumulant", "gkls_global", "gkls_local"],
        "t_grid": {"t_max": 200.0, "n_points": 401},
        "initial_state": {"type": "basis", "index": 3},
        "observables": ["sigma_z_cold", "sigma_z_hot"],
        "heat": {"fd_points": 5, "reference_bath": "hot"},
    },
    "kerr": {
        "system": {"builder": "kerr", "params": {"omega0": 1.0, "chi": 0.5, "n_levels": 10}},
        "baths": [{"label": "bath", "temperature": 0.1,
                   "model": {"type": "underdamped", "alpha": math.sqrt(math.pi / 4),
                             "gamma_width": 1.0, "omega_0": 1.0}}],
        "decomposition": {"method": "espira", "params": {"tol": 1e-8},
                          "sampling": {"n_samples": 1000, "t_max": 60.0}, "tolerance": 1e-4},
        "methods": ["cumulant", "gkls_global"],
        "t_grid": {"t_max": 75.0, "n_points": 301},
        "initial_state": {"type": "coherent", "alpha": 2.0},
        "observables": ["number", "position", "momentum"],
    },
    "rwa_structured": {
        "system": {"builder": "rwa_structured", "params": {"omega0": 500.0}},
        "baths": [{"label": "fmo", "temperature": 0.0,
                   "model": {"type": "fmo", "rescale_g": 1 / 15, "gamma_k": 5.0}}],
        "decomposition": {"method": "espira", "params": {"tol": 1e-12, "max_terms": 50},
                          "sampling": {"n_samples": 1024, "t_max": 1.0}, "tolerance": 1e-2},
        "methods": ["volterra_exact", "tcl2", "tcl4", "cumulant"],
        "t_grid": {"t_max": 1.0, "n_points": 401},
        "initial_state": {"type": "basis", "index": 0},
        "observables": ["population_excited"],
        "checks": {"g_scaling": True},
    },
    # bath only: the decomposition and rate benchmarks
    "underdamped": {
        "baths": [{"label": "bath", "temperature": 0.05,
                   "model": {"type": "underdamped", "alpha": 1.0, "gamma_width": 2.0, "omega_0": 1.2}}],
        "decomposition": {"method": "espira", "params": {"tol": 1e-9},
                          "sampling": {"n_samples": 1024, "t_max": 64.0}, "tolerance": 1e-8},
        "bench": {"n_times": 100, "n_pairs": 50, "t_max": 200.0, "omega_max": 3.0, "eps": 1e-8},
    },
}

# ---------------------------------------------------------------- schema

_MATRIX = "matrix"
_ANY = "any"

_DECOMP_KEYS = {"method": str, "params": dict, "path": str, "sampling": {
    "n_samples": int, "t_max": float, "w_min": float, "w_max": float}, "tolerance": float}

SCHEMA = {
    "preset": str,
    "seed": int,
    "system": {
        "builder": str, "params": dict, "h_s": _MATRIX,
        "couplings": [{"q": _MATRIX, "bath": int, "label": str}],
        "local": [{"h_local": _MATRIX, "coupling": int}],
        "bohr_tol": float, "rwa_omega0": float,
    },
    "baths": [{"label": str, "temperature": float, "beta": float, "model": dict}],
    "decomposition": {**_DECOMP_KEYS, "per_bath": [_DECOMP_KEYS]},
    "methods": [str],
    "t_grid": {"t_max": float, "n_points": int},
    "initial_state": {"type": str, "vector": list, "matrix": _MATRIX, "index": int, "alpha": _ANY},
    "observables": [str],
    "outputs": {"directory": str, "formats": [str]},
    "bench": {"n_times": int, "n_pairs": int, "t_max": float, "omega_max": float, "eps": float,
              "backend": str, "oracle_xi": bool},
    "heat": {"fd_points": int, "fd_step": float, "reference_bath": str},
    "checks": {"g_scaling": bool},
}

_MODEL_KEYS = {
    "ohmic": ("alpha", "s", "omega_c"),
    "underdamped": ("alpha", "gamma_width", "omega_0"),
    "fmo": ("rescale_g", "gamma_k"),
    "tabulated": ("omegas", "values"),
}

_BUILDER_PARAMS = {
    "spin_boson": ("omega0", "delta"),
    "heat_transport": ("omega_c", "omega_h", "delta", "g"),
    "kerr": ("omega0", "chi", "n_levels"),
    "rwa_structured": ("omega0",),
}


def _type_ok(value, kind):
    if kind is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if kind is bool:
        return isinstance(value, bool)
    return isinstance(value, kind)


def _check(value, schema, path):
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping")
        for k, v in value.items():
            sub = f"{path}.{k}" if path else str(k)
            if k not in schema:
                raise ConfigError(f"unknown key '{sub}'")
            _check(v, schema[k], sub)
    elif isinstance(schema, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        for i, item in enumerate(value):
            _check(item, schema[0], f"{path}[{i}]")
    elif schema is _MATRIX:
        _matrix(value, path)
    elif schema is _ANY:
        return
    elif not _type_ok(value, schema):
        raise ConfigError(f"{path}: expected {schema.__name__}, got {type(value).__name__}")


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(cfg):
    """Expand ``preset`` and validate; returns a new, complete mapping."""
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected a mapping at the top level")
    cfg = dict(cfg)
    name = cfg.get("preset")
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"preset: unknown preset '{name}' (choose from {', '.join(PRESETS)})")
        cfg = _merge(PRESETS[name], cfg)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    """Structural and semantic checks; raises ConfigError naming the offending key."""
    _check(cfg, SCHEMA, "")
    for i, b in enumerate(cfg.get("baths", [])):
        model = b.get("model")
        if model is None:
            raise ConfigError(f"baths[{i}].model: missing")
        kind = model.get("type")
        if kind not in _MODEL_KEYS:
            raise ConfigError(f"baths[{i}].model.type: unknown model '{kind}'")
        for k in model:
            if k != "type" and k not in _MODEL_KEYS[kind]:
                raise ConfigError(f"unknown key 'baths[{i}].model.{k}'")
        if "temperature" in b and "beta" in b:
            raise ConfigError(f"baths[{i}]: give either temperature or beta")
    sysc = cfg.get("system", {})
    if "builder" in sysc:
        if sysc["builder"] not in _BUILDER_PARAMS:
            raise ConfigError(f"system.builder: unknown builder '{sysc['builder']}'")
        for k in sysc.get("params", {}):
            if k not in _BUILDER_PARAMS[sysc["builder"]]:
                raise ConfigError(f"unknown key 'system.params.{k}'")
    for m in cfg.get("methods", []):
        if m not in METHODS:
            raise ConfigError(f"methods: unknown method '{m}'")
    dec = cfg.get("decomposition", {})
    for j, d in enumerate([dec] + list(dec.get("per_bath", []))):
        meth = d.get("method")
        if meth is not None and meth not in DECOMPOSITION_METHODS:
            where = "decomposition.method" if j == 0 else f"decomposition.per_bath[{j - 1}].method"
            raise ConfigError(f"{where}: unknown method '{meth}'")
    init = cfg.get("initial_state", {})
    if init and init.get("type") not in ("ket", "density", "basis", "coherent"):
        raise ConfigError(f"initial_state.type: unknown type '{init.get('type')}'")
    return cfg


def _matrix(value, path):
    try:
        m = np.array([[complex(str(x).replace(" ", "")) if isinstance(x, str) else complex(x) for x in row]
                      for row in value], dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a numeric matrix ({exc})") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{path}: expected a square matrix")
    return m


# ---------------------------------------------------------------- baths and decompositions

def build_bath(entry):
    """BathSpec from one ``baths`` entry; ``temperature: 0`` means T = 0."""
    model = dict(entry["model"])
    kind = model.pop("type")
    try:
        if kind == "ohmic":
            m = _bath.OhmicFamily(float(model["alpha"]), float(model["s"]), float(model["omega_c"]))
        elif kind == "underdamped":
            m = _bath.UnderdampedBrownian(float(model["alpha"]), float(model["gamma_width"]),
                                          float(model["omega_0"]))
        elif kind == "fmo":
            m = _bath.StructuredFMO.bundled(float(model.get("rescale_g", 1 / 15)), float(model.get("gamma_k", 5.0)))
        else:
            m = _bath.Tabulated(tuple(map(float, model["omegas"])), tuple(map(float, model["values"])))
    except KeyError as exc:
        raise ConfigError(f"bath model '{kind}': missing parameter {exc}") from None
    if "beta" in entry:
        beta = float(entry["beta"])
    else:
        T = float(entry.get("temperature", 0.0))
        beta = math.inf if T == 0 else 1.0 / T
    return _bath.BathSpec(m, beta)


def _decomp_entry(cfg, k):
    dec = dict(cfg.get("decomposition", {}))
    per = dec.pop("per_bath", [])
    if k < len(per):
        dec = _merge(dec, per[k])
    if "method" not in dec:
        raise ConfigError(f"decomposition: no method for bath {k}")
    return dec


def decompose_bath(spec, dec, seed=0):
    """ExponentialBath for one bath following a decomposition entry.

    Returns ``(eb, signal)``; ``signal`` is None for Matsubara and file input.
    """
    method = dec["method"]
    params = dict(dec.get("params", {}))
    samp = dec.get("sampling", {})
    if method == "file":
        if "path" not in dec:
            raise ConfigError("decomposition.path: required for method 'file'")
        return _fit.load_exponential_bath(dec["path"]), None
    if method == "matsubara":
        return _fit.matsubara_underdamped(spec, int(params.get("n", 100))), None
    if method in ("aaa", "nlsq_ps"):
        w, S = _fit.sample_power_spectrum(spec, n_samples=int(samp.get("n_samples", 1000)),
                                          w_min=float(samp.get("w_min", 1e-3)), w_max=samp.get("w_max"))
        if method == "aaa":
            return _fit.aaa(w, S, float(params.get("tol", 1e-6)), params.get("max_terms")), None
        return _fit.nlsq_ps(w, S, int(params.get("m", 8))), None
    sig = _fit.sample_correlation(spec, n_samples=int(samp.get("n_samples", 512)), t_max=samp.get("t_max"))
    if method == "espira":
        eb = _fit.espira(sig, float(params.get("tol", 1e-8)), params.get("max_terms"))
    elif method == "esprit":
        eb = _fit.esprit(sig, int(params.get("m", 8)))
    elif method == "prony":
        eb = _fit.prony(sig, int(params.get("m", 8)))
    else:
        eb = _fit.nlsq_cf(sig, int(params.get("m", 8)))
    return eb, sig


def decompose_baths(cfg):
    """(BathSpecs, ExponentialBaths, signals, decomposition entries) for every bath."""
    specs, ebs, sigs, decs = [], [], [], []
    for k, entry in enumerate(cfg.get("baths", [])):
        spec = build_bath(entry)
        dec = _decomp_entry(cfg, k)
        eb, sig = decompose_bath(spec, dec, cfg.get("seed", 0))
        specs.append(spec)
        ebs.append(eb)
        sigs.append(sig)
        decs.append(dec)
    return specs, ebs, sigs, decs


# ---------------------------------------------------------------- systems

def _ladder(n):
    a = np.diag(np.sqrt(np.arange(1, n)), 1).astype(complex)
    return a, a.conj().T


def _builder(name, p):
    """(h_s, [(q, label)], local [(h_local, k)], named observables, rwa omega0)."""
    I2 = np.eye(2, dtype=complex)
    sz, sx = _dyn.SIGMA_Z, _dyn.SIGMA_X
    sy = np.array([[0, -1j], [1j, 0]])
    if name == "spin_boson":
        h = 0.5 * p["omega0"] * sz + 0.5 * p["delta"] * sx
        obs = {"sigma_x": sx, "sigma_y": sy, "sigma_z": sz}
        return h, [(sz, "bath")], [], obs, None
    if name == "heat_transport":
        hc = 0.5 * p["omega_c"] * np.kron(sz, I2) + 0.5 * p["delta"] * np.kron(sx, I2)
        hh = 0.5 * p["omega_h"] * np.kron(I2, sz)
        h = hc + hh + p["g"] * np.kron(sx, sx)
        qc, qh = np.kron(sx, I2), np.kron(I2, sx)
        obs = {"sigma_z_cold": np.kron(sz, I2), "sigma_z_hot": np.kron(I2, sz), "energy": h}
        return h, [(qc, "cold"), (qh, "hot")], [(hc, 0), (hh, 1)], obs, None
    if name == "kerr":
        n = int(p["n_levels"])
        a, ad = _ladder(n)
        h = p["omega0"] * ad @ a + 0.5 * p["chi"] * ad @ ad @ a @ a
        obs = {"number": ad @ a, "position": (a + ad) / math.sqrt(2), "momentum": 1j * (ad - a) / math.sqrt(2)}
        return h, [(a + ad, "bath")], [], obs, None
    if name == "rwa_structured":
        w0 = p["omega0"]
        h = np.diag([w0, 0.0]).astype(complex)
        obs = {"population_excited": np.diag([1.0, 0.0]).astype(complex), "sigma_x": sx}
        return h, [(sx, "fmo")], [], obs, float(w0)
    raise ConfigError(f"system.builder: unknown builder '{name}'")


@dataclass(eq=False)
class Scenario:
    """Everything a run needs: the system with decomposed baths and the run settings."""

    system: _dyn.SystemSpec
    bath_specs: list
    baths: list
    decomps: list
    local_specs: list
    rho0: np.ndarray
    t_grid: np.ndarray
    methods: list
    observable_ops: dict
    observables: list
    rwa_omega0: float = None
    config: dict = field(default_factory=dict)

    @property
    def labels(self):
        return [c.label for c in self.system.couplings]

    def observe(self, states):
        """Observable series for a stack of states; ``coherence`` is |rho_01|."""
        out = {}
        for name in self.observables:
            if name == "coherence":
                out[name] = np.abs(states[:, 0, 1])
            else:
                out[name] = np.einsum("ij,tji->t", self.observable_ops[name], states).real
        return out


def _initial_state(init, d):
    kind = init.get("type", "basis")
    if kind == "basis":
        idx = int(init.get("index", 0))
        if not 0 <= idx < d:
            raise ConfigError(f"initial_state.index: {idx} outside 0..{d - 1}")
        rho = np.zeros((d, d), dtype=complex)
        rho[idx, idx] = 1.0
        return rho
    if kind == "ket":
        v = np.array([complex(x) for x in init.get("vector", [])], dtype=complex)
        if v.size != d or not np.linalg.norm(v) > 0:
            raise ConfigError(f"initial_state.vector: need {d} entries, not all zero")
        v = v / np.linalg.norm(v)
        return np.outer(v, v.conj())
    if kind == "coherent":
        al = complex(init.get("alpha", 1.0))
        v = np.array([al**n / math.sqrt(math.factorial(n)) for n in range(d)], dtype=complex)
        v = v / np.linalg.norm(v)
        return np.outer(v, v.conj())
    rho = _matrix(init.get("matrix"), "initial_state.matrix")
    if rho.shape != (d, d):
        raise ConfigError(f"initial_state.matrix: expected shape ({d}, {d})")
    return rho / np.trace(rho).real


def build_scenario(cfg, baths=None, bath_specs=None):
    """Assemble a :class:`Scenario`; ``baths`` skips the decomposition step."""
    cfg = resolve_config(cfg)
    sysc = cfg.get("system")
    if not sysc:
        raise ConfigError("system: missing")
    if baths is None:
        bath_specs, baths, _, _ = decompose_baths(cfg)
    elif bath_specs is None:
        bath_specs = [build_bath(b) for b in cfg.get("baths", [])]
    rwa_w0 = sysc.get("rwa_omega0")
    if "builder" in sysc:
        name = sysc["builder"]
        params = dict(sysc.get("params", {}))
        missing = [k for k in _BUILDER_PARAMS[name] if k not in params]
        if missing:
            raise ConfigError(f"system.params: missing {', '.join(missing)}")
        h, qs, local, obs, w0 = _builder(name, params)
        rwa_w0 = rwa_w0 if rwa_w0 is not None else w0
        couplings = [(q, k, label) for k, (q, label) in enumerate(qs)]
    else:
        if "h_s" not in sysc:
            raise ConfigError("system: give either builder or h_s")
        h = _matrix(sysc["h_s"], "system.h_s")
        couplings = [(_matrix(c["q"], f"system.couplings[{i}].q"), int(c.get("bath", i)),
                      c.get("label", f"bath{i}")) for i, c in enumerate(sysc.get("couplings", []))]
        local = [(_matrix(l["h_local"], f"system.local[{i}].h_local"), int(l["coupling"]))
                 for i, l in enumerate(sysc.get("local", []))]
        obs = {}
    if any(b >= len(baths) for _, b, _ in couplings):
        raise ConfigError("system.couplings: bath index out of range")
    try:
        system = _dyn.SystemSpec(h, [_dyn.Coupling(q, baths[b], label) for q, b, label in couplings])
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from None
    tol = sysc.get("bohr_tol")
    decomps = [_dyn.bohr_decompose(system, k, tol=tol) for k in range(len(couplings))]
    local_specs = [_dyn.LocalSpec(hl, k) for hl, k in local]
    tg = cfg.get("t_grid", {})
    t_grid = np.linspace(0.0, float(tg.get("t_max", 10.0)), int(tg.get("n_points", 101)))
    rho0 = _initial_state(cfg.get("initial_state", {}), system.dim)
    names = list(cfg.get("observables", []))
    for n in names:
        if n != "coherence" and n not in obs:
            raise ConfigError(f"observables: unknown observable '{n}' for this system")
    methods = list(cfg.get("methods", []))
    if any(m in RWA_METHODS for m in methods):
        if rwa_w0 is None or system.dim != 2 or len(baths) != 1:
            raise ConfigError("methods: tcl2/tcl4/volterra_exact need a two-level system with one bath "
                              "and system.rwa_omega0")
    if "gkls_local" in methods and len(local_specs) != len(couplings):
        raise ConfigError("system.local: gkls_local needs one local Hamiltonian per coupling")
    return Scenario(system, list(bath_specs), list(baths), decomps, local_specs, rho0, t_grid, methods,
                    obs, names, rwa_w0, cfg)


# ---------------------------------------------------------------- runners

def _rwa_frame_states(rho0, amp_ee, coh, w0, t):
    """Schrodinger-picture states from excited population and the rotating-frame coherence."""
    states = np.zeros((t.size, 2, 2), dtype=complex)
    states[:, 0, 0] = amp_ee
    states[:, 1, 1] = 1.0 - amp_ee
    states[:, 0, 1] = coh * np.exp(-1j * w0 * t)
    states[:, 1, 0] = np.conj(states[:, 0, 1])
    return states


def _dense_grid(t_grid):
    return np.linspace(0.0, float(t_grid[-1]), max(2001, 4 * (t_grid.size - 1) + 1))


def run_volterra(scn, eb=None):
    eb = eb or scn.baths[0]
    w0, t, rho0 = scn.rwa_omega0, scn.t_grid, scn.rho0
    c1 = _dyn.volterra_solve(eb, w0, t)
    states = _rwa_frame_states(rho0, rho0[0, 0].real * np.abs(c1) ** 2, rho0[0, 1] * c1, w0, t)
    return _dyn.SimulationResult(t, states, {}, {"method": "volterra_exact"})


def run_tcl(scn, order, eb=None):
    eb = eb or scn.baths[0]
    w0, t = scn.rwa_omega0, scn.t_grid
    dense = _dense_grid(t)
    g, s = _dyn.tcl_rwa_rates(eb, w0, order, dense)
    gen = _dyn.build_tcl_rwa_generator((dense, g), (dense, s))
    r = _dyn.propagate(gen, scn.rho0, t, rtol=1e-10, atol=1e-13)
    states = _rwa_frame_states(scn.rho0, r.states[:, 0, 0].real, r.states[:, 0, 1], w0, t)
    return _dyn.SimulationResult(t, states, {}, {"method": f"tcl{order}"})


def run_method(scn, method):
    """One method on the scenario grid; states are in the Schrodinger picture."""
    sys_, decs, t, rho0 = scn.system, scn.decomps, scn.t_grid, scn.rho0
    start = time.perf_counter()
    if method == "redfield":
        res = _dyn.propagate(lambda s: _dyn.build_redfield_generator(sys_, decs, None, s), rho0, t)
    elif method == "redfield_no_ls":
        res = _dyn.propagate(lambda s: _dyn.build_redfield_generator(sys_, decs, None, s, lamb_shift=False),
                             rho0, t)
    elif method == "cumulant":
        res = _dyn.propagate_map(_dyn.CumulantExponents(sys_, decs, None, t), rho0, t, h_s=sys_.h_s)
    elif method == "gkls_global":
        res = _dyn.propagate(_dyn.build_gkls_global(sys_, decs, None), rho0, t)
    elif method == "gkls_local":
        res = _dyn.propagate(_dyn.build_gkls_local(sys_, scn.local_specs), rho0, t)
    elif method == "volterra_exact":
        res = run_volterra(scn)
    elif method in ("tcl2", "tcl4"):
        res = run_tcl(scn, int(method[-1]))
    else:
        raise ConfigError(f"methods: unknown method '{method}'")
    res.meta.update(method=method, wall_time=time.perf_counter() - start)
    res.observables = scn.observe(res.states)
    return res


def run_methods(scn, methods=None):
    results = {m: run_method(scn, m) for m in (methods or scn.methods)}
    if scn.config.get("system", {}).get("builder") == "kerr":
        n_levels = scn.system.dim
        number = scn.observable_ops["number"]
        for m, r in results.items():
            nmax = float(np.max(r.expect(number)))
            if nmax >= n_levels - 4:
                raise TruncationExceeded(f"{m}: mean photon number {nmax:.3g} reaches N - 4 = {n_levels - 4}")
    return results


def relative_drift(series, fraction=0.1):
    """(max - min) over the last ``fraction`` of the window, divided by max|series| over the window."""
    s = np.asarray(series, dtype=float)
    k = int(np.floor((1 - fraction) * (s.size - 1)))
    scale = np.max(np.abs(s))
    if scale == 0:
        return 0.0
    tail = s[k:]
    return float((tail.max() - tail.min()) / scale)


def fidelity_series(a, b):
    return np.array([_thermo.fidelity(x, y) for x, y in zip(a.states, b.states)])


def scenario_checks(scn, results):
    """Preset-specific diagnostics as ``{name: {"value", "threshold", "passed"}}``."""
    checks = {}
    builder = scn.config.get("system", {}).get("builder")

    def put(name, value, threshold, below=True):
        value = float(value)
        checks[name] = {"value": value, "threshold": threshold,
                        "passed": bool(value <= threshold if below else value >= threshold)}

    if builder == "spin_boson" and {"cumulant", "redfield"} <= set(results):
        put("min_fidelity_cumulant_redfield", fidelity_series(results["cumulant"], results["redfield"]).min(),
            0.999, below=False)
    if builder == "kerr" and "cumulant" in results:
        cum = results["cumulant"]
        ss = _dyn.steady_state(_dyn.build_gkls_global(scn.system, scn.decomps, None))
        put("one_minus_fidelity_cumulant_gkls_steady", 1 - _thermo.fidelity(cum.states[-1], ss), 1e-3,
            below=False)
        for name in ("number", "position", "momentum"):
            put(f"drift_{name}", relative_drift(cum.expect(scn.observable_ops[name])), 1e-3)
    if scn.rwa_omega0 is not None and "volterra_exact" in results:
        exact = results["volterra_exact"].states[:, 0, 0].real
        for m in ("tcl2", "tcl4", "cumulant"):
            if m in results:
                checks[f"max_population_error_{m}"] = {
                    "value": float(np.max(np.abs(results[m].states[:, 0, 0].real - exact)))}
        if scn.config.get("checks", {}).get("g_scaling"):
            half = scn.baths[0].scaled(0.5)
            dev = []
            for eb in (scn.baths[0], half):
                ex = run_volterra(scn, eb).states[:, 0, 0].real
                dev.append(np.max(np.abs(run_tcl(scn, 2, eb).states[:, 0, 0].real - ex)))
            ratio = dev[0] / dev[1]
            checks["tcl2_deviation_ratio_g_halved"] = {"value": float(ratio), "threshold": [2.8, 5.6],
                                                       "passed": bool(2.8 <= ratio <= 5.6)}
    return checks


# ---------------------------------------------------------------- heat

def run_heat(scn, methods=None, results=None):
    """Bath-resolved heat currents per method, plus the exact-derivative cumulant total.

    Returns ``(records, results)``; ``records["cumulant_fd"]`` holds the
    finite-difference currents on ``heat.fd_points`` grid times (including
    the last one) when the cumulant method is requested.
    """
    methods = [m for m in (methods or scn.methods) if m in HEAT_METHODS]
    results = dict(results or {})
    for m in methods:
        if m not in results:
            results[m] = run_method(scn, m)
    sys_, decs = scn.system, scn.decomps
    records = {}
    for m in methods:
        r = results[m]
        if m == "redfield":
            rec = _thermo.heat_from_parts(sys_, lambda s: _dyn.redfield_parts(sys_, decs, None, s), r)
        elif m == "redfield_no_ls":
            rec = _thermo.heat_from_parts(sys_, lambda s: _dyn.redfield_parts(sys_, decs, None, s), r,
                                          lamb_shift=False)
        elif m in ("gkls_global", "gkls_local"):
            parts = (_dyn.gkls_global_parts(sys_, decs, None) if m == "gkls_global"
                     else _dyn.gkls_local_parts(sys_, scn.local_specs))
            rec = _thermo.heat_from_parts(sys_, parts, r)
            bare = _thermo.heat_from_parts(sys_, parts, r, lamb_shift=False)
            rec.meta["lamb_shift_heat"] = max(float(np.max(np.abs(rec.per_bath_currents[l] - bare.per_bath_currents[l])))
                                              for l in rec.per_bath_currents)
        else:
            rec = _thermo.cumulant_heat(sys_, decs, None, r)
            hc = scn.config.get("heat", {})
            n_fd = int(hc.get("fd_points", 5))
            if n_fd > 0:
                idx = np.unique(np.linspace(0, r.times.size - 1, n_fd + 1).round().astype(int)[1:])
                idx = np.concatenate([[0], idx])
                sub = _dyn.SimulationResult(r.times[idx], r.states[idx])
                step = hc.get("fd_step")
                step = float(step) if step is not None else 5e-5 * float(r.times[-1])
                records["cumulant_fd"] = _thermo.cumulant_heat(sys_, decs, None, sub, mode="finite_difference",
                                                               h=step)
        rec.meta["method"] = m
        records[m] = rec
    return records, results


def heat_checks(scn, records):
    """Transient-zero, Lamb-shift and steady-state diagnostics on the reference bath."""
    ref = scn.config.get("heat", {}).get("reference_bath") or scn.labels[-1]
    checks = {}

    def put(name, value, threshold, below=True):
        value = float(value)
        checks[name] = {"value": value, "threshold": threshold,
                        "passed": bool(value <= threshold if below else value >= threshold)}

    for m, rec in records.items():
        if m == "cumulant_fd" or ref not in rec.per_bath_currents:
            continue
        J = rec.per_bath_currents[ref]
        scale = np.max(np.abs(J))
        ratio = abs(J[0]) / scale if scale > 0 else 0.0
        if m in ("redfield", "redfield_no_ls", "cumulant"):
            put(f"{m}_initial_current_ratio", ratio, 1e-6)
        elif m in ("gkls_global", "gkls_local"):
            put(f"{m}_initial_current_ratio", ratio, 1e-2, below=False)
    if "redfield" in records and "redfield_no_ls" in records:
        a = records["redfield"].per_bath_currents[ref]
        b = records["redfield_no_ls"].per_bath_currents[ref]
        put("redfield_lamb_shift_relative_difference", np.max(np.abs(a - b)) / np.max(np.abs(a)), 0.05,
            below=False)
    if "redfield" in records:
        rec = records["redfield"]
        put("redfield_steady_total_ratio",
            abs(rec.total[-1]) / np.max(np.abs(rec.per_bath_currents[ref])), 1e-3)
    if "cumulant_fd" in records and "cumulant" in records:
        scale = np.max(np.abs(records["cumulant"].per_bath_currents[ref]))
        put("cumulant_steady_total_ratio", abs(records["cumulant_fd"].total[-1]) / scale, 1e-3)
    if "gkls_global" in records:
        put("gkls_global_lamb_shift_heat", records["gkls_global"].meta["lamb_shift_heat"], 1e-12)
    if "gkls_local" in records:
        # site Lamb shifts commute with the site Hamiltonians only, so Tr[H_S i[rho, H_LS]] need not vanish
        checks["gkls_local_lamb_shift_heat"] = {"value": float(records["gkls_local"].meta["lamb_shift_heat"])}
    return checks

"""Command-line entry point: ``openbath decompose|bench-rates|simulate|heat``.

Every subcommand reads a YAML config (schema in :mod:`openbath.scenarios`),
writes its files atomically into ``--out`` and returns one of the exit codes

    0  success
    2  configuration error (unreadable file, unknown key, bad value)
    3  ``decompose`` finished but a fit missed ``decomposition.tolerance``
    4  numerical failure (fit, quadrature, propagation, truncation)

CSV files carry no timings, so identical configs and seeds give
byte-identical CSVs; timings go to the JSON summaries.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bath as _bath
from . import expfit as _fit
from . import rates as _rates
from . import scenarios as _scn
from . import thermo as _thermo
from .errors import ConfigError, OpenBathError
from .io import write_csv, write_json

__all__ = ["main", "load_config", "EXIT_OK", "EXIT_CONFIG", "EXIT_TOLERANCE", "EXIT_NUMERICAL"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TOLERANCE = 3
EXIT_NUMERICAL = 4

REPORT_POINTS = 512  # C(t) grid for the decomposition report when no samples exist
SPECTRUM_POINTS = 401

log = logging.getLogger("openbath")


def load_config(path=None, preset=None, seed=None):
    """Read and resolve a config file; ``preset`` and ``seed`` override its keys."""
    import yaml

    cfg = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if cfg is None:
            cfg = {}
        if not isinstance(cfg, dict):
            raise ConfigError("config: expected a mapping at the top level")
    if preset is not None:
        cfg = {**cfg, "preset": preset}
    if seed is not None:
        cfg = {**cfg, "seed": int(seed)}
    return _scn.resolve_config(cfg)


def _out_dir(args, cfg):
    out = args.out or cfg.get("outputs", {}).get("directory") or "openbath_out"
    os.makedirs(out, exist_ok=True)
    return out


def _formats(cfg):
    return set(cfg.get("outputs", {}).get("formats", ["csv", "json"]))


def _save_eb(eb, path):
    """Interchange file without run-dependent metadata."""
    meta = {k: v for k, v in eb.meta.items() if k != "wall_time"}
    _fit.save_exponential_bath(dataclasses.replace(eb, meta=meta), path)


def _label(entry, k):
    return entry.get("label") or f"bath{k}"


# ---------------------------------------------------------------- decompose

def _bohr_frequencies(cfg, specs, ebs):
    """Positive Bohr frequencies of the configured system, if there is one."""
    if not cfg.get("system"):
        return None
    try:
        scn = _scn.build_scenario(cfg, baths=ebs, bath_specs=specs)
    except ConfigError:
        return None
    w = np.concatenate([d.freqs for d in scn.decomps])
    return np.unique(np.round(np.abs(w[np.abs(w) > 1e-12]), 12))


def _decomposition_report(spec, eb, sig, dec):
    """rmse_time relative to max|C|, rmse_ps relative to max S."""
    if sig is not None:
        t, C = sig.times, sig.values
    else:
        t_max = dec.get("sampling", {}).get("t_max") or 40.0 / spec.model.scale()
        t = np.linspace(0.0, float(t_max), REPORT_POINTS)
        C = _bath.correlation_grid(spec, t)
    rmse_t = float(np.sqrt(np.mean(np.abs(_fit.reconstruct(eb, t) - C) ** 2)))
    scale = spec.model.scale()
    w = np.linspace(-5 * scale, 5 * scale, SPECTRUM_POINTS)
    S = _bath.power_spectrum(spec, w)
    rmse_s = float(np.sqrt(np.mean((_fit.effective_power_spectrum(eb, w) - S) ** 2)))
    cmax = float(np.max(np.abs(C)))
    return {
        "method": dec["method"],
        "m": len(eb),
        "rmse_time": rmse_t,
        "rmse_time_relative": rmse_t / cmax if cmax > 0 else math.inf,
        "max_abs_C": cmax,
        "rmse_ps": rmse_s,
        "rmse_ps_relative": rmse_s / max(float(np.max(np.abs(S))), 1e-300),
        "t_window": [float(t[0]), float(t[-1])],
    }


def cmd_decompose(args, cfg):
    out = _out_dir(args, cfg)
    if not cfg.get("baths"):
        raise ConfigError("baths: at least one bath is required")
    specs, ebs, reports = [], [], []
    for k, entry in enumerate(cfg["baths"]):
        spec = _scn.build_bath(entry)
        dec = _scn._decomp_entry(cfg, k)
        start = time.perf_counter()
        eb, sig = _scn.decompose_bath(spec, dec, cfg.get("seed", 0))
        elapsed = time.perf_counter() - start
        rep = _decomposition_report(spec, eb, sig, dec)
        rep.update(bath=_label(entry, k), tolerance=dec.get("tolerance"), wall_time=elapsed)
        tol = dec.get("tolerance")
        rep["within_tolerance"] = None if tol is None else bool(rep["rmse_time_relative"] <= tol)
        specs.append(spec)
        ebs.append(eb)
        reports.append(rep)
        _save_eb(eb, os.path.join(out, f"{rep['bath']}.eb.txt"))
        log.info("bath %s: %s with %d terms, rmse_time/max|C| = %.3g",
                 rep["bath"], rep["method"], rep["m"], rep["rmse_time_relative"])
    bohr = _bohr_frequencies(cfg, specs, ebs)
    for spec, eb, rep in zip(specs, ebs, reports):
        w = bohr if bohr is not None and bohr.size else np.array([1.0, 2.0]) * spec.model.scale()
        rep["detailed_balance_omegas"] = w.tolist()
        rep["detailed_balance_score"] = (None if math.isinf(spec.beta)
                                         else _fit.detailed_balance_score(eb, spec.beta, w))
    header = ["bath", "method", "m", "rmse_time", "rmse_time_relative", "rmse_ps", "rmse_ps_relative"]
    write_csv(os.path.join(out, "decomposition_report.csv"), header,
              [[r[h] for h in header] for r in reports])
    write_json(os.path.join(out, "decomposition_report.json"), {"baths": reports, "config": cfg})
    if any(r["within_tolerance"] is False for r in reports):
        log.error("decomposition missed the requested tolerance")
        return EXIT_TOLERANCE
    return EXIT_OK


# ---------------------------------------------------------------- bench-rates

def _best_time(fn, repeat=5):
    best = math.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _mean_rel(a, ref):
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(a - ref) / np.abs(ref)
    return rel, float(np.mean(rel[np.isfinite(rel)])) if np.any(np.isfinite(rel)) else None


def cmd_bench_rates(args, cfg):
    out = _out_dir(args, cfg)
    if not cfg.get("baths"):
        raise ConfigError("baths: at least one bath is required")
    bc = cfg.get("bench", {})
    spec = _scn.build_bath(cfg["baths"][0])
    eb, _ = _scn.decompose_bath(spec, _scn._decomp_entry(cfg, 0), cfg.get("seed", 0))
    n_times, n_pairs = int(bc.get("n_times", 100)), int(bc.get("n_pairs", 50))
    t_max = float(bc.get("t_max", 200.0))
    w_max = float(bc.get("omega_max", 2.5 * spec.model.scale()))
    eps = float(bc.get("eps", 1e-8))
    backend = bc.get("backend")
    rng = np.random.default_rng(cfg.get("seed", 0))
    w = rng.uniform(0.0, w_max, n_pairs)
    wp = rng.uniform(0.0, w_max, n_pairs)
    t = np.linspace(t_max / n_times, t_max, n_times)

    ga, xa = _rates._pairs_eval(eb, w, wp, t, backend)
    t_analytic = _best_time(lambda: _rates._pairs_eval(eb, w, wp, t, backend))
    summary = {"n_terms": len(eb), "n_pairs": n_pairs, "n_times": n_times, "t_max": t_max,
               "omega_max": w_max, "eps": eps, "seed": cfg.get("seed", 0),
               "backend": backend or _rates._backend.NAME, "analytic_time": t_analytic}
    if len(eb) == 0:
        # analytic rates vanish identically; a relative error against the oracle says nothing
        summary.update(relative_error_undefined=True, mean_relative_error_gamma=None,
                       mean_relative_error_xi=None, oracle_time_gamma=None, time_ratio=None)
        go = xo = np.full_like(ga, np.nan)
    else:
        start = time.perf_counter()
        go, _ = _rates.oracle_rates(spec, w, wp, t, eps, parts=("gamma",))
        t_oracle = time.perf_counter() - start
        summary.update(relative_error_undefined=False, oracle_time_gamma=t_oracle,
                       time_ratio=t_oracle / t_analytic)
        if bc.get("oracle_xi", True):
            start = time.perf_counter()
            _, xo = _rates.oracle_rates(spec, w, wp, t, eps, parts=("xi",))
            summary["oracle_time_xi"] = time.perf_counter() - start
        else:
            xo = np.full_like(xa, np.nan)
        _, summary["mean_relative_error_gamma"] = _mean_rel(ga, go)
        _, summary["mean_relative_error_xi"] = _mean_rel(xa, xo) if bc.get("oracle_xi", True) else (None, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        eg = np.abs(ga - go) / np.abs(go)
        ex = np.abs(xa - xo) / np.abs(xo)
    header = ["pair", "omega", "omega_prime", "t", "re_gamma", "im_gamma", "re_gamma_oracle",
              "im_gamma_oracle", "rel_err_gamma", "re_xi", "im_xi", "re_xi_oracle", "im_xi_oracle",
              "rel_err_xi"]
    rows = []
    for i in range(n_pairs):
        for j in range(n_times):
            rows.append([i, w[i], wp[i], t[j], ga[i, j].real, ga[i, j].imag, go[i, j].real, go[i, j].imag,
                         eg[i, j], xa[i, j].real, xa[i, j].imag, xo[i, j].real, xo[i, j].imag, ex[i, j]])
    write_csv(os.path.join(out, "bench_rates.csv"), header, rows,
              {"eps": eps, "n_terms": len(eb), "seed": cfg.get("seed", 0)})
    write_json(os.path.join(out, "bench_rates.json"), summary)
    log.info("analytic %.3g s, oracle/analytic = %s, mean rel. error Gamma %s",
             t_analytic, summary.get("time_ratio"), summary.get("mean_relative_error_gamma"))
    return EXIT_OK


# ---------------------------------------------------------------- simulate

def _log_checks(checks):
    for name, c in checks.items():
        verdict = "" if "passed" not in c else (" (pass)" if c["passed"] else " (FAIL)")
        log.info("check %s: %.6g%s", name, c["value"], verdict)


def _run_all(scn):
    methods = list(scn.methods)
    workers = min(_rates.n_threads(), len(methods)) or 1
    if workers == 1:
        return _scn.run_methods(scn)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = dict(zip(methods, pool.map(lambda m: _scn.run_methods(scn, [m])[m], methods)))
    return results


def _state_header(d):
    cols = []
    for i in range(d):
        for j in range(d):
            cols += [f"re_rho_{i}{j}", f"im_rho_{i}{j}"]
    return cols


def _write_states(path, res, method):
    d = res.states.shape[1]
    flat = res.states.reshape(res.times.size, d * d)
    rows = [[t] + [x for z in row for x in (z.real, z.imag)] for t, row in zip(res.times, flat)]
    write_csv(path, ["t [1/energy]"] + _state_header(d), rows, {"method": method, "index": "row-major"})


def _write_observables(path, res, method):
    names = list(res.observables)
    rows = [[t] + [res.observables[n][j] for n in names] for j, t in enumerate(res.times)]
    write_csv(path, ["t [1/energy]"] + names, rows, {"method": method})


def _plot(out, scn, results):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "openbath"
    for name in scn.observables:
        fig, ax = plt.subplots(figsize=(6, 4))
        for m, r in results.items():
            ax.plot(r.times, r.observables[name], label=m)
        ax.set_xlabel("t")
        ax.set_ylabel(name)
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(out, f"{name}.svg"), metadata={"Date": None})
        plt.close(fig)


def cmd_simulate(args, cfg):
    out = _out_dir(args, cfg)
    scn = _scn.build_scenario(cfg)
    if not scn.methods:
        raise ConfigError("methods: nothing to run")
    for k, (entry, eb) in enumerate(zip(cfg.get("baths", []), scn.baths)):
        _save_eb(eb, os.path.join(out, f"{_label(entry, k)}.eb.txt"))
    results = _run_all(scn)
    for m, r in results.items():
        _write_states(os.path.join(out, f"states_{m}.csv"), r, m)
        _write_observables(os.path.join(out, f"observables_{m}.csv"), r, m)
    names = list(results)
    ref = names[0]
    fid = {m: _scn.fidelity_series(results[m], results[ref]) for m in names[1:]}
    write_csv(os.path.join(out, "fidelity.csv"), ["t [1/energy]"] + [f"F_{m}_{ref}" for m in fid],
              [[t] + [fid[m][j] for m in fid] for j, t in enumerate(scn.t_grid)], {"reference": ref})
    checks = _scn.scenario_checks(scn, results)
    summary = {
        "methods": {m: {"wall_time": r.meta.get("wall_time"), "trace_error": r.trace_error(),
                        "hermiticity_error": r.hermiticity_error(), "min_eigenvalue": r.min_eigenvalue()}
                    for m, r in results.items()},
        "min_fidelity": {m: float(f.min()) for m, f in fid.items()},
        "checks": checks,
        "n_terms": [len(eb) for eb in scn.baths],
        "config": cfg,
    }
    write_json(os.path.join(out, "summary.json"), summary)
    if "svg" in _formats(cfg):
        _plot(out, scn, results)
    _log_checks(checks)
    return EXIT_OK


# ---------------------------------------------------------------- heat

def cmd_heat(args, cfg):
    out = _out_dir(args, cfg)
    scn = _scn.build_scenario(cfg)
    if not any(m in _scn.HEAT_METHODS for m in scn.methods):
        raise ConfigError(f"methods: heat needs one of {', '.join(_scn.HEAT_METHODS)}")
    records, results = _scn.run_heat(scn)
    for m, rec in records.items():
        _thermo.write_heat_csv(rec, os.path.join(out, f"heat_{m}.csv"), {"method": m})
    ref = cfg.get("heat", {}).get("reference_bath") or scn.labels[-1]
    comp = [m for m in records if m != "cumulant_fd"]
    write_csv(os.path.join(out, "heat_comparison.csv"), ["t [1/energy]"] + [f"J_{ref}_{m} [energy^2]" for m in comp],
              [[t] + [records[m].per_bath_currents[ref][j] for m in comp] for j, t in enumerate(scn.t_grid)],
              {"bath": ref, "sign": "J > 0 is energy flowing from the bath into the system"})
    checks = _scn.heat_checks(scn, records)
    summary = {
        "reference_bath": ref,
        "checks": checks,
        "methods": {m: {k: v for k, v in rec.meta.items()} for m, rec in records.items()},
        "run_time": {m: r.meta.get("wall_time") for m, r in results.items()},
        "config": cfg,
    }
    write_json(os.path.join(out, "heat_summary.json"), summary)
    _log_checks(checks)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

COMMANDS = {"decompose": cmd_decompose, "bench-rates": cmd_bench_rates, "simulate": cmd_simulate,
            "heat": cmd_heat}


def build_parser():
    p = argparse.ArgumentParser(prog="openbath", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML config file")
        s.add_argument("--preset", choices=sorted(_scn.PRESETS), help="start from a built-in scenario")
        s.add_argument("--out", help="output directory (default: outputs.directory or ./openbath_out)")
        s.add_argument("--seed", type=int, help="overrides the config seed")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="openbath: %(message)s", stream=sys.stderr)
    if args.config is None and args.preset is None:
        print("openbath: error: give --config or --preset", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.preset, args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"openbath: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OpenBathError, np.linalg.LinAlgError) as exc:
        print(f"openbath: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

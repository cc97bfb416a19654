"""Compiled vs pure-Python rate kernels on the same inputs.

Usage::

    python benchmarks/bench_kernels.py [--terms 12] [--times 200] [--pairs 50] [--repeat 3] [--json out.json]

Each kernel is timed on both backends (best of ``--repeat``) and the largest
relative difference between the two outputs is printed next to the speedup.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from openbath import _backend


def _inputs(n_terms, n_times, n_pairs, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=n_terms) + 1j * rng.normal(size=n_terms)
    nu = rng.uniform(0.05, 3.0, n_terms) + 1j * rng.uniform(-3.0, 3.0, n_terms)
    w = rng.uniform(-3.0, 3.0, n_pairs)
    wp = rng.uniform(-3.0, 3.0, n_pairs)
    t = np.linspace(0.0, 200.0, n_times)
    return c, nu, w, wp, t


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def _rel(a, b):
    a = np.concatenate([np.ravel(x) for x in (a if isinstance(a, tuple) else (a,))])
    b = np.concatenate([np.ravel(x) for x in (b if isinstance(b, tuple) else (b,))])
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def run(n_terms=12, n_times=200, n_pairs=50, repeat=3, seed=0):
    if "compiled" not in _backend.BACKENDS:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")
    c, nu, w, wp, t = _inputs(n_terms, n_times, n_pairs, seed)
    cases = {
        "gamma_xi": lambda k: k.gamma_xi(c, nu, w, wp, t),
        "redfield_gamma": lambda k: k.redfield_gamma(c, nu, w, t),
        "tcl_sums": lambda k: k.tcl_sums(c, nu, t),
    }
    rows = []
    for name, fn in cases.items():
        tc, oc = _best(lambda: fn(_backend.get("compiled")), repeat)
        tp, op = _best(lambda: fn(_backend.get("python")), repeat)
        rows.append({"kernel": name, "compiled_s": tc, "python_s": tp, "speedup": tp / tc,
                     "max_rel_diff": _rel(oc, op)})
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--terms", type=int, default=12)
    p.add_argument("--times", type=int, default=200)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write the table as JSON")
    a = p.parse_args(argv)
    rows = run(a.terms, a.times, a.pairs, a.repeat, a.seed)
    print(f"{'kernel':<16}{'compiled [s]':>14}{'python [s]':>14}{'speedup':>10}{'max rel diff':>15}")
    for r in rows:
        print(f"{r['kernel']:<16}{r['compiled_s']:>14.4g}{r['python_s']:>14.4g}{r['speedup']:>10.1f}"
              f"{r['max_rel_diff']:>15.2e}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()

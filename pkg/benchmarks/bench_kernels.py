"""Time the compiled BP kernel against the numpy fallback.

Each workload runs once per backend to warm up, then ``--repeat`` times; the
best time is reported.  Beliefs from the two backends are compared so a speedup
never hides a wrong answer.

    python benchmarks/bench_kernels.py --repeat 5
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from lcbp import kernels
from lcbp.bp import bp_beliefs, run_bp
from lcbp.cavity import init_clamped
from lcbp.models import KFactorSpec, RegularSpinSpec, gen_k_factor, gen_regular_spin, spin_to_factor_graph


def _workloads():
    spin = {n: spin_to_factor_graph(gen_regular_spin(RegularSpinSpec(n, 3, 0.5, 2.0, seed=0)))
            for n in (24, 50, 200)}
    kfac = gen_k_factor(KFactorSpec(50, 50, 3, 1.0, seed=0))
    return [
        ("bp regular N=50", lambda: run_bp(spin[50], tol=1e-12)),
        ("bp regular N=200", lambda: run_bp(spin[200], tol=1e-12)),
        ("bp kfactor N=50 k=3", lambda: run_bp(kfac, tol=1e-12)),
        ("clamped cavities regular N=24", lambda: init_clamped(spin[24], "bp")),
    ], spin[200]


def _beliefs_gap(g):
    out = {}
    for name in kernels.BACKENDS:
        with kernels.using(name):
            msgs, _ = run_bp(g, tol=1e-12)
            out[name] = bp_beliefs(g, msgs)[0]
    if len(out) < 2:
        return 0.0
    a, b = out.values()
    return max(float(np.max(np.abs(a[v].array - b[v].array))) for v in a)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if "compiled" not in kernels.BACKENDS:
        print("compiled kernel not built; only the numpy fallback is available", file=sys.stderr)
    work, check_graph = _workloads()
    print(f"{'workload':34s}" + "".join(f"{b:>12s}" for b in kernels.BACKENDS) + "     speedup")
    for label, fn in work:
        best = {}
        for name in kernels.BACKENDS:
            with kernels.using(name):
                fn()
                best[name] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        speed = best["python"] / best["compiled"] if "compiled" in best else float("nan")
        print(f"{label:34s}" + "".join(f"{best[b]:11.4f}s" for b in kernels.BACKENDS) + f"{speed:11.1f}x")
    print(f"max belief difference between backends: {_beliefs_gap(check_graph):.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

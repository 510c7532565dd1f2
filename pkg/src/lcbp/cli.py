"""Command-line entry point: ``lcbp {gen,exact,run,bench}``.

Exit status is 0 on success, 1 on a usage or input error and 2 when a
computation hits a capacity guard or a degenerate (zero-support) model.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from . import bench as _bench
from . import models as _models
from .cavity import init_cavities, read_cavities, write_cavities
from .core import (CapacityError, DegenerateError, DomainError, FactorGraph, LCBPError,
                   parse_factor_graph, write_factor_graph)
from .cumulant import PairwiseBinaryModel, dumps_spin_model, parse_spin_model, spin_to_factor_graph
from .exact import exact_marginals

EXIT_OK, EXIT_USAGE, EXIT_COMPUTE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str) -> list[int]:
    """'0-15', '3', '1,4,9' or mixtures such as '0-3,10'."""
    out = []
    try:
        for part in filter(None, (x.strip() for x in text.split(","))):
            lo, _, hi = part.partition("-")
            a = int(lo)
            b = int(hi) if hi else a
            if b < a or a < 0:
                raise UsageError(f"bad seed range {part!r}")
            out.extend(range(a, b + 1))
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc
    if not out:
        raise UsageError("no seeds given")
    return out


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(str(exc)) from exc


def load_instance(path: str) -> tuple[FactorGraph, PairwiseBinaryModel | None]:
    """Read either the factor-graph format or the pairwise spin format (detected by content)."""
    text = _read_text(path)
    first = next((ln.split()[0] for ln in text.splitlines()
                  if ln.strip() and not ln.lstrip().startswith("#")), "")
    if first in ("J", "θ", "theta"):
        model = parse_spin_model(text)
        return spin_to_factor_graph(model), model
    return parse_factor_graph(text), None


def _write_marginals(marg, out, header: list[str]) -> None:
    for line in header:
        out.write(f"# {line}\n")
    for i in sorted(marg):
        out.write(f"{i} " + " ".join(repr(float(p)) for p in marg[i].values) + "\n")


def _open_out(path: str | None):
    if path in (None, "-"):
        return contextlib.nullcontext(sys.stdout)
    return open(path, "w")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(a) -> int:
    if a.family == "regular":
        spec = _models.RegularSpinSpec(a.n, a.d, a.beta, a.theta, a.couplings, a.seed)
        model = _models.gen_regular_spin(spec)
        g = spin_to_factor_graph(model)
    else:
        spec = _models.KFactorSpec(a.n, a.m, a.k, a.beta, a.seed)
        model, g = None, _models.gen_k_factor(spec)
    with _open_out(a.out) as fh:
        fh.write(_models.manifest_line(spec) + "\n")
        write_factor_graph(g, fh)
    if a.spin_out:
        if model is None:
            raise UsageError("--spin-out only applies to the regular family")
        Path(a.spin_out).write_text(_models.manifest_line(spec) + "\n" + dumps_spin_model(model))
    return EXIT_OK


def cmd_exact(a) -> int:
    g, _ = load_instance(a.instance)
    res = exact_marginals(g)
    with _open_out(a.out) as fh:
        _write_marginals(res.marginals, fh, ["method exact", f"logZ {res.logZ!r}"])
    return EXIT_OK


def cmd_run(a) -> int:
    g, model = load_instance(a.instance)
    cavities = None
    if a.cavity_cache and Path(a.cavity_cache).exists():
        cavities = read_cavities(Path(a.cavity_cache).read_text())
    elif a.method in ("lcbp", "lcbp-cum", "lcbp-cum-lin"):
        kw = {} if a.cavity_init == "uniform" else dict(tol=a.tol, max_iter=a.max_iter, damping=a.damping)
        cavities = init_cavities(g, a.cavity_init, **kw)
        if a.cavity_cache:
            with open(a.cavity_cache, "w") as fh:
                write_cavities(cavities, fh)
    res = _bench.run_method(g, a.method, a.cavity_init, a.tol, a.max_iter, a.damping, model, cavities)
    header = [f"method {a.method}", f"converged {int(res.converged)}", f"iterations {res.iterations}"]
    if a.method.startswith("lcbp"):
        header.insert(1, f"cavity-init {a.cavity_init}")
    if a.error:
        truth = exact_marginals(g).marginals
        header.append(f"max_error {_bench.max_linf_error(res.beliefs, truth)!r}")
    if res.notes:
        header.append(f"notes {res.notes}")
    with _open_out(a.out) as fh:
        _write_marginals(res.beliefs, fh, header)
    return EXIT_OK


_BENCH_FLAGS = {"family": "family", "n": "N", "d": "d", "k": "k", "m": "M", "beta": "beta",
                "theta": "theta", "couplings": "couplings", "methods": "methods",
                "cavity_init": "cavity_init", "tol": "tol", "max_iter": "max_iter",
                "damping": "damping", "jobs": "jobs"}


def cmd_bench(a) -> int:
    data = {}
    if a.config:
        try:
            data = json.loads(_read_text(a.config))
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad config file: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    for flag, key in _BENCH_FLAGS.items():
        v = getattr(a, flag)
        if v is not None:
            data[key] = v
    if isinstance(data.get("methods"), str):
        data["methods"] = [m.strip() for m in data["methods"].split(",") if m.strip()]
    if a.seeds is not None:
        data["seeds"] = parse_seeds(a.seeds)
    elif isinstance(data.get("seeds"), str):
        data["seeds"] = parse_seeds(data["seeds"])
    if a.no_timing:
        data["timing"] = False
    try:
        cfg = _bench.SuiteConfig.from_mapping(data)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc
    result = _bench.run_suite(cfg)
    with _open_out(a.out) as fh:
        _bench.write_csv(result.records, fh)
    for reason in result.skipped:
        print(f"skipped: {reason}", file=sys.stderr)
    if a.summary:
        print("method converged log_mean_error mean_seconds", file=sys.stderr)
        for s in _bench.summarize(result.records):
            print(f"{s.method} {s.converged_fraction:.3f} {s.log_mean_error:.3e} {s.mean_seconds:.3f}",
                  file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lcbp", description="Loop-corrected belief propagation and benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a random instance")
    g.add_argument("--family", choices=("regular", "kfactor"), default="regular")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=3, help="degree (regular family)")
    g.add_argument("--k", type=int, default=3, help="factor arity (kfactor family)")
    g.add_argument("--m", type=int, default=None, help="number of factors (kfactor family)")
    g.add_argument("--beta", type=float, required=True)
    g.add_argument("--theta", type=float, default=0.0)
    g.add_argument("--couplings", choices=("mixed", "attractive"), default="mixed")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="factor-graph file (default stdout)")
    g.add_argument("--spin-out", help="also write the pairwise spin format here")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("exact", help="exact single-variable marginals")
    e.add_argument("instance")
    e.add_argument("--out")
    e.set_defaults(func=cmd_exact)

    r = sub.add_parser("run", help="run one method on one instance")
    r.add_argument("instance")
    r.add_argument("--method", choices=_bench.METHODS, default="lcbp")
    r.add_argument("--cavity-init", choices=_bench.CAVITY_INITS, default="bp")
    r.add_argument("--tol", type=float, default=1e-9)
    r.add_argument("--max-iter", type=int, default=10000)
    r.add_argument("--damping", type=float, default=0.0)
    r.add_argument("--cavity-cache", help="read initial cavities from this file, or write them if absent")
    r.add_argument("--error", action="store_true", help="also report the error against exact marginals")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a benchmark suite and write CSV")
    b.add_argument("--config", help="JSON object of suite settings; flags override it")
    b.add_argument("--family", choices=("regular", "kfactor"))
    b.add_argument("--n", type=int)
    b.add_argument("--d", type=int)
    b.add_argument("--k", type=int)
    b.add_argument("--m", type=int)
    b.add_argument("--beta", type=float)
    b.add_argument("--theta", type=float)
    b.add_argument("--couplings", choices=("mixed", "attractive"))
    b.add_argument("--seeds", help="e.g. 0-15 or 1,4,9")
    b.add_argument("--methods", help="comma-separated subset of " + ",".join(_bench.METHODS))
    b.add_argument("--cavity-init", choices=_bench.CAVITY_INITS)
    b.add_argument("--tol", type=float)
    b.add_argument("--max-iter", type=int)
    b.add_argument("--damping", type=float)
    b.add_argument("--jobs", type=int, help="worker processes (default 1)")
    b.add_argument("--no-timing", action="store_true",
                   help="write 0 for wall_seconds so repeated runs give byte-identical CSV")
    b.add_argument("--summary", action="store_true", help="print per-method summary to stderr")
    b.add_argument("--out", help="CSV path (default stdout)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "family", None) == "kfactor" and args.command == "gen" and args.m is None:
        args.m = args.n
    try:
        return args.func(args)
    except (CapacityError, DegenerateError) as exc:
        print(f"lcbp: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except (UsageError, DomainError, LCBPError, ValueError) as exc:
        print(f"lcbp: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Benchmark harness: run inference methods on generated instances, score them
against exact marginals, and emit CSV records."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from . import bp as _bp
from . import cavity as _cavity
from . import cumulant as _cum
from . import exact as _exact
from . import loopcorrect as _lc
from . import models as _models
from .core import CapacityError, DegenerateError, DomainError, FactorGraph, FactorTable

log = logging.getLogger(__name__)

METHODS = ("mf", "bp", "lcbp", "lcbp-cum", "lcbp-cum-lin", "exact")
CAVITY_INITS = ("uniform", "bp", "mf", "exact")
CSV_COLUMNS = ("seed", "family", "N", "d_or_k", "beta", "theta", "method", "converged",
               "iterations", "wall_seconds", "max_error")


@dataclass
class BenchmarkRecord:
    seed: int
    family: str
    N: int
    d_or_k: int
    beta: float
    theta: float
    method: str
    converged: bool
    iterations: int
    wall_seconds: float
    max_error: float
    notes: str = field(default="", compare=False)


def max_linf_error(approx: Mapping[int, FactorTable], exact: Mapping[int, FactorTable]) -> float:
    """Largest absolute gap between approximate and exact single-variable marginals."""
    if set(approx) != set(exact):
        raise DomainError("approximate and exact marginals cover different variables")
    err = 0.0
    for i, p in exact.items():
        a = np.asarray(approx[i].array if isinstance(approx[i], FactorTable) else approx[i])
        if a.shape != p.array.shape:
            raise DomainError(f"marginal of variable {i} has the wrong number of states")
        err = max(err, float(np.max(np.abs(a - p.array))) if a.size else 0.0)
    return err


# ---------------------------------------------------------------------------
# running one method


@dataclass
class MethodResult:
    beliefs: dict[int, FactorTable]
    converged: bool
    iterations: int
    notes: str = ""


def run_method(g: FactorGraph, method: str, cavity_init: str = "bp", tol: float = 1e-9,
               max_iter: int = 10000, damping: float = 0.0,
               model: _cum.PairwiseBinaryModel | None = None,
               cavities: _cavity.CavitySet | None = None) -> MethodResult:
    """Run one inference method on ``g`` and return its single-variable beliefs."""
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "exact":
        res = _exact.exact_marginals(g)
        return MethodResult(res.marginals, True, 0)
    if method == "bp":
        msgs, rep = _bp.run_bp(g, tol, max_iter, damping)
        vb, _ = _bp.bp_beliefs(g, msgs)
        return MethodResult(vb, rep.converged, rep.iterations)
    if method == "mf":
        res = _bp.run_mean_field(g, tol, max_iter)
        return MethodResult(res.beliefs, res.report.converged, res.report.iterations)
    if cavity_init not in CAVITY_INITS:
        raise DomainError(f"unknown cavity initialization {cavity_init!r}")
    if cavities is None:
        kw = {} if cavity_init == "uniform" else dict(tol=tol, max_iter=max_iter, damping=damping)
        cavities = _cavity.init_cavities(g, cavity_init, **kw)
    notes = ""
    bad = sum(cavities.nonconverged.values())
    if bad:
        notes = f"{bad} clamped cavity runs did not converge"
    if method == "lcbp":
        res = _lc.run_lc(g, cavities, tol, max_iter, damping)
        if res.zero_denominators:
            notes = "; ".join(filter(None, [notes, f"{res.zero_denominators} zero denominators"]))
        return MethodResult(res.beliefs, res.report.converged, res.report.iterations, notes)
    model = model or _cum.factor_graph_to_spin(g)
    state = _cum.CumulantState.from_cavities(model, cavities.tables)
    run = _cum.run_lcbp_cum if method == "lcbp-cum" else _cum.run_lcbp_cum_lin
    try:
        res = run(model, state, tol, max_iter, damping)
    except DegenerateError as exc:
        uniform = {i: FactorTable((i,), (2,), [0.5, 0.5]) for i in g.var_ids}
        return MethodResult(uniform, False, 0, "; ".join(filter(None, [notes, str(exc)])))
    return MethodResult(res.beliefs, res.report.converged, res.report.iterations, notes)


# ---------------------------------------------------------------------------
# suites


@dataclass
class SuiteConfig:
    family: str = "regular"
    N: int = 24
    d: int = 3
    k: int = 3
    M: int = 24
    beta: float = 0.5
    theta: float = 2.0
    couplings: str = "mixed"
    seeds: Sequence[int] = tuple(range(16))
    methods: Sequence[str] = ("bp", "lcbp")
    cavity_init: str = "bp"
    tol: float = 1e-9
    max_iter: int = 10000
    damping: float = 0.0
    timing: bool = True
    jobs: int = 1

    def __post_init__(self):
        if self.family not in ("regular", "kfactor"):
            raise DomainError(f"unknown family {self.family!r}")
        for m in self.methods:
            if m not in METHODS:
                raise DomainError(f"unknown method {m!r}")
        if self.cavity_init not in CAVITY_INITS:
            raise DomainError(f"unknown cavity initialization {self.cavity_init!r}")
        self.seeds = tuple(int(s) for s in self.seeds)
        self.methods = tuple(self.methods)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SuiteConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise DomainError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @property
    def d_or_k(self) -> int:
        return self.d if self.family == "regular" else self.k


def make_instance(cfg: SuiteConfig, seed: int):
    """(factor graph, spin model or None) for one seed of the configured family."""
    if cfg.family == "regular":
        spec = _models.RegularSpinSpec(cfg.N, cfg.d, cfg.beta, cfg.theta, cfg.couplings, seed)
        model = _models.gen_regular_spin(spec)
        return _models.spin_to_factor_graph(model), model
    spec = _models.KFactorSpec(cfg.N, cfg.M, cfg.k, cfg.beta, seed)
    return _models.gen_k_factor(spec), None


def _run_instance(args) -> tuple[list[BenchmarkRecord], str | None]:
    cfg, seed = args
    g, model = make_instance(cfg, seed)
    base = dict(seed=seed, family=cfg.family, N=cfg.N, d_or_k=cfg.d_or_k,
                beta=float(cfg.beta), theta=float(cfg.theta if cfg.family == "regular" else 0.0))
    try:
        truth = _exact.exact_marginals(g).marginals
    except (CapacityError, DegenerateError) as exc:
        return [], f"seed {seed}: exact marginals unavailable ({exc})"
    records = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            res = run_method(g, method, cfg.cavity_init, cfg.tol, cfg.max_iter, cfg.damping, model)
        except (CapacityError, DegenerateError) as exc:
            log.warning("seed %d, %s: %s", seed, method, exc)
            records.append(BenchmarkRecord(**base, method=method, converged=False, iterations=0,
                                           wall_seconds=0.0, max_error=math.nan, notes=str(exc)))
            continue
        wall = time.perf_counter() - t0 if cfg.timing else 0.0
        err = min(1.0, max_linf_error(res.beliefs, truth))
        records.append(BenchmarkRecord(**base, method=method, converged=res.converged,
                                       iterations=res.iterations, wall_seconds=wall,
                                       max_error=err, notes=res.notes))
    return records, None


@dataclass
class SuiteResult:
    records: list[BenchmarkRecord]
    skipped: list[str]


def run_suite(cfg: SuiteConfig) -> SuiteResult:
    work = [(cfg, s) for s in cfg.seeds]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            out = list(pool.map(_run_instance, work))
    else:
        out = [_run_instance(w) for w in work]
    records, skipped = [], []
    for recs, reason in out:
        records.extend(recs)
        if reason:
            skipped.append(reason)
            log.warning(reason)
    rank = {m: k for k, m in enumerate(cfg.methods)}
    records.sort(key=lambda r: (r.seed, rank[r.method]))
    return SuiteResult(records, skipped)


@dataclass
class MethodSummary:
    method: str
    instances: int
    converged_fraction: float
    log_mean_error: float
    mean_seconds: float


def summarize(records: Iterable[BenchmarkRecord]) -> list[MethodSummary]:
    """Per-method convergence fraction and error averaged in the log domain over converged runs."""
    by: dict[str, list[BenchmarkRecord]] = {}
    for r in records:
        by.setdefault(r.method, []).append(r)
    out = []
    for method, rs in by.items():
        ok = [r for r in rs if r.converged and not math.isnan(r.max_error)]
        errs = np.array([r.max_error for r in ok])
        if len(errs) == 0:
            lme = math.nan
        elif np.any(errs <= 0):
            lme = 0.0
        else:
            lme = float(np.exp(np.mean(np.log(errs))))
        out.append(MethodSummary(method, len(rs), len(ok) / len(rs), lme,
                                 float(np.mean([r.wall_seconds for r in rs]))))
    return out


# ---------------------------------------------------------------------------
# CSV


def write_csv(records: Iterable[BenchmarkRecord], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow([r.seed, r.family, r.N, r.d_or_k, repr(r.beta), repr(r.theta), r.method,
                    int(r.converged), r.iterations, repr(r.wall_seconds), repr(r.max_error)])


def dumps_csv(records: Iterable[BenchmarkRecord]) -> str:
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


def read_csv(text: str) -> list[BenchmarkRecord]:
    rows = csv.DictReader(io.StringIO(text))
    if tuple(rows.fieldnames or ()) != CSV_COLUMNS:
        raise DomainError(f"unexpected CSV header {rows.fieldnames}")
    out = []
    for row in rows:
        out.append(BenchmarkRecord(
            seed=int(row["seed"]), family=row["family"], N=int(row["N"]), d_or_k=int(row["d_or_k"]),
            beta=float(row["beta"]), theta=float(row["theta"]), method=row["method"],
            converged=bool(int(row["converged"])), iterations=int(row["iterations"]),
            wall_seconds=float(row["wall_seconds"]), max_error=float(row["max_error"])))
    return out

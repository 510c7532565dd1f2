"""Cavity networks and initial approximations of cavity distributions.

An initial cavity table for variable ``i`` lives on its Markov blanket.  It is
either uniform, or obtained by clamping the blanket of the cavity network to
every joint state in turn and weighting each state by ``exp(-F)``, where ``F``
is the (Bethe, mean-field or exact) free energy of the clamped network.
"""

from __future__ import annotations

import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from . import bp as _bp
from .core import (CapacityError, DegenerateError, DomainError, FactorGraph, FactorTable,
                   _Tokens, clamp, read_table_block, write_table_block)
from .exact import log_partition

log = logging.getLogger(__name__)

ENGINES = ("bp", "mf", "exact")
CLAMP_GUARD = 2 ** 16


@dataclass
class CavitySet:
    tables: dict[int, FactorTable]
    method: str
    # variable id -> number of clamp states whose engine run did not converge
    nonconverged: dict[int, int] = field(default_factory=dict)
    # variable id -> number of engine runs spent on it
    runs: dict[int, int] = field(default_factory=dict)

    def __getitem__(self, i: int) -> FactorTable:
        return self.tables[i]

    @property
    def all_converged(self) -> bool:
        return not any(self.nonconverged.values())


def cavity_network(g: FactorGraph, i: int) -> FactorGraph:
    """Remove variable ``i`` and every factor that contains it."""
    g.card(i)
    nb = set(g.nbv[i])
    return g.subgraph((v for v in g.var_ids if v != i),
                      (n for n in range(len(g.factors)) if n not in nb))


def init_uniform(g: FactorGraph) -> CavitySet:
    tables = {i: FactorTable.uniform(g.blanket[i], g.cards_of(g.blanket[i])) for i in g.var_ids}
    return CavitySet(tables, "uniform")


class _ClampedFamily:
    """The cavity network of ``i`` with its blanket clamped, for every blanket state.

    Structure is compiled once; only the values of the sliced factors change
    between clamp states.
    """

    def __init__(self, g: FactorGraph, i: int):
        self.blanket = g.blanket[i]
        self.cards = g.cards_of(self.blanket)
        self.cavity = cavity_network(g, i)
        first = dict(zip(self.blanket, (0,) * len(self.blanket)))
        self.template = clamp(self.cavity, first)
        self.compiled = _bp.CompiledGraph(self.template)
        bset = set(self.blanket)
        self.sliced = [(n, f) for n, f in enumerate(self.cavity.factors) if bset & set(f.vars)]

    def states(self):
        # linear-index order: first blanket variable fastest
        for combo in itertools.product(*(range(c) for c in reversed(self.cards))):
            yield dict(zip(self.blanket, reversed(combo)))

    def graph(self, state: dict[int, int]) -> FactorGraph:
        return clamp(self.cavity, state)

    def patch(self, state: dict[int, int]) -> np.ndarray:
        cg = self.compiled
        vals = cg.vals.copy()
        for n, f in self.sliced:
            idx = tuple(state[v] if v in state else slice(None) for v in f.vars)
            arr = f.array[idx]
            vals[cg.val_ptr[n]:cg.val_ptr[n] + arr.size] = np.ravel(arr, order="F")
        return vals


def _free_energy(engine, fam: _ClampedFamily, state, tol, max_iter, damping):
    """(F, converged) for one clamp state; F = +inf when the clamped network has no support."""
    if engine == "bp":
        cg = fam.compiled
        cg.vals = fam.patch(state)
        try:
            msgs, rep = _bp.run_bp(cg.graph, tol, max_iter, damping, compiled=cg)
        except DegenerateError:
            return math.inf, True
        return _bp.bethe_from_messages(cg, msgs), rep.converged
    g = fam.graph(state)
    if engine == "mf":
        res = _bp.run_mean_field(g, tol, max_iter)
        return res.free_energy, res.report.converged
    if engine == "exact":
        return -log_partition(g), True
    raise DomainError(f"unknown cavity engine {engine!r}")


def clamped_cavity(g: FactorGraph, i: int, engine: str = "bp", tol: float = 1e-9,
                   max_iter: int = 10000, guard: int = CLAMP_GUARD,
                   damping: float = 0.0) -> tuple[FactorTable, int, int]:
    """Initial cavity table of one variable; returns (table, runs, non-converged runs)."""
    if engine not in ENGINES:
        raise DomainError(f"unknown cavity engine {engine!r}")
    blanket = g.blanket[i]
    cards = g.cards_of(blanket)
    if math.prod(cards) > guard:
        raise CapacityError(f"blanket of variable {i} has {math.prod(cards)} states (guard {guard})")
    fam = _ClampedFamily(g, i)
    logw = []
    bad = 0
    for state in fam.states():
        F, ok = _free_energy(engine, fam, state, tol, max_iter, damping)
        bad += not ok
        logw.append(-F)
    logw = np.array(logw)
    top = logw.max()
    if not np.isfinite(top):
        raise DegenerateError(f"every clamp state of the cavity of variable {i} has zero weight")
    w = np.exp(logw - top)
    table = FactorTable(blanket, cards, w / w.sum())
    return table, len(logw), bad


def _job(args):
    g, i, engine, tol, max_iter, guard, damping = args
    return i, clamped_cavity(g, i, engine, tol, max_iter, guard, damping)


def init_clamped(g: FactorGraph, engine: str = "bp", tol: float = 1e-9, max_iter: int = 10000,
                 guard: int = CLAMP_GUARD, damping: float = 0.0, jobs: int = 1) -> CavitySet:
    """Clamped-cavity initialization of every variable, merged by variable id."""
    if engine not in ENGINES:
        raise DomainError(f"unknown cavity engine {engine!r}")
    for i in g.var_ids:
        n = math.prod(g.cards_of(g.blanket[i]))
        if n > guard:
            raise CapacityError(f"blanket of variable {i} has {n} states (guard {guard})")
    work = [(g, i, engine, tol, max_iter, guard, damping) for i in g.var_ids]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = dict(pool.map(_job, work))
    else:
        results = dict(map(_job, work))
    out = CavitySet({}, engine + "-clamp" if engine != "exact" else "exact")
    for i in sorted(results):
        table, runs, bad = results[i]
        out.tables[i] = table
        out.runs[i] = runs
        out.nonconverged[i] = bad
        if bad:
            log.warning("cavity of variable %d: %d of %d clamped %s runs did not converge",
                        i, bad, runs, engine)
    return out


def init_cavities(g: FactorGraph, method: str, **kw) -> CavitySet:
    """Dispatch on a method name: ``uniform``, ``bp``, ``mf`` or ``exact``."""
    if method == "uniform":
        return init_uniform(g)
    return init_clamped(g, method, **kw)


# ---------------------------------------------------------------------------
# cache file: "<count>" then per cavity a "var <id> <method>" line and a table block


def write_cavities(cs: CavitySet, out: TextIO) -> None:
    out.write(f"{len(cs.tables)}\n")
    for i in sorted(cs.tables):
        out.write(f"\nvar {i} {cs.method}\n")
        write_table_block(cs.tables[i], out)


def read_cavities(text: str) -> CavitySet:
    tok = _Tokens(text)
    n = int(tok.line())
    tables = {}
    method = "uniform"
    for _ in range(n):
        head = tok.line().split()
        if len(head) < 2 or head[0] != "var":
            raise DomainError(f"expected 'var <id> [method]', got {' '.join(head)!r}")
        i = int(head[1])
        if len(head) > 2:
            method = head[2]
        tables[i] = read_table_block(tok)
    return CavitySet(tables, method)


def dumps_cavities(cs: CavitySet) -> str:
    buf = io.StringIO()
    write_cavities(cs, buf)
    return buf.getvalue()

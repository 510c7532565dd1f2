"""Sum-product belief propagation, mean field, and their free energies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .core import DegenerateError, DomainError, FactorGraph, FactorTable


@dataclass
class ConvergenceReport:
    converged: bool
    iterations: int
    final_delta: float


class CompiledGraph:
    """Flat integer/float arrays describing a factor graph for the BP kernels."""

    def __init__(self, g: FactorGraph):
        self.graph = g
        self.ids = g.var_ids
        local = {v: k for k, v in enumerate(self.ids)}
        self.card = np.array([v.cardinality for v in g.variables], dtype=np.int64)
        fac_ptr = [0]
        fac_var = []
        val_ptr = []
        vals = []
        off = 0
        for f in g.factors:
            fac_var.extend(local[v] for v in f.vars)
            fac_ptr.append(len(fac_var))
            val_ptr.append(off)
            vals.append(f.values)
            off += f.size
        self.fac_ptr = np.array(fac_ptr, dtype=np.int64)
        self.fac_var = np.array(fac_var, dtype=np.int64)
        self.val_ptr = np.array(val_ptr + [off], dtype=np.int64)
        self.vals = np.ascontiguousarray(np.concatenate(vals) if vals else np.zeros(0))
        msg_ptr = np.zeros(len(fac_var) + 1, dtype=np.int64)
        if fac_var:
            np.cumsum(self.card[self.fac_var], out=msg_ptr[1:])
        self.msg_ptr = msg_ptr
        var_edges: list[list[int]] = [[] for _ in self.ids]
        for e, v in enumerate(fac_var):
            var_edges[v].append(e)
        self.var_ptr = np.zeros(len(self.ids) + 1, dtype=np.int64)
        self.var_ptr[1:] = np.cumsum([len(es) for es in var_edges])
        self.var_edges = np.array([e for es in var_edges for e in es], dtype=np.int64)
        self.bel_ptr = np.zeros(len(self.ids) + 1, dtype=np.int64)
        self.bel_ptr[1:] = np.cumsum(self.card)

    def uniform_messages(self) -> np.ndarray:
        m = np.empty(self.msg_ptr[-1])
        for e, v in enumerate(self.fac_var):
            c = self.card[v]
            m[self.msg_ptr[e]:self.msg_ptr[e] + c] = 1.0 / c
        return m

    def edge(self, I: int, v: int) -> int:
        e0, e1 = self.fac_ptr[I], self.fac_ptr[I + 1]
        for e in range(e0, e1):
            if self.ids[self.fac_var[e]] == v:
                return e
        raise DomainError(f"variable {v} is not in factor {I}")

    def args(self):
        return (self.fac_ptr, self.fac_var, self.card, self.val_ptr, self.vals,
                self.msg_ptr, self.var_ptr, self.var_edges, self.bel_ptr)


@dataclass
class MessageSet:
    """Factor-to-variable messages on every edge; variable-to-factor ones are derived."""

    compiled: CompiledGraph
    flat: np.ndarray

    def fac_to_var(self, I: int, i: int) -> np.ndarray:
        e = self.compiled.edge(I, i)
        p = self.compiled.msg_ptr[e]
        return self.flat[p:p + self.compiled.graph.card(i)]

    def var_to_fac(self, j: int, I: int) -> np.ndarray:
        g = self.compiled.graph
        out = np.ones(g.card(j))
        for J in g.nbv[j]:
            if J != I:
                out = out * self.fac_to_var(J, j)
        s = out.sum()
        if s <= 0:
            raise DegenerateError(f"message from variable {j} to factor {I} has no support")
        return out / s

    @cached_property
    def edges(self) -> list[tuple[int, int]]:
        g = self.compiled.graph
        return [(I, v) for I, f in enumerate(g.factors) for v in f.vars]


def run_bp(g: FactorGraph, tol: float = 1e-9, max_iter: int = 10000, damping: float = 0.0,
           compiled: CompiledGraph | None = None,
           init: np.ndarray | None = None) -> tuple[MessageSet, ConvergenceReport]:
    """Damped sequential sum-product from uniform messages.

    Factors are visited in list order; at each factor the incoming
    variable-to-factor messages are refreshed and then every outgoing
    factor-to-variable message is recomputed.  Convergence is declared when no
    single-variable belief moves more than ``tol`` over a sweep.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    if not 0.0 <= damping < 1.0:
        raise DomainError("damping must lie in [0, 1)")
    cg = compiled or CompiledGraph(g)
    msgs = cg.uniform_messages() if init is None else np.array(init, dtype=float)
    status, conv, it, delta = kernels.get().run_bp(*cg.args(), msgs, float(tol), int(max_iter),
                                                    float(damping))
    if status:
        raise DegenerateError("a BP message lost all support")
    return MessageSet(cg, msgs), ConvergenceReport(bool(conv), int(it), float(delta))


def bp_beliefs(g: FactorGraph, msgs: MessageSet) -> tuple[dict[int, FactorTable], list[FactorTable]]:
    var_b = {}
    for v in g.var_ids:
        b = np.ones(g.card(v))
        for I in g.nbv[v]:
            b = b * msgs.fac_to_var(I, v)
        s = b.sum()
        if s <= 0:
            raise DegenerateError(f"belief of variable {v} has no support")
        var_b[v] = FactorTable((v,), (len(b),), b / s)
    fac_b = []
    for I, f in enumerate(g.factors):
        arr = np.array(f.array)
        for k, v in enumerate(f.vars):
            shape = [1] * len(f.vars)
            shape[k] = f.cards[k]
            arr = arr * msgs.var_to_fac(v, I).reshape(shape)
        s = arr.sum()
        if s <= 0:
            raise DegenerateError(f"belief of factor {I} has no support")
        fac_b.append(FactorTable(f.vars, f.cards, arr / s))
    return var_b, fac_b


def _neg_entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(np.sum(p * np.log(p)))


def bethe_free_energy(g: FactorGraph, beliefs) -> float:
    """Bethe free energy of (variable beliefs, factor beliefs); ``+inf`` if b_I > 0 where psi_I = 0."""
    var_b, fac_b = beliefs
    F = 0.0
    for f, b in zip(g.factors, fac_b):
        pos = b.array > 0
        if np.any(f.array[pos] == 0):
            return math.inf
        F += float(np.sum(b.array[pos] * np.log(b.array[pos] / f.array[pos])))
    for v in g.var_ids:
        F += (1 - len(g.nbv[v])) * _neg_entropy(var_b[v].array)
    return F


def bethe_from_messages(cg: CompiledGraph, msgs: MessageSet | np.ndarray) -> float:
    flat = msgs.flat if isinstance(msgs, MessageSet) else msgs
    return float(kernels.get().bethe_from_messages(*cg.args(), flat))


# ---------------------------------------------------------------------------
# mean field


@dataclass
class MeanFieldResult:
    beliefs: dict[int, FactorTable]
    report: ConvergenceReport
    free_energy: float = field(default=math.nan)


def _mf_setup(g: FactorGraph):
    logs = []
    for n, f in enumerate(g.factors):
        if np.any(f.array <= 0):
            raise DomainError(f"mean field needs strictly positive factors (factor {n} has zeros)")
        logs.append(np.log(f.array))
    return logs


def _mf_expected_log(g, logs, b, I, skip=None):
    """E[ln psi_I] over the product beliefs, leaving variable ``skip`` free."""
    f = g.factors[I]
    arr = logs[I]
    for k in reversed(range(len(f.vars))):
        v = f.vars[k]
        if v == skip:
            continue
        arr = np.tensordot(arr, b[v], axes=([k], [0]))
    return arr


def mean_field_free_energy(g: FactorGraph, beliefs: dict[int, np.ndarray], logs=None) -> float:
    logs = _mf_setup(g) if logs is None else logs
    F = 0.0
    for I in range(len(g.factors)):
        F -= float(_mf_expected_log(g, logs, beliefs, I))
    for v in g.var_ids:
        F += _neg_entropy(np.asarray(beliefs[v]))
    return F


def run_mean_field(g: FactorGraph, tol: float = 1e-9, max_iter: int = 10000,
                   seed: int = 0) -> MeanFieldResult:
    """Fully factorized mean field with random sequential updates, no damping."""
    if not tol > 0:
        raise DomainError("tol must be positive")
    logs = _mf_setup(g)
    ids = list(g.var_ids)
    b = {v: np.full(g.card(v), 1.0 / g.card(v)) for v in ids}
    rng = np.random.default_rng(seed)
    delta = math.inf
    it = 0
    converged = False
    while it < max_iter:
        old = {v: b[v].copy() for v in ids}
        for k in rng.permutation(len(ids)):
            v = ids[k]
            field_ = np.zeros(g.card(v))
            for I in g.nbv[v]:
                field_ = field_ + _mf_expected_log(g, logs, b, I, skip=v)
            field_ -= field_.max()
            new = np.exp(field_)
            b[v] = new / new.sum()
        it += 1
        delta = max((float(np.max(np.abs(b[v] - old[v]))) for v in ids), default=0.0)
        if delta < tol:
            converged = True
            break
    beliefs = {v: FactorTable((v,), (g.card(v),), b[v]) for v in ids}
    F = mean_field_free_energy(g, b, logs)
    return MeanFieldResult(beliefs, ConvergenceReport(converged, it, delta), F)

"""Exact single-variable marginals and log partition functions.

Two independent routes: full enumeration of the joint (``brute_force``) and
variable elimination under a min-fill ordering (``variable_elimination``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CapacityError, DegenerateError, FactorGraph, FactorTable

BRUTE_FORCE_GUARD = 2 ** 24
VE_TABLE_GUARD = 2 ** 24


@dataclass
class ExactResult:
    marginals: dict[int, FactorTable]
    logZ: float


def _log(arr):
    with np.errstate(divide="ignore"):
        return np.log(arr)


def _logsumexp(a, axis=None):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis) if axis is not None else float(out.reshape(()))


def brute_force(g: FactorGraph, guard: int = BRUTE_FORCE_GUARD) -> ExactResult:
    ids = g.var_ids
    cards = g.cards_of(ids)
    if math.prod(cards) > guard:
        raise CapacityError(f"joint state space {math.prod(cards)} exceeds guard {guard}")
    logp = np.zeros(cards)
    for f in g.factors:
        logp = logp + _log(f.expand(ids))
    logZ = _logsumexp(logp)
    if not np.isfinite(logZ):
        raise DegenerateError("partition function is zero")
    p = np.exp(logp - logZ)
    marg = {}
    for k, v in enumerate(ids):
        axes = tuple(a for a in range(len(ids)) if a != k)
        m = p.sum(axis=axes)
        marg[v] = FactorTable((v,), (cards[k],), m / m.sum())
    return ExactResult(marg, float(logZ))


def min_fill_order(g: FactorGraph, keep: frozenset = frozenset()) -> list[int]:
    """Greedy min-fill elimination order over all variables not in ``keep``."""
    adj: dict[int, set[int]] = {v: set() for v in g.var_ids}
    for f in g.factors:
        for a in f.vars:
            adj[a].update(u for u in f.vars if u != a)
    remaining = set(v for v in g.var_ids if v not in keep)
    order = []
    while remaining:
        best, best_fill = None, None
        for v in sorted(remaining):
            nb = sorted(adj[v])
            fill = 0
            for x in range(len(nb)):
                for y in range(x + 1, len(nb)):
                    if nb[y] not in adj[nb[x]]:
                        fill += 1
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
                if fill == 0:
                    break
        nb = adj.pop(best)
        for a in nb:
            adj[a].discard(best)
            adj[a].update(u for u in nb if u != a)
        remaining.discard(best)
        order.append(best)
    return order


def _check_width(g: FactorGraph, order: list[int], guard: int) -> None:
    scopes = [set(f.vars) for f in g.factors]
    for v in order:
        hit = [s for s in scopes if v in s]
        scopes = [s for s in scopes if v not in s]
        joint = set().union(*hit) if hit else set()
        if math.prod(g.cards_of(joint)) > guard:
            raise CapacityError(f"elimination table over {len(joint)} variables exceeds guard {guard}")
        joint.discard(v)
        scopes.append(joint)


def _eliminate(g: FactorGraph, order: list[int]) -> tuple[list[tuple[tuple[int, ...], np.ndarray]], float]:
    """Sum out ``order``; returns the remaining (scope, array) factors and a log scale."""
    pool = [(f.vars, f.array) for f in g.factors]
    logscale = 0.0
    for v in order:
        hit = [t for t in pool if v in t[0]]
        pool = [t for t in pool if v not in t[0]]
        if not hit:
            logscale += math.log(g.card(v))
            continue
        scope = tuple(sorted(set().union(*(set(s) for s, _ in hit))))
        arr = None
        for s, a in hit:
            shape = [1] * len(scope)
            for u, c in zip(s, a.shape):
                shape[scope.index(u)] = c
            arr = a.reshape(shape) if arr is None else arr * a.reshape(shape)
        arr = np.broadcast_to(arr, g.cards_of(scope)).sum(axis=scope.index(v))
        m = arr.max() if arr.size else 0.0
        if m > 0:
            arr = arr / m
            logscale += math.log(m)
        else:
            raise DegenerateError("partition function is zero")
        pool.append((tuple(u for u in scope if u != v), arr))
    return pool, logscale


def variable_elimination(g: FactorGraph, target: int, guard: int = VE_TABLE_GUARD) -> FactorTable:
    """Normalized marginal of ``target``."""
    c = g.card(target)
    order = min_fill_order(g, frozenset({target}))
    _check_width(g, order, guard)
    pool, _ = _eliminate(g, order)
    out = np.ones(c)
    for scope, arr in pool:
        out = out * (arr.reshape(-1) if scope else arr)
    s = out.sum()
    if not s > 0:
        raise DegenerateError("partition function is zero")
    return FactorTable((target,), (c,), out / s)


def log_partition(g: FactorGraph, guard: int = VE_TABLE_GUARD) -> float:
    """ln Z by eliminating every variable; -inf when the joint is identically zero."""
    order = min_fill_order(g)
    _check_width(g, order, guard)
    try:
        pool, logscale = _eliminate(g, order)
    except DegenerateError:
        return -math.inf
    total = logscale
    for _, arr in pool:
        val = float(arr)
        if val <= 0:
            return -math.inf
        total += math.log(val)
    return total


def exact_marginals(g: FactorGraph, guard: int = VE_TABLE_GUARD) -> ExactResult:
    """All single-variable marginals by repeated variable elimination, plus ln Z."""
    logZ = log_partition(g, guard)
    if not math.isfinite(logZ):
        raise DegenerateError("partition function is zero")
    return ExactResult({v: variable_elimination(g, v, guard) for v in g.var_ids}, logZ)

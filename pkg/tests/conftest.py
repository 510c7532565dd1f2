"""Shared builders and independent oracles for the test suite.

The oracles here deliberately avoid the library's own inference code: they
enumerate joint states with ``itertools.product`` and index the raw arrays.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from lcbp import kernels
from lcbp.core import FactorGraph, FactorTable, Variable
from lcbp.cumulant import PairwiseBinaryModel


# ---------------------------------------------------------------------------
# oracles


def enumerate_joint(g: FactorGraph):
    """Yield (assignment dict, unnormalized weight) for every joint state."""
    ids = g.var_ids
    for combo in itertools.product(*(range(g.card(v)) for v in ids)):
        x = dict(zip(ids, combo))
        w = 1.0
        for f in g.factors:
            w *= f.array[tuple(x[v] for v in f.vars)]
        yield x, w


def oracle_marginals(g: FactorGraph) -> tuple[dict[int, np.ndarray], float]:
    marg = {v: np.zeros(g.card(v)) for v in g.var_ids}
    Z = 0.0
    for x, w in enumerate_joint(g):
        Z += w
        for v, s in x.items():
            marg[v][s] += w
    return {v: m / Z for v, m in marg.items()}, Z


def oracle_joint_marginal(g: FactorGraph, keep: tuple[int, ...]) -> np.ndarray:
    """Normalized joint marginal on ``keep`` (axes in the given order)."""
    out = np.zeros(g.cards_of(keep))
    for x, w in enumerate_joint(g):
        out[tuple(x[v] for v in keep)] += w
    return out / out.sum()


def max_gap(beliefs, exact) -> float:
    return max(float(np.max(np.abs(np.asarray(getattr(beliefs[v], "array", beliefs[v])) - exact[v])))
               for v in exact)


# ---------------------------------------------------------------------------
# graph builders


def random_table(rng, vars, cards, low=0.1):
    return FactorTable(vars, cards, rng.uniform(low, 1.0, size=tuple(cards)))


def random_graph(rng, n: int, max_card: int = 3, n_factors: int | None = None,
                 max_arity: int = 3, zeros: bool = False) -> FactorGraph:
    cards = [int(rng.integers(1, max_card + 1)) for _ in range(n)]
    n_factors = n_factors if n_factors is not None else int(rng.integers(1, 2 * n + 1))
    factors = []
    for _ in range(n_factors):
        k = int(rng.integers(1, min(max_arity, n) + 1))
        scope = sorted(rng.choice(n, size=k, replace=False).tolist())
        arr = rng.uniform(0.05, 1.0, size=tuple(cards[v] for v in scope))
        if zeros:
            arr[rng.random(arr.shape) < 0.2] = 0.0
            arr.flat[0] = max(arr.flat[0], 0.5)
        factors.append(FactorTable(scope, [cards[v] for v in scope], arr))
    return FactorGraph([Variable(v, c) for v, c in enumerate(cards)], factors)


def random_tree(rng, n: int, max_card: int = 3, unary: bool = True, strength: float = 1.0) -> FactorGraph:
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n)]
    factors = []
    for v in range(1, n):
        u = int(rng.integers(0, v))
        a, b = sorted((u, v))
        arr = np.exp(strength * rng.normal(size=(cards[a], cards[b])))
        factors.append(FactorTable((a, b), (cards[a], cards[b]), arr))
    if unary:
        for v in range(n):
            factors.append(FactorTable((v,), (cards[v],), np.exp(rng.normal(size=cards[v]))))
    return FactorGraph([Variable(v, c) for v, c in enumerate(cards)], factors)


def spin_model(n: int, edges, rng, beta: float = 1.0, theta: float = 1.0) -> PairwiseBinaryModel:
    th = rng.normal(size=n) * theta * beta
    J = {tuple(sorted(e)): float(rng.normal() * beta) for e in edges}
    return PairwiseBinaryModel(th, J)


def cycle_with_trees(rng, cycle_len: int, extra: int) -> list[tuple[int, int]]:
    """Edges of a single cycle 0..L-1 plus ``extra`` tree nodes hung off it."""
    edges = [(k, (k + 1) % cycle_len) for k in range(cycle_len)]
    for v in range(cycle_len, cycle_len + extra):
        edges.append((int(rng.integers(0, v)), v))
    return [tuple(sorted(e)) for e in edges]


def random_simple_graph(rng, n: int, p: float) -> list[tuple[int, int]]:
    return [(a, b) for a, b in itertools.combinations(range(n), 2) if rng.random() < p]


# ---------------------------------------------------------------------------
# fixtures


@pytest.fixture(params=kernels.BACKENDS)
def backend(request):
    with kernels.using(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")

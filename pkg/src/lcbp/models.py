"""Random benchmark instances and the noisy-OR decomposition.

Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64), so an
instance is a pure function of its spec.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import DomainError, FactorGraph, FactorTable, LCBPError, Variable
from .cumulant import PairwiseBinaryModel, spin_to_factor_graph

__all__ = [
    "GenerationError", "RegularSpinSpec", "KFactorSpec", "gen_regular_spin", "gen_k_factor",
    "regular_graph", "noisy_or_table", "noisy_or_decompose", "spin_to_factor_graph",
    "coupling_scale", "manifest_line",
]


class GenerationError(LCBPError):
    """Random construction did not succeed within its restart budget."""


@dataclass(frozen=True)
class RegularSpinSpec:
    N: int
    d: int
    beta: float
    theta: float = 0.0
    coupling_type: str = "mixed"
    seed: int = 0

    def __post_init__(self):
        if self.N * self.d % 2:
            raise DomainError("N*d must be even for a d-regular graph")
        if not 0 <= self.d < self.N:
            raise DomainError("need 0 <= d < N")
        if self.beta < 0 or self.theta < 0:
            raise DomainError("beta and theta must be non-negative")
        if self.coupling_type not in ("mixed", "attractive"):
            raise DomainError(f"unknown coupling type {self.coupling_type!r}")


@dataclass(frozen=True)
class KFactorSpec:
    N: int
    M: int
    k: int
    beta: float
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= self.N:
            raise DomainError("need 1 <= k <= N")
        if self.M < 1:
            raise DomainError("need M >= 1")
        if self.beta < 0:
            raise DomainError("beta must be non-negative")


def coupling_scale(d: int, coupling_type: str = "mixed") -> float:
    """Standard deviation of the couplings at beta = 1."""
    if d < 2:
        return 0.0
    if coupling_type == "mixed":
        return math.atanh(1.0 / math.sqrt(d - 1))
    if d == 2:
        # atanh(1) diverges
        raise DomainError("attractive couplings need d >= 3")
    return math.atanh(1.0 / (d - 1))


def regular_graph(N: int, d: int, rng: np.random.Generator, restarts: int = 10000) -> list[tuple[int, int]]:
    """Random simple d-regular graph: configuration model, full restart on any defect."""
    if N * d % 2 or not 0 <= d < N:
        raise DomainError(f"no {d}-regular simple graph on {N} nodes")
    stubs = np.repeat(np.arange(N), d)
    for _ in range(restarts):
        perm = rng.permutation(stubs)
        pairs = perm.reshape(-1, 2)
        a, b = pairs.min(axis=1), pairs.max(axis=1)
        if np.any(a == b):
            continue
        edges = sorted(set(zip(a.tolist(), b.tolist())))
        if len(edges) == len(pairs):
            return edges
    raise GenerationError(f"no simple {d}-regular graph on {N} nodes after {restarts} restarts")


def gen_regular_spin(spec: RegularSpinSpec, restarts: int = 10000) -> PairwiseBinaryModel:
    rng = np.random.default_rng(spec.seed)
    edges = regular_graph(spec.N, spec.d, rng, restarts)
    theta = rng.normal(0.0, 1.0, spec.N) * (spec.beta * spec.theta)
    sd = spec.beta * coupling_scale(spec.d, spec.coupling_type) if spec.beta > 0 else 0.0
    J = rng.normal(0.0, 1.0, len(edges)) * sd
    if spec.coupling_type == "attractive":
        J = np.abs(J)
    return PairwiseBinaryModel(theta, {e: float(v) for e, v in zip(edges, J)})


def gen_k_factor(spec: KFactorSpec, restarts: int = 1000, tree: bool = False) -> FactorGraph:
    """M random factors over k distinct variables each, entries exp(N(0, beta)).

    Instances are redrawn until the factor graph is connected.  ``tree=True``
    (k = 2, M = N - 1 only) attaches each new variable to an earlier one, which
    yields a random tree; it exists for tests.
    """
    rng = np.random.default_rng(spec.seed)
    if tree and not (spec.k == 2 and spec.M == spec.N - 1):
        raise DomainError("tree mode needs k = 2 and M = N - 1")
    shape = (2,) * spec.k
    for _ in range(restarts):
        factors = []
        for m in range(spec.M):
            if tree:
                scope = (int(rng.integers(0, m + 1)), m + 1)
            else:
                scope = tuple(sorted(rng.choice(spec.N, size=spec.k, replace=False).tolist()))
            vals = np.exp(rng.normal(0.0, 1.0, shape) * spec.beta)
            factors.append(FactorTable(scope, shape, vals))
        g = FactorGraph([Variable(v, 2) for v in range(spec.N)], factors)
        if g.is_connected():
            return g
    raise GenerationError(f"no connected factor graph after {restarts} draws")


def manifest_line(spec) -> str:
    """One-line provenance record (kind plus every spec field, including the seed)."""
    kind = "regular" if isinstance(spec, RegularSpinSpec) else "kfactor"
    return "# manifest " + kind + " " + " ".join(f"{k}={v}" for k, v in asdict(spec).items())


# ---------------------------------------------------------------------------
# noisy-OR


def noisy_or_table(child: int, parents: list[int], leak: float, probs: list[float]) -> FactorTable:
    """Direct conditional table P(child | parents) with 2**(m+1) entries."""
    m = len(parents)
    arr = np.empty((2,) * (m + 1))
    for idx in np.ndindex(*arr.shape):
        off = (1 - leak) * math.prod(1 - p for p, y in zip(probs, idx[1:]) if y)
        arr[idx] = off if idx[0] == 0 else 1 - off
    return FactorTable.from_array([child] + list(parents), arr)


def noisy_or_decompose(child: int, parents: list[int], leak: float, probs: list[float],
                       next_id: int) -> tuple[list[FactorTable], list[int]]:
    """Chain of tables of arity <= 3 equal to the noisy-OR table after summing out dummies.

    The child takes the first parent and a dummy ``s1``; ``s1`` is a leak-free
    noisy-OR of the second parent and ``s2``, and so on, the last dummy taking
    the final two parents.  Dummies pass their value to the child with
    probability one.  Returns (tables, dummy ids); dummy ids start at
    ``next_id``.
    """
    if len(parents) != len(probs):
        raise DomainError("one probability per parent is required")
    if not all(0.0 <= p <= 1.0 for p in list(probs) + [leak]):
        raise DomainError("probabilities must lie in [0, 1]")
    m = len(parents)
    if m <= 2:
        return [noisy_or_table(child, parents, leak, probs)], []
    dummies = list(range(next_id, next_id + m - 2))
    tables = []
    out, out_leak = child, leak
    for k in range(m - 2):
        tables.append(noisy_or_table(out, [parents[k], dummies[k]], out_leak, [probs[k], 1.0]))
        out, out_leak = dummies[k], 0.0
    tables.append(noisy_or_table(out, parents[-2:], 0.0, probs[-2:]))
    return tables, dummies

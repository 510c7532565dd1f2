"""Cumulant-based loop corrections for binary pairwise (Ising) models.

Spins use the encoding state 0 -> -1, state 1 -> +1.  For each variable ``i``
the cavity distribution on its neighbours is summarized by singleton cavity
magnetizations ``M[i][j]`` and pair cumulants ``C[i][{j, k}]``; cumulants of
order three and higher are taken to vanish.  The consistency condition between
the cavities of ``i`` and ``j`` is iterated as a fixed point in the singletons,
either in full (exponential in the blanket size) or linearized to first order
in the pair cumulants.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping

import numpy as np

from .bp import ConvergenceReport
from .core import CapacityError, DegenerateError, DomainError, FactorGraph, FactorTable

SPIN = np.array([-1.0, 1.0])
PARITY_GUARD = 20


@dataclass
class PairwiseBinaryModel:
    """P(x) proportional to exp(sum_i theta_i x_i + sum_{i<j} J_ij x_i x_j), x in {-1,+1}."""

    theta: np.ndarray
    J: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        clean = {}
        for (a, b), v in self.J.items():
            if a == b:
                raise DomainError(f"self-coupling on spin {a}")
            key = (min(a, b), max(a, b))
            if key in clean and clean[key] != v:
                raise DomainError(f"conflicting couplings for pair {key}")
            if key[0] < 0 or key[1] >= self.N:
                raise DomainError(f"coupling {key} refers to a missing spin")
            clean[key] = float(v)
        self.J = dict(sorted(clean.items()))

    @property
    def N(self) -> int:
        return len(self.theta)

    @cached_property
    def neighbors(self) -> dict[int, tuple[int, ...]]:
        nb: dict[int, list[int]] = {i: [] for i in range(self.N)}
        for a, b in self.J:
            nb[a].append(b)
            nb[b].append(a)
        return {i: tuple(sorted(v)) for i, v in nb.items()}

    def coupling(self, i: int, j: int) -> float:
        return self.J.get((min(i, j), max(i, j)), 0.0)

    def t(self, i: int, j: int) -> float:
        return math.tanh(self.coupling(i, j))


def spin_to_factor_graph(model: PairwiseBinaryModel) -> FactorGraph:
    """Unary exp(theta_i x_i) and pairwise exp(J_ij x_i x_j) tables, in that order."""
    factors = [FactorTable((i,), (2,), np.exp(th * SPIN)) for i, th in enumerate(model.theta)]
    for (a, b), v in model.J.items():
        factors.append(FactorTable((a, b), (2, 2), np.exp(v * np.outer(SPIN, SPIN))))
    return FactorGraph.from_factors(factors, {i: 2 for i in range(model.N)})


def factor_graph_to_spin(g: FactorGraph) -> PairwiseBinaryModel:
    """Inverse of :func:`spin_to_factor_graph` for any positive binary pairwise graph."""
    ids = g.var_ids
    if ids != tuple(range(len(ids))):
        raise DomainError("variable ids must be contiguous from 0")
    theta = np.zeros(len(ids))
    J: dict[tuple[int, int], float] = {}
    for n, f in enumerate(g.factors):
        if any(c != 2 for c in f.cards) or len(f.vars) > 2:
            raise DomainError(f"factor {n} is not a binary unary/pairwise table")
        if np.any(f.array <= 0):
            raise DomainError(f"factor {n} has non-positive entries")
        L = np.log(f.array)
        if len(f.vars) == 1:
            theta[f.vars[0]] += (L[1] - L[0]) / 2
        elif len(f.vars) == 2:
            a, b = f.vars
            theta[a] += (L[1, 0] + L[1, 1] - L[0, 0] - L[0, 1]) / 4
            theta[b] += (L[0, 1] + L[1, 1] - L[0, 0] - L[1, 0]) / 4
            J[a, b] = J.get((a, b), 0.0) + (L[0, 0] + L[1, 1] - L[0, 1] - L[1, 0]) / 4
    return PairwiseBinaryModel(theta, J)


# ---------------------------------------------------------------------------
# text format: "θ i value" and "J i j value" lines

_LINE = re.compile(r"^(θ|theta|J)\s+(.*)$")


def dumps_spin_model(model: PairwiseBinaryModel) -> str:
    lines = [f"θ {i} {float(v)!r}" for i, v in enumerate(model.theta)]
    lines += [f"J {a} {b} {float(v)!r}" for (a, b), v in model.J.items()]
    return "\n".join(lines) + "\n"


def parse_spin_model(text: str) -> PairwiseBinaryModel:
    fields: dict[int, float] = {}
    J: dict[tuple[int, int], float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _LINE.match(line)
        parts = m.group(2).split() if m else []
        if not m or (m.group(1) == "J") != (len(parts) == 3) or len(parts) not in (2, 3):
            raise DomainError(f"line {lineno}: cannot parse {line!r}")
        if m.group(1) == "J":
            J[int(parts[0]), int(parts[1])] = float(parts[2])
        else:
            fields[int(parts[0])] = float(parts[1])
    n = max(list(fields) + [v for key in J for v in key], default=-1) + 1
    theta = np.zeros(n)
    for i, v in fields.items():
        theta[i] = v
    return PairwiseBinaryModel(theta, J)


# ---------------------------------------------------------------------------
# moments and cumulants


def moments_from_cavity_table(z: FactorTable, max_order: int | None = None) -> dict[frozenset, float]:
    """Moments E[prod_{j in A} x_j] under the (normalized) table, for |A| <= max_order."""
    if any(c != 2 for c in z.cards):
        raise DomainError("moments need binary variables")
    p = z.array / z.array.sum()
    n = len(z.vars)
    max_order = n if max_order is None else max_order
    out = {}
    for r in range(max_order + 1):
        for A in itertools.combinations(range(n), r):
            arr = p
            for k in reversed(range(n)):
                arr = np.tensordot(arr, SPIN if k in A else np.ones(2), axes=([k], [0]))
            out[frozenset(z.vars[k] for k in A)] = float(arr)
    return out


def cumulants_from_moments(moments: Mapping[frozenset, float]) -> dict[frozenset, float]:
    """Invert M_A = sum over partitions of A of the product of block cumulants.

    Uses M_A = sum_{B contains min(A)} C_B M_{A minus B}; every subset of a
    queried set must be present in ``moments``.
    """
    C: dict[frozenset, float] = {}
    for A in sorted(moments, key=len):
        if not A:
            continue
        a = min(A)
        rest = sorted(A - {a})
        val = moments[A]
        for r in range(len(rest)):
            for extra in itertools.combinations(rest, r):
                B = frozenset((a,) + extra)
                val -= C[B] * moments[A - B]
        C[A] = val
    return C


def part2_moment(A: Iterable[int], single: Mapping[int, float],
                 pair: Mapping[frozenset, float], _memo: dict | None = None) -> float:
    """Moment of ``A`` keeping only singleton and pair cumulants."""
    A = tuple(sorted(A))
    memo = {} if _memo is None else _memo
    return _part2(A, single, pair, memo)


def _part2(A, single, pair, memo):
    if not A:
        return 1.0
    hit = memo.get(A)
    if hit is not None:
        return hit
    a, rest = A[0], A[1:]
    val = single[a] * _part2(rest, single, pair, memo)
    for k, b in enumerate(rest):
        c = pair.get(frozenset((a, b)), 0.0)
        if c:
            val += c * _part2(rest[:k] + rest[k + 1:], single, pair, memo)
    memo[A] = val
    return val


def parity_weighted_sum(S: Iterable[int], parity: str, t: Mapping[int, float],
                        moment: Callable[[tuple[int, ...]], float],
                        attach: Iterable[int] = (), guard: int = PARITY_GUARD) -> float:
    """Sum over subsets A of S with |A| of the given parity of t_A * moment(A + attach)."""
    S = tuple(sorted(S))
    attach = tuple(attach)
    if len(S) > guard:
        raise CapacityError(f"parity sum over {len(S)} variables exceeds guard {guard}")
    if parity not in ("even", "odd"):
        raise DomainError("parity must be 'even' or 'odd'")
    start = 0 if parity == "even" else 1
    total = 0.0
    for r in range(start, len(S) + 1, 2):
        for A in itertools.combinations(S, r):
            tA = 1.0
            for k in A:
                tA *= t[k]
            total += tA * moment(tuple(sorted(A + attach)))
    return total


# ---------------------------------------------------------------------------
# cumulant state


@dataclass
class CumulantState:
    M: dict[int, dict[int, float]]
    C: dict[int, dict[frozenset, float]]

    @classmethod
    def from_cavities(cls, model: PairwiseBinaryModel, tables: Mapping[int, FactorTable]) -> "CumulantState":
        """Singletons and pair cumulants of each cavity table (tables over the neighbours)."""
        M, C = {}, {}
        for i in range(model.N):
            z = tables[i]
            if z.vars != model.neighbors[i]:
                raise DomainError(f"cavity table of spin {i} is over {z.vars}, expected {model.neighbors[i]}")
            mom = moments_from_cavity_table(z, max_order=2)
            cum = cumulants_from_moments(mom)
            M[i] = {j: cum[frozenset((j,))] for j in z.vars}
            C[i] = {A: v for A, v in cum.items() if len(A) == 2}
        return cls(M, C)

    def copy(self) -> "CumulantState":
        return CumulantState({i: dict(m) for i, m in self.M.items()}, self.C)


class _Cavity:
    """Part2 moments and t-weighted parity sums of one cavity, for the current singletons."""

    def __init__(self, model: PairwiseBinaryModel, st: CumulantState, i: int):
        self.i = i
        self.tau = math.tanh(model.theta[i])
        self.t = {k: model.t(i, k) for k in model.neighbors[i]}
        self.single = st.M[i]
        self.pair = st.C[i]
        self.memo: dict = {}

    def moment(self, A):
        return _part2(A, self.single, self.pair, self.memo)

    def sums(self, S, attach=()):
        return (parity_weighted_sum(S, "even", self.t, self.moment, attach),
                parity_weighted_sum(S, "odd", self.t, self.moment, attach))


def _ratio(num, den, what):
    if den == 0 or not math.isfinite(num / den):
        raise DegenerateError(f"vanishing denominator in {what}")
    return num / den


def magnetization_without_from_j(model, st, i, j) -> float:
    """E[x_j] with the (i, j) coupling removed, from the cavity of j."""
    cj = _Cavity(model, st, j)
    S = [k for k in model.neighbors[j] if k != i]
    E, O = cj.sums(S)
    return _ratio(cj.tau * E + O, E + cj.tau * O, f"cavity of {j} without {i}")


def magnetization_without_from_i(model, st, i, j) -> float:
    """E[x_j] with the (i, j) coupling removed, from the cavity of i."""
    ci = _Cavity(model, st, i)
    S = [k for k in model.neighbors[i] if k != j]
    Ej, Oj = ci.sums(S, attach=(j,))
    E, O = ci.sums(S)
    return _ratio(Ej + ci.tau * Oj, E + ci.tau * O, f"cavity of {i} without {j}")


def full_update(model: PairwiseBinaryModel, st: CumulantState, i: int, j: int) -> float:
    """New singleton M[i][j] from the consistency condition, Part2 moments."""
    K = magnetization_without_from_j(model, st, i, j)
    ci = _Cavity(model, st, i)
    Sj = [k for k in model.neighbors[i] if k != j]
    E, O = ci.sums(Sj)
    den = E + ci.tau * O
    corr = 0.0
    for k in Sj:
        c = ci.pair.get(frozenset((j, k)), 0.0)
        if c == 0.0:
            continue
        Ek, Ok = ci.sums([l for l in Sj if l != k])
        corr += ci.t[k] * c * (ci.tau * Ek + Ok)
    return K - _ratio(corr, den, f"update of M[{i}][{j}]")


def consistency_residual(model: PairwiseBinaryModel, st: CumulantState) -> float:
    """Largest gap between the two estimates of E[x_j] with coupling (i, j) removed."""
    r = 0.0
    for i in range(model.N):
        for j in model.neighbors[i]:
            r = max(r, abs(magnetization_without_from_i(model, st, i, j)
                           - magnetization_without_from_j(model, st, i, j)))
    return r


def final_magnetization(model: PairwiseBinaryModel, st: CumulantState, i: int) -> float:
    ci = _Cavity(model, st, i)
    E, O = ci.sums(model.neighbors[i])
    return _ratio(ci.tau * E + O, E + ci.tau * O, f"magnetization of {i}")


# linearized ------------------------------------------------------------


class _Fields:
    """T^{(i)}_A = tanh(theta_i + sum_{k in nb(i) minus A} atanh(t_ik M[i][k])), O(1) per query."""

    def __init__(self, model, st, i):
        self.t = {k: model.t(i, k) for k in model.neighbors[i]}
        self.m = st.M[i]
        self.u = {k: math.atanh(self.t[k] * self.m[k]) for k in model.neighbors[i]}
        self.h = model.theta[i] + sum(self.u.values())

    def T(self, *A):
        return math.tanh(self.h - sum(self.u[k] for k in A))

    def gamma(self, l1, l2, *A):
        t1, t2 = self.t[l1], self.t[l2]
        m1, m2 = self.m[l1], self.m[l2]
        Tl = self.T(*A, l1, l2)
        den = 1 + t1 * t2 * m1 * m2 + t1 * m1 * Tl + t2 * m2 * Tl
        return _ratio(Tl - self.T(*A), den, "linearized pair correction")


def linear_update(model: PairwiseBinaryModel, st: CumulantState, i: int, j: int) -> float:
    fi = _Fields(model, st, i)
    fj = _Fields(model, st, j)
    val = fj.T(i)
    for l in model.neighbors[i]:
        if l == j:
            continue
        c = st.C[i].get(frozenset((j, l)), 0.0)
        Tjl = fi.T(j, l)
        omega = _ratio(Tjl, 1 + fi.t[l] * fi.m[l] * Tjl, "linearized cavity correction")
        val -= omega * fi.t[l] * c
    others = [l for l in model.neighbors[j] if l != i]
    for l1, l2 in itertools.combinations(others, 2):
        c = st.C[j].get(frozenset((l1, l2)), 0.0)
        if c:
            val += fj.gamma(l1, l2, i) * fj.t[l1] * fj.t[l2] * c
    return val


def linear_final_magnetization(model: PairwiseBinaryModel, st: CumulantState, j: int) -> float:
    fj = _Fields(model, st, j)
    val = fj.T()
    for l1, l2 in itertools.combinations(model.neighbors[j], 2):
        c = st.C[j].get(frozenset((l1, l2)), 0.0)
        if c:
            val += fj.gamma(l1, l2) * fj.t[l1] * fj.t[l2] * c
    return val


# drivers ----------------------------------------------------------------


@dataclass
class CumulantResult:
    magnetizations: np.ndarray
    state: CumulantState
    report: ConvergenceReport

    @property
    def beliefs(self) -> dict[int, FactorTable]:
        return {i: FactorTable((i,), (2,), [(1 - m) / 2, (1 + m) / 2])
                for i, m in enumerate(self.magnetizations)}


def _iterate(model, st, update, final, tol, max_iter, damping):
    if not tol > 0:
        raise DomainError("tol must be positive")
    st = st.copy()
    pairs = [(i, j) for i in range(model.N) for j in model.neighbors[i]]
    delta = math.inf
    it = 0
    converged = False
    while it < max_iter:
        delta = 0.0
        for i, j in pairs:
            new = update(model, st, i, j)
            if not math.isfinite(new):
                raise DegenerateError(f"non-finite update for pair ({i}, {j})")
            new = min(1.0, max(-1.0, new))
            if damping:
                new = damping * st.M[i][j] + (1 - damping) * new
            delta = max(delta, abs(new - st.M[i][j]))
            st.M[i][j] = new
        it += 1
        if delta < tol:
            converged = True
            break
    mags = np.array([final(model, st, i) for i in range(model.N)])
    mags = np.clip(mags, -1.0, 1.0)
    return CumulantResult(mags, st, ConvergenceReport(converged, it, delta))


def run_lcbp_cum(model: PairwiseBinaryModel, state: CumulantState, tol: float = 1e-9,
                 max_iter: int = 10000, damping: float = 0.0) -> CumulantResult:
    """Full cumulant consistency iteration; ``state`` supplies pair cumulants and starting singletons."""
    return _iterate(model, state, full_update, final_magnetization, tol, max_iter, damping)


def run_lcbp_cum_lin(model: PairwiseBinaryModel, state: CumulantState, tol: float = 1e-9,
                     max_iter: int = 10000, damping: float = 0.0) -> CumulantResult:
    """Consistency iteration linearized to first order in the pair cumulants."""
    return _iterate(model, state, linear_update, linear_final_magnetization, tol, max_iter, damping)

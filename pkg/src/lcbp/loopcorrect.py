"""Loop-corrected belief propagation: error-factor fixed point and beliefs.

For every variable ``i`` and factor ``Y`` containing it there is an error
factor ``phi[i, Y]`` on ``Y \\ {i}``.  Multiplying the initial cavity table of
``i`` by all its error factors gives the improved cavity table; multiplying
that by the factors around ``i`` gives the belief ``Q_i`` on ``Delta(i)``.

The update for ``phi[i, Y]`` equates, for each ``j`` in ``Y \\ {i}``, the
marginal on ``Y \\ {i}`` of the model with ``Y`` removed as seen from the
cavity of ``j`` with the same marginal seen from the cavity of ``i``; the
``j``-estimates are combined by a geometric mean.

All tables for variable ``i`` are held as numpy arrays in the axis frame of
``Delta(i)`` (ascending ids), with singleton axes where a table does not
depend on a variable.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bp import ConvergenceReport
from .cavity import CavitySet
from .core import DegenerateError, DomainError, FactorGraph, FactorTable

log = logging.getLogger(__name__)


@dataclass
class LoopCorrectedResult:
    cavities: dict[int, FactorTable]
    pancakes: dict[int, FactorTable]
    beliefs: dict[int, FactorTable]
    phi: dict[tuple[int, int], FactorTable]
    report: ConvergenceReport
    # number of updates in which the denominator vanished on part of its domain
    zero_denominators: int = 0


def _geometric_mean(tables: list[np.ndarray]) -> np.ndarray:
    if len(tables) == 1:
        return tables[0]
    with np.errstate(divide="ignore"):
        logs = [np.log(t) for t in tables]
    return np.exp(sum(logs) / len(tables))


class LCState:
    """Precomputed per-variable frames plus the current error factors."""

    def __init__(self, g: FactorGraph, cavities: CavitySet):
        self.g = g
        self.frame: dict[int, tuple[int, ...]] = {}
        self.pos: dict[int, dict[int, int]] = {}
        self.base: dict[tuple[int, int], np.ndarray] = {}
        self.full: dict[int, np.ndarray] = {}
        self.phi: dict[tuple[int, int], np.ndarray] = {}
        self.z0: dict[int, np.ndarray] = {}
        self.rest: dict[tuple[int, int], tuple[int, ...]] = {}
        for i in g.var_ids:
            if i not in cavities.tables:
                raise DomainError(f"no cavity table for variable {i}")
            D = g.delta[i]
            self.frame[i] = D
            self.pos[i] = {v: k for k, v in enumerate(D)}
            z0 = cavities.tables[i]
            if z0.vars != g.blanket[i]:
                raise DomainError(f"cavity table of {i} is over {z0.vars}, expected {g.blanket[i]}")
            z0 = z0.expand(D)
            self.z0[i] = z0
            psis = {Y: g.factors[Y].expand(D) for Y in g.nbv[i]}
            full = z0
            for Y in g.nbv[i]:
                full = full * psis[Y]
            self.full[i] = np.broadcast_to(full, g.cards_of(D))
            for Y in g.nbv[i]:
                b = z0
                for I in g.nbv[i]:
                    if I != Y:
                        b = b * psis[I]
                self.base[i, Y] = np.broadcast_to(b, g.cards_of(D))
                rest = tuple(v for v in g.factors[Y].vars if v != i)
                self.rest[i, Y] = rest
                shape = [1] * len(D)
                for v in rest:
                    shape[self.pos[i][v]] = g.card(v)
                size = math.prod(g.cards_of(rest))
                self.phi[i, Y] = np.full(shape, 1.0 / size)

    # helpers -----------------------------------------------------------

    def _sum_to(self, v: int, arr: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
        """Sum an array in v's frame down to the variables ``keep`` (ascending)."""
        D = self.frame[v]
        keep_set = set(keep)
        axes = tuple(k for k, u in enumerate(D) if u not in keep_set)
        return np.sum(arr, axis=axes) if axes else arr

    def _to_frame(self, i: int, arr: np.ndarray, vars: tuple[int, ...]) -> np.ndarray:
        D = self.frame[i]
        shape = [1] * len(D)
        for v, c in zip(vars, np.shape(arr)):
            shape[self.pos[i][v]] = c
        return np.reshape(arr, shape)

    def phi_product(self, i: int, skip: int | None = None) -> np.ndarray:
        out = None
        for I in self.g.nbv[i]:
            if I == skip:
                continue
            out = self.phi[i, I] if out is None else out * self.phi[i, I]
        return 1.0 if out is None else out

    # update ------------------------------------------------------------

    def update(self, i: int, Y: int) -> tuple[np.ndarray, bool]:
        """New (normalized) error factor for (i, Y), and whether the denominator hit zero."""
        rest = self.rest[i, Y]
        if not rest:
            return np.ones_like(self.phi[i, Y]), False
        nums = []
        for j in rest:
            arr = self.base[j, Y] * self.phi_product(j)
            nums.append(self._sum_to(j, arr, rest))
        num = _geometric_mean(nums)
        den = self._sum_to(i, self.base[i, Y] * self.phi_product(i, skip=Y), rest)
        zero = den <= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            new = np.where(zero, 0.0, num / np.where(zero, 1.0, den))
        s = new.sum()
        if not s > 0:
            raise DegenerateError(f"error factor for variable {i}, factor {Y} has no support")
        return self._to_frame(i, new / s, rest), bool(np.any(zero))

    def pancake(self, i: int) -> np.ndarray:
        q = self.full[i] * self.phi_product(i)
        s = q.sum()
        if not s > 0:
            raise DegenerateError(f"belief on Delta({i}) has no support")
        return np.broadcast_to(q / s, self.full[i].shape)

    def belief(self, i: int) -> np.ndarray:
        return self._sum_to(i, self.pancake(i), (i,))

    def beliefs(self) -> dict[int, np.ndarray]:
        return {i: self.belief(i) for i in self.g.var_ids}

    def residual(self) -> float:
        """Largest change any single update would make to its error factor right now."""
        r = 0.0
        for (i, Y), cur in self.phi.items():
            new, _ = self.update(i, Y)
            r = max(r, float(np.max(np.abs(new - cur))))
        return r

    def error_factors(self) -> dict[tuple[int, int], FactorTable]:
        g = self.g
        return {(i, Y): FactorTable(self.rest[i, Y], g.cards_of(self.rest[i, Y]),
                                    np.reshape(arr, g.cards_of(self.rest[i, Y])))
                for (i, Y), arr in self.phi.items()}

    def set_error_factors(self, phi: dict[tuple[int, int], FactorTable]) -> None:
        for key, t in phi.items():
            if key not in self.phi:
                raise DomainError(f"no error factor slot for {key}")
            if t.vars != self.rest[key]:
                raise DomainError(f"error factor {key} must be over {self.rest[key]}, got {t.vars}")
            self.phi[key] = self._to_frame(key[0], t.array, t.vars)


def lc_update(i: int, Y: int, g: FactorGraph, cavities: CavitySet,
              phi: dict[tuple[int, int], FactorTable] | None = None) -> FactorTable:
    """One application of the error-factor update for the pair (i, Y)."""
    if Y not in g.nbv[i]:
        raise DomainError(f"factor {Y} does not contain variable {i}")
    st = LCState(g, cavities)
    if phi:
        st.set_error_factors(phi)
    new, _ = st.update(i, Y)
    rest = st.rest[i, Y]
    return FactorTable(rest, g.cards_of(rest), np.reshape(new, g.cards_of(rest)))


def lc_beliefs(g: FactorGraph, cavities: CavitySet,
               phi: dict[tuple[int, int], FactorTable] | None = None):
    """(Q_i on Delta(i), b_i) for every variable, from cavities and error factors."""
    st = LCState(g, cavities)
    if phi:
        st.set_error_factors(phi)
    Q = {i: FactorTable(st.frame[i], g.cards_of(st.frame[i]), st.pancake(i)) for i in g.var_ids}
    b = {i: Q[i].marginalize((i,)) for i in g.var_ids}
    return Q, b


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    live = old > 0
    if np.any(new[~live] > 0):
        return math.inf
    return float(np.max(np.abs(new[live] / old[live] - 1.0), initial=0.0))


def run_lc(g: FactorGraph, cavities: CavitySet, tol: float = 1e-9, max_iter: int = 10000,
           damping: float = 0.0) -> LoopCorrectedResult:
    """Sequential fixed-point iteration over (i, Y) in ascending order.

    Stops once a sweep moves no single-variable belief by ``tol`` or more and
    changes no entry of any belief on Delta(i) by a relative ``tol`` or more.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    if not 0.0 <= damping < 1.0:
        raise DomainError("damping must lie in [0, 1)")
    st = LCState(g, cavities)
    order = [(i, Y) for i in g.var_ids for Y in g.nbv[i] if st.rest[i, Y]]
    old = {i: st.pancake(i) for i in g.var_ids}
    zero_events = 0
    delta = math.inf
    it = 0
    converged = False
    while it < max_iter:
        for i, Y in order:
            new, zero = st.update(i, Y)
            zero_events += zero
            if damping > 0:
                with np.errstate(divide="ignore"):
                    mixed = np.exp(damping * np.log(st.phi[i, Y]) + (1 - damping) * np.log(new))
                new = mixed / mixed.sum()
            st.phi[i, Y] = new
        it += 1
        cur = {i: st.pancake(i) for i in g.var_ids}
        delta = max((float(np.max(np.abs(st._sum_to(i, cur[i], (i,)) - st._sum_to(i, old[i], (i,)))))
                     for i in cur), default=0.0)
        # beliefs decide convergence, but the pancakes must have settled too (relative
        # change per entry).  Unlike single error factors they are invariant under
        # trading a function of a shared variable between two error factors of i.
        moved = max((_relative_change(cur[i], old[i]) for i in cur), default=0.0)
        old = cur
        if delta < tol and moved < tol:
            converged = True
            break
    if zero_events:
        log.warning("error-factor denominator vanished on part of its domain in %d updates", zero_events)
    return _result(st, ConvergenceReport(converged, it, delta), zero_events)


def _result(st: LCState, report: ConvergenceReport, zero_events: int) -> LoopCorrectedResult:
    g = st.g
    cavs, pancakes, beliefs = {}, {}, {}
    for i in g.var_ids:
        D = st.frame[i]
        q = st.pancake(i)
        pancakes[i] = FactorTable(D, g.cards_of(D), q)
        beliefs[i] = pancakes[i].marginalize((i,))
        # improved cavity: initial table times all error factors (no x_i dependence)
        shape = tuple(1 if v == i else g.card(v) for v in D)
        z = np.broadcast_to(st.z0[i] * st.phi_product(i), shape).reshape(g.cards_of(g.blanket[i]))
        cavs[i] = FactorTable(g.blanket[i], g.cards_of(g.blanket[i]), z / z.sum())
    return LoopCorrectedResult(cavs, pancakes, beliefs, st.error_factors(), report, zero_events)

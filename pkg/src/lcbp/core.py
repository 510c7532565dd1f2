"""Discrete factor tables, factor graphs and the plain-text factor-graph format.

Tables are dense numpy arrays with one axis per variable, axes ordered by
ascending variable id.  Flat (linear) indexing uses column-major order, so the
lowest-id variable is the fastest-changing index.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np


class LCBPError(Exception):
    """Base class for errors raised by this package."""


class DomainError(LCBPError, ValueError):
    """Argument outside the domain of an operation."""


class DegenerateError(LCBPError, ArithmeticError):
    """A table, model or update has no support (everything is zero)."""


class CapacityError(LCBPError):
    """A configured state-space or table-size guard was exceeded."""


@dataclass(frozen=True)
class Variable:
    id: int
    cardinality: int

    def __post_init__(self):
        if self.id < 0:
            raise DomainError(f"variable id must be non-negative, got {self.id}")
        if self.cardinality < 1:
            raise DomainError(f"variable {self.id}: cardinality must be >= 1")


def linear_index(vars: Sequence[int], cards: Sequence[int], assignment: Mapping[int, int]) -> int:
    """Flat offset of ``assignment`` in a table over ``vars`` (first var fastest)."""
    idx = 0
    stride = 1
    for v, c in zip(vars, cards):
        s = assignment[v]
        if not 0 <= s < c:
            raise DomainError(f"state {s} of variable {v} out of range [0, {c})")
        idx += s * stride
        stride *= c
    return idx


def unlinear_index(vars: Sequence[int], cards: Sequence[int], index: int) -> dict[int, int]:
    total = math.prod(cards)
    if not 0 <= index < total:
        raise DomainError(f"index {index} out of range [0, {total})")
    out = {}
    for v, c in zip(vars, cards):
        index, out[v] = divmod(index, c)
    return out


class FactorTable:
    """Immutable non-negative table over an ascending tuple of variable ids."""

    __slots__ = ("vars", "cards", "array")

    def __init__(self, vars: Sequence[int], cards: Sequence[int], values):
        vars = tuple(int(v) for v in vars)
        cards = tuple(int(c) for c in cards)
        if len(vars) != len(cards):
            raise DomainError("vars and cards differ in length")
        if any(b <= a for a, b in zip(vars, vars[1:])):
            raise DomainError(f"factor variables must be strictly ascending: {vars}")
        if any(c < 1 for c in cards):
            raise DomainError("cardinalities must be >= 1")
        arr = np.array(values, dtype=float)
        size = math.prod(cards)
        if arr.shape != cards:
            if arr.size != size:
                raise DomainError(f"expected {size} values for cards {cards}, got {arr.size}")
            arr = arr.reshape(cards, order="F") if arr.ndim <= 1 else arr.reshape(cards)
        if np.any(arr < 0) or np.any(np.isnan(arr)):
            raise DomainError("factor values must be non-negative")
        arr.setflags(write=False)
        self.vars = vars
        self.cards = cards
        self.array = arr

    # constructors -------------------------------------------------------

    @classmethod
    def scalar(cls, value: float = 1.0) -> "FactorTable":
        return cls((), (), np.array(value, dtype=float))

    @classmethod
    def uniform(cls, vars: Sequence[int], cards: Sequence[int]) -> "FactorTable":
        size = math.prod(cards)
        return cls(vars, cards, np.full(tuple(cards), 1.0 / size))

    @classmethod
    def from_array(cls, vars: Sequence[int], array) -> "FactorTable":
        """Build from an array whose axes follow ``vars`` in any order."""
        array = np.asarray(array, dtype=float)
        if array.ndim != len(vars):
            raise DomainError("array rank does not match number of variables")
        if len(set(vars)) != len(vars):
            raise DomainError("duplicate variables")
        perm = sorted(range(len(vars)), key=lambda k: vars[k])
        svars = [vars[k] for k in perm]
        arr = np.transpose(array, perm)
        return cls(svars, arr.shape, arr)

    # views ---------------------------------------------------------------

    @property
    def values(self) -> np.ndarray:
        """Flat values in linear-index order (first variable fastest)."""
        return self.array.ravel(order="F")

    @property
    def size(self) -> int:
        return self.array.size

    def card_of(self, v: int) -> int:
        return self.cards[self.vars.index(v)]

    def total(self) -> float:
        return float(self.array.sum())

    def __getitem__(self, assignment: Mapping[int, int]) -> float:
        return float(self.array[tuple(assignment[v] for v in self.vars)])

    def __repr__(self):
        return f"FactorTable(vars={self.vars}, cards={self.cards}, values={self.values.tolist()})"

    def __eq__(self, other):
        if not isinstance(other, FactorTable):
            return NotImplemented
        return (self.vars == other.vars and self.cards == other.cards
                and np.array_equal(self.array, other.array))

    __hash__ = None

    def allclose(self, other: "FactorTable", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        return (self.vars == other.vars and self.cards == other.cards
                and np.allclose(self.array, other.array, atol=atol, rtol=rtol))

    def expand(self, vars: Sequence[int]) -> np.ndarray:
        """Broadcastable view of the table in the axis frame of ascending ``vars``."""
        pos = {v: k for k, v in enumerate(vars)}
        shape = [1] * len(vars)
        for v, c in zip(self.vars, self.cards):
            shape[pos[v]] = c
        return self.array.reshape(shape)

    # algebra -------------------------------------------------------------

    def __mul__(self, other: "FactorTable") -> "FactorTable":
        return table_multiply(self, other)

    def marginalize(self, keep: Iterable[int]) -> "FactorTable":
        return table_marginalize(self, keep)

    def normalize(self) -> "FactorTable":
        return table_normalize(self)

    def slice(self, v: int, state: int) -> "FactorTable":
        """Fix ``v`` to ``state``; the scope shrinks by ``v``, values are not renormalized."""
        k = self.vars.index(v)
        if not 0 <= state < self.cards[k]:
            raise DomainError(f"state {state} out of range for variable {v}")
        arr = np.take(self.array, state, axis=k)
        return FactorTable(self.vars[:k] + self.vars[k + 1:], self.cards[:k] + self.cards[k + 1:], arr)


def _union_scope(tables: Sequence[FactorTable]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    cards: dict[int, int] = {}
    for t in tables:
        for v, c in zip(t.vars, t.cards):
            if cards.setdefault(v, c) != c:
                raise DomainError(f"variable {v} has inconsistent cardinalities {cards[v]} and {c}")
    vars = tuple(sorted(cards))
    return vars, tuple(cards[v] for v in vars)


def table_multiply(a: FactorTable, b: FactorTable) -> FactorTable:
    vars, cards = _union_scope((a, b))
    arr = a.expand(vars) * b.expand(vars)
    return FactorTable(vars, cards, np.broadcast_to(arr, cards))


def table_product(tables: Iterable[FactorTable]) -> FactorTable:
    tables = list(tables)
    if not tables:
        return FactorTable.scalar(1.0)
    vars, cards = _union_scope(tables)
    arr = reduce(np.multiply, (t.expand(vars) for t in tables))
    return FactorTable(vars, cards, np.broadcast_to(arr, cards))


def table_marginalize(a: FactorTable, keep: Iterable[int]) -> FactorTable:
    keep = set(keep)
    if not keep <= set(a.vars):
        raise DomainError(f"cannot keep {sorted(keep - set(a.vars))}: not in scope {a.vars}")
    axes = tuple(k for k, v in enumerate(a.vars) if v not in keep)
    if not axes:
        return a
    arr = a.array.sum(axis=axes)
    kv = [v for v in a.vars if v in keep]
    return FactorTable(kv, [a.card_of(v) for v in kv], arr)


def table_normalize(a: FactorTable) -> FactorTable:
    z = a.array.sum()
    if not z > 0:
        raise DegenerateError("cannot normalize an all-zero table")
    return FactorTable(a.vars, a.cards, a.array / z)


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Variables plus a list of factors; neighbourhoods are derived lazily.

    Variable ids need not be contiguous: subgraphs produced by clamping or by
    removing a cavity keep the ids of the graph they came from.
    """

    variables: tuple[Variable, ...]
    factors: tuple[FactorTable, ...]
    _card: dict = field(init=False, repr=False, compare=False)

    def __init__(self, variables: Iterable[Variable], factors: Iterable[FactorTable]):
        variables = tuple(sorted(variables, key=lambda v: v.id))
        card = {}
        for v in variables:
            if v.id in card:
                raise DomainError(f"duplicate variable id {v.id}")
            card[v.id] = v.cardinality
        factors = tuple(factors)
        for n, f in enumerate(factors):
            for v, c in zip(f.vars, f.cards):
                if v not in card:
                    raise DomainError(f"factor {n} uses unknown variable {v}")
                if card[v] != c:
                    raise DomainError(f"factor {n}: cardinality of variable {v} is {c}, expected {card[v]}")
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "_card", card)

    @classmethod
    def from_factors(cls, factors: Iterable[FactorTable], cards: Mapping[int, int] | None = None) -> "FactorGraph":
        """Graph over variables ``0..n-1`` inferred from the factors (plus ``cards``)."""
        factors = list(factors)
        card = dict(cards or {})
        for f in factors:
            for v, c in zip(f.vars, f.cards):
                card.setdefault(v, c)
        n = max(card, default=-1) + 1
        for v in range(n):
            card.setdefault(v, 1)
        return cls([Variable(v, card[v]) for v in range(n)], factors)

    # structure -------------------------------------------------------

    @property
    def var_ids(self) -> tuple[int, ...]:
        return tuple(v.id for v in self.variables)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def card(self, i: int) -> int:
        try:
            return self._card[i]
        except KeyError:
            raise DomainError(f"unknown variable {i}") from None

    def cards_of(self, vars: Iterable[int]) -> tuple[int, ...]:
        return tuple(self.card(v) for v in vars)

    def has_var(self, i: int) -> bool:
        return i in self._card

    @cached_property
    def nbv(self) -> dict[int, tuple[int, ...]]:
        """N(i): indices of the factors containing each variable, ascending."""
        out: dict[int, list[int]] = {v: [] for v in self._card}
        for n, f in enumerate(self.factors):
            for v in f.vars:
                out[v].append(n)
        return {v: tuple(fs) for v, fs in out.items()}

    def nbf(self, I: int) -> tuple[int, ...]:
        return self.factors[I].vars

    @cached_property
    def delta(self) -> dict[int, tuple[int, ...]]:
        """Delta(i): union of the scopes of the factors containing i (includes i)."""
        out = {}
        for v, fs in self.nbv.items():
            s = {v}
            for n in fs:
                s.update(self.factors[n].vars)
            out[v] = tuple(sorted(s))
        return out

    @cached_property
    def blanket(self) -> dict[int, tuple[int, ...]]:
        """Markov blanket: Delta(i) without i."""
        return {v: tuple(u for u in d if u != v) for v, d in self.delta.items()}

    def components(self) -> list[list[int]]:
        """Connected components (lists of variable ids) of the factor graph."""
        parent = {v: v for v in self._card}

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        for f in self.factors:
            for a, b in zip(f.vars, f.vars[1:]):
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for v in sorted(self._card):
            groups.setdefault(find(v), []).append(v)
        return list(groups.values())

    def is_connected(self) -> bool:
        return len(self.components()) <= 1

    # evaluation & transformation --------------------------------------

    def joint_value(self, assignment: Mapping[int, int]) -> float:
        """Unnormalized product of all factors at a full assignment."""
        val = 1.0
        for f in self.factors:
            val *= f[assignment]
        return val

    def subgraph(self, keep_vars: Iterable[int], factor_idx: Iterable[int]) -> "FactorGraph":
        keep = set(keep_vars)
        return FactorGraph([v for v in self.variables if v.id in keep],
                           [self.factors[n] for n in factor_idx])

    def merge_duplicates(self) -> "FactorGraph":
        """Multiply together factors that share exactly the same scope (first position kept)."""
        first: dict[tuple[int, ...], int] = {}
        merged: list[FactorTable] = []
        for f in self.factors:
            k = first.get(f.vars)
            if k is None:
                first[f.vars] = len(merged)
                merged.append(f)
            else:
                merged[k] = table_multiply(merged[k], f)
        return FactorGraph(self.variables, merged)


def clamp_variable(g: FactorGraph, i: int, s: int) -> FactorGraph:
    """Slice every factor containing ``i`` at ``x_i = s`` and drop variable ``i``."""
    if not 0 <= s < g.card(i):
        raise DomainError(f"state {s} out of range for variable {i}")
    return clamp(g, {i: s})


def clamp(g: FactorGraph, assignment: Mapping[int, int]) -> FactorGraph:
    """Clamp several variables at once; equivalent to repeated :func:`clamp_variable`."""
    for v, s in assignment.items():
        if not 0 <= s < g.card(v):
            raise DomainError(f"state {s} out of range for variable {v}")
    factors = []
    for f in g.factors:
        hit = [v for v in f.vars if v in assignment]
        if not hit:
            factors.append(f)
            continue
        idx = tuple(assignment[v] if v in assignment else slice(None) for v in f.vars)
        kv = [v for v in f.vars if v not in assignment]
        factors.append(FactorTable(kv, [f.card_of(v) for v in kv], f.array[idx]))
    return FactorGraph([v for v in g.variables if v.id not in assignment], factors)


# ---------------------------------------------------------------------------
# text format


def _format_value(x: float) -> str:
    return repr(float(x))


def write_table_block(f: FactorTable, out: TextIO) -> None:
    out.write(f"{len(f.vars)}\n")
    out.write(" ".join(str(v) for v in f.vars) + "\n")
    out.write(" ".join(str(c) for c in f.cards) + "\n")
    flat = f.values
    nz = np.flatnonzero(flat)
    out.write(f"{len(nz)}\n")
    for k in nz:
        out.write(f"{k} {_format_value(flat[k])}\n")


def write_factor_graph(g: FactorGraph, out: TextIO) -> None:
    out.write(f"{len(g.factors)}\n")
    for f in g.factors:
        out.write("\n")
        write_table_block(f, out)


def dumps_factor_graph(g: FactorGraph) -> str:
    buf = io.StringIO()
    write_factor_graph(g, buf)
    return buf.getvalue()


def _content_lines(text: str):
    for raw in text.splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            yield line


class _Tokens:
    def __init__(self, text: str):
        self._lines = _content_lines(text)
        self.lineno = 0

    def line(self) -> str:
        try:
            self.lineno += 1
            return next(self._lines)
        except StopIteration:
            raise DomainError("unexpected end of factor-graph input") from None

    def ints(self) -> list[int]:
        return [int(t) for t in self.line().split()]


def read_table_block(tok: _Tokens) -> FactorTable:
    n = int(tok.line())
    vars = tok.ints() if n else []
    cards = tok.ints() if n else []
    if len(vars) != n or len(cards) != n:
        raise DomainError(f"factor block declares {n} variables but lists {len(vars)} ids / {len(cards)} cards")
    order = sorted(range(n), key=lambda k: vars[k])
    flat = np.zeros(math.prod(cards))
    nnz = int(tok.line())
    for _ in range(nnz):
        k, val = tok.line().split()
        flat[int(k)] = float(val)
    arr = flat.reshape(cards, order="F") if n else flat.reshape(())
    if order != list(range(n)):
        return FactorTable.from_array(vars, arr)
    return FactorTable(vars, cards, arr)


def parse_factor_graph(text: str, cards: Mapping[int, int] | None = None) -> FactorGraph:
    tok = _Tokens(text)
    nf = int(tok.line())
    factors = [read_table_block(tok) for _ in range(nf)]
    return FactorGraph.from_factors(factors, cards)


def load_factor_graph(path) -> FactorGraph:
    with open(path) as fh:
        return parse_factor_graph(fh.read())


def save_factor_graph(g: FactorGraph, path) -> None:
    with open(path, "w") as fh:
        write_factor_graph(g, fh)

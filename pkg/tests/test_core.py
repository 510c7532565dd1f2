import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcbp.core import (DegenerateError, DomainError, FactorGraph, FactorTable, Variable, clamp,
                       clamp_variable, dumps_factor_graph, linear_index, parse_factor_graph,
                       table_marginalize, table_multiply, table_normalize, table_product,
                       unlinear_index)

from conftest import enumerate_joint, random_graph


@st.composite
def scopes(draw, max_vars=4, max_card=4):
    n = draw(st.integers(0, max_vars))
    vars = sorted(draw(st.sets(st.integers(0, 20), min_size=n, max_size=n)))
    cards = [draw(st.integers(1, max_card)) for _ in vars]
    return vars, cards


@st.composite
def tables(draw, max_vars=4, max_card=3):
    vars, cards = draw(scopes(max_vars, max_card))
    size = math.prod(cards)
    vals = draw(st.lists(st.floats(0.0, 10.0), min_size=size, max_size=size))
    return FactorTable(vars, cards, vals)


class TestLinearIndex:
    @pytest.mark.parametrize("vars,cards,assign,expected", [
        ([0, 1], [2, 2], {0: 0, 1: 0}, 0),
        ([0, 1], [2, 3], {0: 1, 1: 2}, 5),
        ([2, 5], [3, 2], {2: 2, 5: 1}, 5),
    ])
    def test_examples(self, vars, cards, assign, expected):
        assert linear_index(vars, cards, assign) == expected

    def test_out_of_range_state(self):
        with pytest.raises(DomainError):
            linear_index([0], [2], {0: 2})

    def test_first_variable_fastest(self):
        seen = [unlinear_index([2, 5], [3, 2], k) for k in range(6)]
        assert [s[2] for s in seen] == [0, 1, 2, 0, 1, 2]
        assert [s[5] for s in seen] == [0, 0, 0, 1, 1, 1]

    @given(scopes(), st.data())
    def test_round_trip(self, scope, data):
        vars, cards = scope
        k = data.draw(st.integers(0, math.prod(cards) - 1))
        s = unlinear_index(vars, cards, k)
        assert linear_index(vars, cards, s) == k

    @given(tables(), st.data())
    def test_values_agree_with_indexing(self, t, data):
        k = data.draw(st.integers(0, t.size - 1))
        assert t.values[k] == t[unlinear_index(t.vars, t.cards, k)]


class TestFactorTable:
    def test_rejects_negative(self):
        with pytest.raises(DomainError):
            FactorTable([0], [2], [1.0, -1.0])

    def test_rejects_unsorted_scope(self):
        with pytest.raises(DomainError):
            FactorTable([1, 0], [2, 2], [1, 1, 1, 1])

    def test_wrong_length(self):
        with pytest.raises(DomainError):
            FactorTable([0, 1], [2, 2], [1, 2, 3])

    def test_from_array_reorders_axes(self):
        arr = np.arange(6.0).reshape(2, 3)  # axes (5, 2)
        t = FactorTable.from_array([5, 2], arr)
        assert t.vars == (2, 5)
        assert t[{2: 1, 5: 0}] == arr[0, 1]

    def test_immutable(self):
        t = FactorTable([0], [2], [1, 2])
        with pytest.raises(ValueError):
            t.array[0] = 5


class TestMultiply:
    def test_same_scope(self):
        r = table_multiply(FactorTable([0], [2], [1, 2]), FactorTable([0], [2], [3, 5]))
        assert list(r.values) == [3, 10]

    def test_scalar_broadcast(self):
        r = table_multiply(FactorTable([0], [2], [1, 2]), FactorTable.scalar(7.0))
        assert r.vars == (0,) and list(r.values) == [7, 14]

    def test_disjoint_scopes(self):
        r = table_multiply(FactorTable([0], [2], [1, 2]), FactorTable([1], [2], [3, 5]))
        assert r.vars == (0, 1)
        assert list(r.values) == [3, 6, 5, 10]

    def test_card_mismatch(self):
        with pytest.raises(DomainError):
            table_multiply(FactorTable([0], [2], [1, 2]), FactorTable([0], [3], [1, 2, 3]))

    @given(tables(3, 3), tables(3, 3))
    def test_commutative(self, a, b):
        try:
            ab = table_multiply(a, b)
        except DomainError:
            return
        assert ab.allclose(table_multiply(b, a))

    @given(tables(3, 2), tables(3, 2))
    def test_total_equals_inner_product(self, a, b):
        try:
            ab = table_multiply(a, b)
        except DomainError:
            return
        ref = 0.0
        joint_vars = ab.vars
        for k in range(ab.size):
            s = unlinear_index(joint_vars, ab.cards, k)
            ref += a[s] * b[s]
        assert math.isclose(ab.total(), ref, rel_tol=1e-12, abs_tol=1e-12)

    def test_product_of_many(self):
        ts = [FactorTable([v], [2], [1, v + 1]) for v in range(3)]
        p = table_product(ts)
        assert p.vars == (0, 1, 2)
        assert p[{0: 1, 1: 1, 2: 1}] == 1 * 2 * 3


class TestMarginalize:
    def test_example(self):
        r = table_marginalize(FactorTable([0, 1], [2, 2], [1, 2, 3, 4]), [0])
        assert list(r.values) == [4, 6]

    def test_keep_all(self):
        t = FactorTable([0, 1], [2, 2], [1, 2, 3, 4])
        assert table_marginalize(t, [0, 1]) == t

    def test_keep_none(self):
        r = table_marginalize(FactorTable([0, 1], [2, 2], [1, 2, 3, 4]), [])
        assert r.vars == () and float(r.array) == 10

    @given(tables(4, 3), st.data())
    def test_commutes(self, t, data):
        K2 = data.draw(st.sets(st.sampled_from(t.vars))) if t.vars else set()
        K1 = data.draw(st.sets(st.sampled_from(sorted(K2)))) if K2 else set()
        a = table_marginalize(table_marginalize(t, K2), K1)
        b = table_marginalize(t, K1)
        np.testing.assert_allclose(a.array, b.array, rtol=1e-12, atol=1e-12)

    @given(tables(4, 3))
    def test_total_preserved(self, t):
        keep = t.vars[: len(t.vars) // 2]
        assert math.isclose(table_marginalize(t, keep).total(), t.total(), rel_tol=1e-12, abs_tol=1e-12)


class TestNormalize:
    @pytest.mark.parametrize("vals,expected", [
        ([2, 2], [0.5, 0.5]),
        ([0, 4], [0.0, 1.0]),
        ([1, 2, 3, 4], [0.1, 0.2, 0.3, 0.4]),
    ])
    def test_examples(self, vals, expected):
        t = FactorTable([0], [len(vals)], vals)
        np.testing.assert_allclose(table_normalize(t).values, expected, rtol=1e-15)

    def test_zero_table(self):
        with pytest.raises(DegenerateError):
            table_normalize(FactorTable([0], [2], [0, 0]))


class TestFactorGraph:
    def test_neighbourhoods(self):
        f = [FactorTable([0, 1], [2, 2], np.ones(4)), FactorTable([1, 2], [2, 2], np.ones(4)),
             FactorTable([2], [2], [1, 1])]
        g = FactorGraph.from_factors(f)
        assert g.nbv == {0: (0,), 1: (0, 1), 2: (1, 2)}
        assert g.delta[1] == (0, 1, 2)
        assert g.blanket[1] == (0, 2)
        assert g.blanket[0] == (1,)

    def test_bipartite_consistency(self, rng):
        for _ in range(20):
            g = random_graph(rng, 6)
            for v in g.var_ids:
                for I in g.nbv[v]:
                    assert v in g.nbf(I)
            for I in range(len(g.factors)):
                for v in g.nbf(I):
                    assert I in g.nbv[v]
                    assert set(g.blanket[v]) == set(g.delta[v]) - {v}

    def test_unknown_variable_in_factor(self):
        with pytest.raises(DomainError):
            FactorGraph([Variable(0, 2)], [FactorTable([1], [2], [1, 1])])

    def test_card_conflict(self):
        with pytest.raises(DomainError):
            FactorGraph([Variable(0, 3)], [FactorTable([0], [2], [1, 1])])

    def test_components(self):
        f = [FactorTable([0, 1], [2, 2], np.ones(4)), FactorTable([2, 3], [2, 2], np.ones(4))]
        g = FactorGraph.from_factors(f, {4: 2})
        assert g.components() == [[0, 1], [2, 3], [4]]
        assert not g.is_connected()

    def test_merge_duplicates(self):
        a = FactorTable([0, 1], [2, 2], [1, 2, 3, 4])
        b = FactorTable([0, 1], [2, 2], [2, 2, 2, 2])
        g = FactorGraph.from_factors([a, FactorTable([1], [2], [1, 3]), b]).merge_duplicates()
        assert len(g.factors) == 2
        assert list(g.factors[0].values) == [2, 4, 6, 8]


class TestClamp:
    def test_slice_example(self):
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        # linear order over (x0, x1): (0,0)=a, (1,0)=b, (0,1)=c, (1,1)=d
        g = FactorGraph.from_factors([FactorTable([0, 1], [2, 2], [a, b, c, d])])
        h = clamp_variable(g, 0, 1)
        assert h.var_ids == (1,)
        assert h.factors[0].vars == (1,)
        assert list(h.factors[0].values) == [b, d]

    def test_clamp_everything(self, rng):
        g = random_graph(rng, 5, max_card=3)
        x = {v: int(rng.integers(0, g.card(v))) for v in g.var_ids}
        h = clamp(g, x)
        assert h.n_vars == 0
        val = math.prod(float(f.array) for f in h.factors)
        assert math.isclose(val, g.joint_value(x), rel_tol=1e-12)

    def test_untouched_variable(self):
        f = FactorTable([0], [2], [1, 2])
        g = FactorGraph.from_factors([f], {1: 3})
        h = clamp_variable(g, 1, 2)
        assert h.var_ids == (0,)
        assert h.factors == (f,)

    def test_unknown_variable(self):
        g = FactorGraph.from_factors([FactorTable([0], [2], [1, 2])])
        with pytest.raises(DomainError):
            clamp_variable(g, 7, 0)

    def test_bad_state(self):
        g = FactorGraph.from_factors([FactorTable([0], [2], [1, 2])])
        with pytest.raises(DomainError):
            clamp_variable(g, 0, 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_clamped_total_is_slice_of_joint(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, int(rng.integers(2, 8)), max_card=2)
        i = int(rng.integers(0, g.n_vars))
        s = int(rng.integers(0, g.card(i)))
        h = clamp_variable(g, i, s)
        lhs = sum(w for _, w in enumerate_joint(h))
        rhs = sum(w for x, w in enumerate_joint(g) if x[i] == s)
        assert math.isclose(lhs, rhs, rel_tol=1e-12, abs_tol=1e-300)


class TestFileFormat:
    def test_layout(self):
        g = FactorGraph.from_factors([FactorTable([0, 1], [2, 2], [0, 1.5, 0, 2])])
        text = dumps_factor_graph(g)
        lines = text.splitlines()
        assert lines[0] == "1"
        assert lines[2:6] == ["2", "0 1", "2 2", "2"]
        assert lines[6].split()[0] == "1" and float(lines[6].split()[1]) == 1.5
        assert lines[7].split()[0] == "3" and float(lines[7].split()[1]) == 2.0

    def test_comments_and_blank_lines(self):
        text = "# header\n2\n\n1\n0\n2\n2\n0 0.25\n# mid\n1 0.75\n\n1\n1\n3\n1\n2 1\n"
        g = parse_factor_graph(text)
        assert g.cards_of(g.var_ids) == (2, 3)
        assert list(g.factors[0].values) == [0.25, 0.75]
        assert list(g.factors[1].values) == [0, 0, 1]

    def test_unsorted_ids_in_file(self):
        text = "1\n\n2\n3 1\n2 2\n1\n1 5\n"
        g = parse_factor_graph(text)
        f = g.factors[0]
        assert f.vars == (1, 3)
        # listed order (3, 1): index 1 means x3 = 1, x1 = 0
        assert f[{1: 0, 3: 1}] == 5
        assert f.total() == 5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.booleans())
    def test_round_trip_bit_exact(self, seed, zeros):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, int(rng.integers(1, 7)), zeros=zeros)
        # isolated trailing variables carry no factor and cannot be recorded in the file
        used = {v for f in g.factors for v in f.vars}
        g = g.subgraph(sorted(used), range(len(g.factors))) if used else g
        text = dumps_factor_graph(g)
        h = parse_factor_graph(text, cards={v: g.card(v) for v in g.var_ids})
        assert len(h.factors) == len(g.factors)
        for a, b in zip(g.factors, h.factors):
            assert a.vars == b.vars and a.cards == b.cards
            assert np.array_equal(a.array, b.array)
        assert dumps_factor_graph(h) == text

    def test_truncated_file(self):
        with pytest.raises((DomainError, ValueError)):
            parse_factor_graph("1\n\n2\n0 1\n2 2\n3\n0 1\n")

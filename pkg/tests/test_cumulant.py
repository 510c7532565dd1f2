import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcbp.bp import bp_beliefs, run_bp
from lcbp.cavity import init_clamped, init_uniform
from lcbp.core import CapacityError, DegenerateError, DomainError, FactorGraph, FactorTable
from lcbp.cumulant import (CumulantState, PairwiseBinaryModel, consistency_residual,
                           cumulants_from_moments, dumps_spin_model, factor_graph_to_spin,
                           final_magnetization, full_update, linear_final_magnetization,
                           linear_update, moments_from_cavity_table, parity_weighted_sum,
                           parse_spin_model, part2_moment, run_lcbp_cum, run_lcbp_cum_lin,
                           spin_to_factor_graph)
from lcbp.models import RegularSpinSpec, gen_regular_spin

from conftest import cycle_with_trees, oracle_marginals, random_tree, spin_model


def set_partitions(items):
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for k in range(len(part)):
            yield part[:k] + [[first] + part[k]] + part[k + 1:]


def moment_by_partitions(A, C):
    return sum(math.prod(C[frozenset(b)] for b in p) for p in set_partitions(sorted(A)))


def exact_magnetizations(model):
    marg, _ = oracle_marginals(spin_to_factor_graph(model))
    return np.array([marg[i][1] - marg[i][0] for i in range(model.N)])


def bp_magnetizations(model):
    g = spin_to_factor_graph(model)
    b, _ = bp_beliefs(g, run_bp(g)[0])
    return np.array([b[i].array[1] - b[i].array[0] for i in range(model.N)])


def zero_cumulants(model, M=None):
    Ms = {i: {j: (0.0 if M is None else M) for j in model.neighbors[i]} for i in range(model.N)}
    return CumulantState(Ms, {i: {} for i in range(model.N)})


def scaled(st_, eps):
    return CumulantState({i: dict(d) for i, d in st_.M.items()},
                         {i: {k: v * eps for k, v in d.items()} for i, d in st_.C.items()})


class TestPartitions:
    def test_oracle_counts(self):
        # Bell numbers
        assert [sum(1 for _ in set_partitions(range(n))) for n in range(6)] == [1, 1, 2, 5, 15, 52]


class TestMoments:
    def test_uniform(self):
        z = FactorTable.uniform((1, 4, 6), (2, 2, 2))
        mom = moments_from_cavity_table(z)
        assert mom[frozenset()] == 1.0
        assert all(abs(v) < 1e-15 for A, v in mom.items() if A)

    def test_point_mass_all_up(self):
        arr = np.zeros((2, 2, 2))
        arr[1, 1, 1] = 1
        mom = moments_from_cavity_table(FactorTable((0, 1, 2), (2, 2, 2), arr))
        assert all(v == 1.0 for v in mom.values())

    def test_product_measure(self, rng):
        m = rng.uniform(-0.9, 0.9, 3)
        arr = np.einsum("a,b,c->abc", *[np.array([(1 - x) / 2, (1 + x) / 2]) for x in m])
        mom = moments_from_cavity_table(FactorTable((0, 1, 2), (2, 2, 2), arr))
        assert abs(mom[frozenset((0, 2))] - m[0] * m[2]) < 1e-14
        cum = cumulants_from_moments(mom)
        assert all(abs(v) < 1e-14 for A, v in cum.items() if len(A) >= 2)

    def test_non_binary_rejected(self):
        with pytest.raises(DomainError):
            moments_from_cavity_table(FactorTable.uniform((0, 1), (2, 3)))

    def test_pair_cumulant_identity(self):
        mom = {frozenset(): 1.0, frozenset("j"): 0.5, frozenset("k"): 0.5, frozenset("jk"): 0.5}
        assert cumulants_from_moments(mom)[frozenset("jk")] == 0.25

    def test_third_order_by_hand(self, rng):
        p = rng.uniform(0.1, 1, (2, 2, 2))
        mom = moments_from_cavity_table(FactorTable((0, 1, 2), (2, 2, 2), p / p.sum()))
        M = lambda *a: mom[frozenset(a)]
        direct = (M(0, 1, 2) - M(0) * M(1, 2) - M(1) * M(0, 2) - M(2) * M(0, 1)
                  + 2 * M(0) * M(1) * M(2))
        assert abs(cumulants_from_moments(mom)[frozenset((0, 1, 2))] - direct) < 1e-14

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2 ** 31))
    def test_inverts_partition_relation(self, n, seed):
        rng = np.random.default_rng(seed)
        C = {frozenset(A): float(rng.normal()) for r in range(1, n + 1)
             for A in itertools.combinations(range(n), r)}
        mom = {frozenset(A): moment_by_partitions(A, C) for r in range(n + 1)
               for A in itertools.combinations(range(n), r)}
        back = cumulants_from_moments(mom)
        for A, v in C.items():
            assert abs(back[A] - v) < 1e-9 * max(1.0, abs(v))


class TestPart2:
    def test_singleton(self):
        assert part2_moment([3], {3: 0.3}, {}) == 0.3

    def test_pair(self):
        M = {1: 0.2, 2: -0.5}
        assert math.isclose(part2_moment([1, 2], M, {frozenset((1, 2)): 0.1}), 0.2 * -0.5 + 0.1)

    def test_independent_four(self):
        M = {k: 0.1 * (k + 1) for k in range(4)}
        assert math.isclose(part2_moment(range(4), M, {}), math.prod(M.values()))

    def test_empty(self):
        assert part2_moment([], {}, {}) == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 5), st.integers(0, 2 ** 31))
    def test_matches_partition_oracle_without_higher_cumulants(self, n, seed):
        rng = np.random.default_rng(seed)
        single = {k: float(rng.uniform(-1, 1)) for k in range(n)}
        pair = {frozenset(A): float(rng.normal(0, 0.3)) for A in itertools.combinations(range(n), 2)}
        C = {frozenset(A): 0.0 for r in range(3, n + 1) for A in itertools.combinations(range(n), r)}
        C.update({frozenset((k,)): v for k, v in single.items()})
        C.update(pair)
        assert abs(part2_moment(range(n), single, pair) - moment_by_partitions(range(n), C)) < 1e-12


class TestParitySums:
    moment = staticmethod(lambda A: 0.1 * (len(A) + 1) * (-1) ** sum(A))

    def test_empty_even(self):
        assert parity_weighted_sum([], "even", {}, lambda A: 1.0) == 1.0

    def test_empty_odd(self):
        assert parity_weighted_sum([], "odd", {}, lambda A: 1.0) == 0.0

    def test_single_element_split(self):
        M = {(): 1.0, (2,): 0.4, (5,): -0.3, (2, 5): 0.25}
        t = {2: 0.7}
        assert parity_weighted_sum([2], "even", t, M.__getitem__, attach=(5,)) == M[(5,)]
        assert math.isclose(parity_weighted_sum([2], "odd", t, M.__getitem__, attach=(5,)), 0.7 * M[(2, 5)])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 6), st.integers(0, 2 ** 31))
    def test_even_plus_odd_is_unrestricted(self, n, seed):
        rng = np.random.default_rng(seed)
        t = {k: float(rng.uniform(-1, 1)) for k in range(n)}
        vals = {}

        def moment(A):
            return vals.setdefault(A, float(rng.normal()))

        total = 0.0
        for r in range(n + 1):
            for A in itertools.combinations(range(n), r):
                total += math.prod(t[k] for k in A) * moment(A)
        split = parity_weighted_sum(range(n), "even", t, moment) + parity_weighted_sum(range(n), "odd", t, moment)
        assert abs(split - total) < 1e-12

    def test_guard(self):
        with pytest.raises(CapacityError):
            parity_weighted_sum(range(25), "even", {k: 0.1 for k in range(25)}, lambda A: 1.0)

    def test_bad_parity(self):
        with pytest.raises(DomainError):
            parity_weighted_sum([], "both", {}, lambda A: 1.0)

    def test_t_multiplicative(self):
        model = PairwiseBinaryModel(np.zeros(4), {(0, 1): 0.3, (0, 2): -0.7, (0, 3): 1.1})
        tA = lambda A: math.prod(model.t(0, k) for k in A)
        assert math.isclose(tA([1, 2, 3]), tA([1]) * tA([2, 3]), rel_tol=1e-15)
        assert model.t(0, 2) == model.t(2, 0) == math.tanh(-0.7)


class TestModelFormat:
    def test_validation(self):
        with pytest.raises(DomainError):
            PairwiseBinaryModel(np.zeros(2), {(1, 1): 0.5})
        with pytest.raises(DomainError):
            PairwiseBinaryModel(np.zeros(2), {(0, 2): 0.5})

    def test_single_spin_table(self):
        th = math.log(3) / 2
        g = spin_to_factor_graph(PairwiseBinaryModel(np.array([th]), {}))
        t = g.factors[0].array
        assert math.isclose(t[1] / t[0], 3.0, rel_tol=1e-14)
        np.testing.assert_allclose(t / t.sum(), [0.25, 0.75], rtol=1e-14)

    def test_zero_coupling_table_is_flat(self):
        g = spin_to_factor_graph(PairwiseBinaryModel(np.zeros(2), {(0, 1): 0.0}))
        np.testing.assert_allclose(g.factors[-1].array, 1.0)

    def test_field_sign_flip_mirrors(self, rng):
        m = spin_model(6, [(0, 1), (1, 2), (2, 3), (3, 0), (2, 4), (4, 5)], rng)
        flipped = PairwiseBinaryModel(-m.theta, m.J)
        np.testing.assert_allclose(exact_magnetizations(flipped), -exact_magnetizations(m), atol=1e-14)

    def test_joint_matches_energy(self, rng):
        m = spin_model(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)], rng)
        g = spin_to_factor_graph(m)
        weights, energies = [], []
        for x in itertools.product((0, 1), repeat=5):
            s = 2 * np.array(x) - 1
            weights.append(g.joint_value(dict(enumerate(x))))
            energies.append(np.dot(m.theta, s) + sum(J * s[a] * s[b] for (a, b), J in m.J.items()))
        p = np.array(weights) / sum(weights)
        q = np.exp(energies) / np.exp(energies).sum()
        np.testing.assert_allclose(p, q, rtol=1e-10)

    def test_round_trips(self, rng):
        m = spin_model(6, [(0, 1), (1, 2), (2, 5), (3, 4)], rng)
        back = parse_spin_model(dumps_spin_model(m))
        np.testing.assert_array_equal(back.theta, m.theta)
        assert back.J == m.J
        conv = factor_graph_to_spin(spin_to_factor_graph(m))
        np.testing.assert_allclose(conv.theta, m.theta, atol=1e-12)
        for k, v in m.J.items():
            assert abs(conv.J[k] - v) < 1e-12

    def test_parse_accepts_theta_keyword(self):
        m = parse_spin_model("theta 0 0.5\nθ 1 -0.25\nJ 1 0 0.3\n")
        assert list(m.theta) == [0.5, -0.25] and m.J == {(0, 1): 0.3}


class TestFullVariant:
    def test_decoupled(self, rng):
        th = rng.normal(size=4)
        m = PairwiseBinaryModel(th, {(0, 1): 0.0, (1, 2): 0.0, (2, 3): 0.0})
        res = run_lcbp_cum(m, zero_cumulants(m))
        assert res.report.converged
        np.testing.assert_allclose(res.magnetizations, np.tanh(th), atol=1e-12)
        for i in range(4):
            for j, v in res.state.M[i].items():
                assert abs(v - math.tanh(th[j])) < 1e-12

    def test_tree_without_cumulants_is_exact(self, rng):
        for n in (4, 7, 10):
            edges = [(int(rng.integers(0, v)), v) for v in range(1, n)]
            m = spin_model(n, edges, rng)
            res = run_lcbp_cum(m, zero_cumulants(m))
            assert res.report.converged
            np.testing.assert_allclose(res.magnetizations, exact_magnetizations(m), atol=1e-6)

    def test_weak_four_cycle_beats_bp(self, rng):
        for _ in range(3):
            m = spin_model(4, [(0, 1), (1, 2), (2, 3), (0, 3)], rng, beta=0.1, theta=2.0)
            g = spin_to_factor_graph(m)
            res = run_lcbp_cum(m, CumulantState.from_cavities(m, init_clamped(g, "exact").tables))
            exact = exact_magnetizations(m)
            assert np.max(np.abs(res.magnetizations - exact)) < np.max(np.abs(bp_magnetizations(m) - exact))

    def test_consistency_at_fixed_point(self):
        m = gen_regular_spin(RegularSpinSpec(12, 3, 0.5, 1.0, seed=4))
        st_ = CumulantState.from_cavities(m, init_clamped(spin_to_factor_graph(m), "bp").tables)
        tol = 1e-9
        res = run_lcbp_cum(m, st_, tol=tol)
        assert res.report.converged
        assert consistency_residual(m, res.state) < tol

    def test_projection(self):
        m = gen_regular_spin(RegularSpinSpec(10, 3, 3.0, 2.0, seed=1))
        st_ = CumulantState.from_cavities(m, init_clamped(spin_to_factor_graph(m), "bp").tables)
        for max_iter in (1, 2, 5, 50):
            try:
                res = run_lcbp_cum(m, st_, max_iter=max_iter)
            except DegenerateError:
                continue
            assert all(abs(v) <= 1 for d in res.state.M.values() for v in d.values())
            assert np.all(np.abs(res.magnetizations) <= 1)

    def test_beliefs_encoding(self):
        m = PairwiseBinaryModel(np.array([0.4]), {})
        b = run_lcbp_cum(m, zero_cumulants(m)).beliefs[0]
        np.testing.assert_allclose(b.values, [(1 - math.tanh(0.4)) / 2, (1 + math.tanh(0.4)) / 2])


class TestLinearVariant:
    def test_equal_to_full_without_cumulants(self, rng):
        m = gen_regular_spin(RegularSpinSpec(12, 3, 0.8, 1.0, seed=2))
        st_ = zero_cumulants(m)
        a, b = run_lcbp_cum(m, st_), run_lcbp_cum_lin(m, st_)
        np.testing.assert_allclose(a.magnetizations, b.magnetizations, atol=1e-12)

    def test_weak_coupling_close_to_full(self):
        for seed in range(3):
            m = gen_regular_spin(RegularSpinSpec(16, 3, 0.1, 2.0, seed=seed))
            st_ = CumulantState.from_cavities(m, init_clamped(spin_to_factor_graph(m), "bp").tables)
            a, b = run_lcbp_cum(m, st_), run_lcbp_cum_lin(m, st_)
            assert np.max(np.abs(a.magnetizations - b.magnetizations)) < 1e-3

    def test_symmetric_zero_field(self):
        m = gen_regular_spin(RegularSpinSpec(10, 3, 0.5, 0.0, seed=0))
        st_ = CumulantState.from_cavities(m, init_clamped(spin_to_factor_graph(m), "bp").tables)
        for run in (run_lcbp_cum, run_lcbp_cum_lin):
            res = run(m, st_)
            assert np.max(np.abs(res.magnetizations)) < 1e-12

    @pytest.mark.parametrize("seed", range(3))
    def test_first_order_agreement_with_full_update(self, seed):
        # full minus linear scales as eps^2 when every pair cumulant is scaled by eps
        m = gen_regular_spin(RegularSpinSpec(10, 3, 0.5, 1.0, seed=seed))
        st_ = CumulantState.from_cavities(m, init_clamped(spin_to_factor_graph(m), "bp").tables)
        pairs = [(i, j) for i in range(m.N) for j in m.neighbors[i]]

        def gap(eps):
            s = scaled(st_, eps)
            upd = max(abs(full_update(m, s, i, j) - linear_update(m, s, i, j)) for i, j in pairs)
            fin = max(abs(final_magnetization(m, s, i) - linear_final_magnetization(m, s, i)) for i in range(m.N))
            return upd, fin

        assert max(gap(0.0)) < 1e-14
        (u1, f1), (u2, f2) = gap(0.04), gap(0.02)
        for a, b in ((u1, u2), (f1, f2)):
            if a > 1e-13:
                assert 3.5 < a / b < 4.5

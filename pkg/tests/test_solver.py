"""Solver engine tests.

The LP path is checked against hand-solved instances, a vertex-enumeration
oracle, and scipy.optimize.linprog on random instances.  The MILP path is
checked against exhaustive enumeration on small binary and SOS1 models.
"""

import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from surgeplan.solver import (
    MipModel,
    SolveOptions,
    SolveStatus,
    VarKind,
    solve_lp,
    solve_mip,
)


def small_options(**kw):
    base = dict(time_limit_seconds=30.0)
    base.update(kw)
    return SolveOptions(**base)


class TestLpBasics:
    def test_two_variable_vertex(self):
        # max x + y s.t. x + 2y <= 4, 3x + y <= 6  ->  min -x - y
        m = MipModel()
        x = m.add_variable("x", 0.0, np.inf, objective=-1.0)
        y = m.add_variable("y", 0.0, np.inf, objective=-1.0)
        m.add_constraint("c1", [(x, 1.0), (y, 2.0)], "<=", 4.0)
        m.add_constraint("c2", [(x, 3.0), (y, 1.0)], "<=", 6.0)
        res = solve_lp(m, small_options())
        assert res.status is SolveStatus.OPTIMAL
        assert res.objective == pytest.approx(-(8 / 5 + 6 / 5), abs=1e-9)
        assert res.value_of(x) == pytest.approx(8 / 5, abs=1e-9)
        assert res.value_of(y) == pytest.approx(6 / 5, abs=1e-9)

    def test_equality_and_negative_bounds(self):
        m = MipModel()
        x = m.add_variable("x", -5.0, 5.0, objective=2.0)
        y = m.add_variable("y", -5.0, 5.0, objective=-3.0)
        m.add_constraint("bal", [(x, 1.0), (y, 1.0)], "=", 1.0)
        res = solve_lp(m, small_options())
        assert res.status is SolveStatus.OPTIMAL
        # push y to +5, then x = -4
        assert res.value_of(y) == pytest.approx(5.0, abs=1e-9)
        assert res.value_of(x) == pytest.approx(-4.0, abs=1e-9)
        assert res.objective == pytest.approx(-23.0, abs=1e-9)

    def test_ge_rows(self):
        m = MipModel()
        x = m.add_variable("x", 0.0, np.inf, objective=1.0)
        y = m.add_variable("y", 0.0, np.inf, objective=1.5)
        m.add_constraint("cover1", [(x, 1.0), (y, 1.0)], ">=", 2.0)
        m.add_constraint("cover2", [(x, 1.0), (y, 3.0)], ">=", 3.0)
        res = solve_lp(m, small_options())
        assert res.status is SolveStatus.OPTIMAL
        assert res.objective == pytest.approx(2.25, abs=1e-9)

    def test_infeasible(self):
        m = MipModel()
        x = m.add_variable("x", 0.0, 1.0, objective=1.0)
        m.add_constraint("c", [(x, 1.0)], ">=", 2.0)
        res = solve_lp(m, small_options())
        assert res.status is SolveStatus.INFEASIBLE

    def test_unbounded(self):
        m = MipModel()
        x = m.add_variable("x", 0.0, np.inf, objective=-1.0)
        y = m.add_variable("y", 0.0, np.inf, objective=0.0)
        m.add_constraint("c", [(x, 1.0), (y, -1.0)], "<=", 1.0)
        res = solve_lp(m, small_options())
        assert res.status is SolveStatus.UNBOUNDED

    def test_fixed_variables_only(self):
        m = MipModel()
        x = m.add_variable("x", 2.0, 2.0, objective=3.0)
        m.add_constraint("c", [(x, 1.0)], "<=", 5.0)
        res = solve_lp(m, small_options())
        assert res.status is SolveStatus.OPTIMAL
        assert res.objective == pytest.approx(6.0, abs=1e-12)

    def test_degenerate_transport(self):
        # classic degenerate assignment shape
        m = MipModel()
        v = [[m.add_variable(f"x{i}{j}", 0.0, np.inf, objective=float(c)) for j, c in enumerate(row)] for i, row in enumerate([[4, 1, 3], [2, 0, 5], [3, 2, 2]])]
        for i in range(3):
            m.add_constraint(f"r{i}", [(v[i][j], 1.0) for j in range(3)], "=", 1.0)
        for j in range(3):
            m.add_constraint(f"c{j}", [(v[i][j], 1.0) for i in range(3)], "=", 1.0)
        res = solve_lp(m, small_options())
        assert res.status is SolveStatus.OPTIMAL
        assert res.objective == pytest.approx(5.0, abs=1e-9)


def _vertex_oracle(c, A_ub, b_ub, lb, ub):
    """Enumerate all basic feasible points of  A_ub x <= b_ub, lb <= x <= ub
    by brute-force intersection of constraint boundaries."""
    n = len(c)
    rows = [(np.array(a, float), float(b)) for a, b in zip(A_ub, b_ub)]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(ub[j]):
            rows.append((e.copy(), ub[j]))
        if np.isfinite(lb[j]):
            rows.append((-e, -lb[j]))
    best = np.inf
    A_all = np.array([r[0] for r in rows])
    b_all = np.array([r[1] for r in rows])
    for combo in itertools.combinations(range(len(rows)), n):
        A = A_all[list(combo)]
        if abs(np.linalg.det(A)) < 1e-9:
            continue
        x = np.linalg.solve(A, b_all[list(combo)])
        if np.all(A_all @ x <= b_all + 1e-8):
            best = min(best, float(np.asarray(c) @ x))
    return best


class TestLpOracles:
    def test_vertex_enumeration(self):
        rng = np.random.default_rng(7)
        for trial in range(12):
            n, mrows = 4, 5
            c = rng.normal(size=n)
            A = rng.normal(size=(mrows, n))
            x0 = rng.uniform(0.2, 0.8, size=n)
            b = A @ x0 + rng.uniform(0.1, 1.0, size=mrows)
            lb = np.zeros(n)
            ub = np.full(n, 3.0)
            ref = _vertex_oracle(c, A, b, lb, ub)
            m = MipModel()
            xs = [m.add_variable(f"x{j}", 0.0, 3.0, objective=float(c[j])) for j in range(n)]
            for i in range(mrows):
                m.add_constraint(f"r{i}", [(xs[j], float(A[i, j])) for j in range(n)], "<=", float(b[i]))
            res = solve_lp(m, small_options())
            assert res.status is SolveStatus.OPTIMAL, f"trial {trial}"
            assert res.objective == pytest.approx(ref, abs=1e-7), f"trial {trial}"

    def test_random_vs_scipy(self):
        rng = np.random.default_rng(11)
        solved = 0
        for trial in range(40):
            n = int(rng.integers(3, 9))
            mrows = int(rng.integers(2, 7))
            c = rng.normal(size=n)
            A = rng.normal(size=(mrows, n)) * (rng.random(size=(mrows, n)) > 0.3)
            senses = rng.choice(["<=", ">=", "="], size=mrows, p=[0.5, 0.3, 0.2])
            x0 = rng.uniform(0.0, 2.0, size=n)
            slackpad = rng.uniform(0.0, 1.5, size=mrows)
            b = A @ x0
            b = np.where(senses == "<=", b + slackpad, b)
            b = np.where(senses == ">=", b - slackpad, b)
            lb = np.where(rng.random(n) < 0.25, -2.0, 0.0)
            ub = np.where(rng.random(n) < 0.3, np.inf, 4.0)
            lb = np.minimum(lb, x0)
            ub = np.maximum(ub, x0)

            m = MipModel()
            xs = [m.add_variable(f"x{j}", float(lb[j]), float(ub[j]), objective=float(c[j])) for j in range(n)]
            kept = 0
            for i in range(mrows):
                terms = [(xs[j], float(A[i, j])) for j in range(n) if A[i, j] != 0.0]
                if not terms:
                    continue
                m.add_constraint(f"r{i}", terms, str(senses[i]), float(b[i]))
                kept += 1

            A_ub, b_ub, A_eq, b_eq = [], [], [], []
            for i in range(mrows):
                if not np.any(A[i] != 0.0):
                    continue
                if senses[i] == "<=":
                    A_ub.append(A[i]); b_ub.append(b[i])
                elif senses[i] == ">=":
                    A_ub.append(-A[i]); b_ub.append(-b[i])
                else:
                    A_eq.append(A[i]); b_eq.append(b[i])
            ref = linprog(
                c,
                A_ub=np.array(A_ub) if A_ub else None,
                b_ub=np.array(b_ub) if b_ub else None,
                A_eq=np.array(A_eq) if A_eq else None,
                b_eq=np.array(b_eq) if b_eq else None,
                bounds=list(zip(lb, ub)),
                method="highs",
            )
            res = solve_lp(m, small_options())
            if ref.status == 0:
                assert res.status is SolveStatus.OPTIMAL, f"trial {trial}: {res.status}"
                assert res.objective == pytest.approx(ref.fun, rel=1e-6, abs=1e-6), f"trial {trial}"
                solved += 1
            elif ref.status == 2:
                assert res.status is SolveStatus.INFEASIBLE, f"trial {trial}"
            elif ref.status == 3:
                assert res.status is SolveStatus.UNBOUNDED, f"trial {trial}"
        assert solved >= 15  # the generator should produce plenty of solvable cases

    def test_solution_feasibility_and_bound(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            n = 6
            c = rng.normal(size=n)
            A = rng.normal(size=(4, n))
            x0 = rng.uniform(0.0, 1.0, size=n)
            b = A @ x0 + 0.5
            m = MipModel()
            xs = [m.add_variable(f"x{j}", 0.0, 2.0, objective=float(c[j])) for j in range(n)]
            for i in range(4):
                m.add_constraint(f"r{i}", [(xs[j], float(A[i, j])) for j in range(n)], "<=", float(b[i]))
            res = solve_lp(m, small_options())
            assert res.status is SolveStatus.OPTIMAL
            assert res.max_violation <= 1e-6
            assert res.objective <= float(c @ np.clip(x0, 0, 2)) + 1e-9  # beats one feasible point


class TestMipBasics:
    def test_knapsack_against_enumeration(self):
        rng = np.random.default_rng(3)
        for trial in range(8):
            n = 6
            values = rng.integers(1, 20, size=n).astype(float)
            weights = rng.integers(1, 10, size=n).astype(float)
            cap = float(weights.sum() // 2)
            m = MipModel()
            xs = [
                m.add_variable(f"x{j}", 0.0, 1.0, kind=VarKind.BINARY, objective=-float(values[j]))
                for j in range(n)
            ]
            m.add_constraint("cap", [(xs[j], float(weights[j])) for j in range(n)], "<=", cap)
            res = solve_mip(m, small_options())
            best = 0.0
            for bits in itertools.product([0, 1], repeat=n):
                w = sum(weights[j] * bits[j] for j in range(n))
                if w <= cap + 1e-9:
                    best = max(best, sum(values[j] * bits[j] for j in range(n)))
            assert res.status is SolveStatus.OPTIMAL, f"trial {trial}"
            assert -res.objective == pytest.approx(best, abs=1e-7), f"trial {trial}"
            for j in xs:
                v = res.value_of(j)
                assert abs(v - round(v)) <= 1e-6

    def test_sos1_exactly_one(self):
        # pick exactly one level per group; cheapest combination meeting a cover
        m = MipModel()
        costs = [[3.0, 5.0, 9.0], [2.0, 4.0, 8.0]]
        gains = [[1.0, 2.0, 4.0], [1.0, 3.0, 5.0]]
        vs = []
        for g in range(2):
            members = [
                m.add_variable(f"u{g}{k}", 0.0, 1.0, kind=VarKind.BINARY, objective=costs[g][k])
                for k in range(3)
            ]
            m.add_sos1(f"grp{g}", members)
            vs.append(members)
        m.add_constraint(
            "cover",
            [(vs[g][k], gains[g][k]) for g in range(2) for k in range(3)],
            ">=",
            6.0,
        )
        res = solve_mip(m, small_options())
        assert res.status is SolveStatus.OPTIMAL
        best = np.inf
        for k0 in range(3):
            for k1 in range(3):
                if gains[0][k0] + gains[1][k1] >= 6.0:
                    best = min(best, costs[0][k0] + costs[1][k1])
        assert res.objective == pytest.approx(best, abs=1e-8)
        for members in vs:
            chosen = [j for j in members if res.value_of(j) > 0.5]
            assert len(chosen) == 1

    def test_sos1_random_vs_enumeration(self):
        rng = np.random.default_rng(17)
        for trial in range(10):
            groups, size = 3, 3
            cost = rng.uniform(1.0, 10.0, size=(groups, size))
            gain = np.sort(rng.uniform(0.5, 6.0, size=(groups, size)), axis=1)
            need = float(gain[:, 1].sum())
            m = MipModel()
            vs = []
            for g in range(groups):
                members = [
                    m.add_variable(f"u{g}{k}", 0.0, 1.0, kind=VarKind.BINARY, objective=float(cost[g, k]))
                    for k in range(size)
                ]
                m.add_sos1(f"grp{g}", members)
                vs.append(members)
            m.add_constraint(
                "cover",
                [(vs[g][k], float(gain[g, k])) for g in range(groups) for k in range(size)],
                ">=",
                need,
            )
            res = solve_mip(m, small_options())
            best = np.inf
            for combo in itertools.product(range(size), repeat=groups):
                if sum(gain[g, combo[g]] for g in range(groups)) >= need - 1e-9:
                    best = min(best, sum(cost[g, combo[g]] for g in range(groups)))
            assert res.status is SolveStatus.OPTIMAL, f"trial {trial}"
            assert res.objective == pytest.approx(best, rel=1e-6), f"trial {trial}"

    def test_mixed_integer_continuous(self):
        # facility-style: open binary gates a continuous flow
        m = MipModel()
        open1 = m.add_variable("open1", 0.0, 1.0, kind=VarKind.BINARY, objective=10.0)
        open2 = m.add_variable("open2", 0.0, 1.0, kind=VarKind.BINARY, objective=14.0)
        f1 = m.add_variable("f1", 0.0, np.inf, objective=1.0)
        f2 = m.add_variable("f2", 0.0, np.inf, objective=0.5)
        m.add_constraint("demand", [(f1, 1.0), (f2, 1.0)], ">=", 8.0)
        m.add_constraint("gate1", [(f1, 1.0), (open1, -6.0)], "<=", 0.0)
        m.add_constraint("gate2", [(f2, 1.0), (open2, -6.0)], "<=", 0.0)
        res = solve_mip(m, small_options())
        assert res.status is SolveStatus.OPTIMAL
        # opening both and loading f2 first: cost 10 + 14 + 0.5*6 + 1*2 = 29
        assert res.objective == pytest.approx(29.0, abs=1e-7)

    def test_infeasible_mip(self):
        m = MipModel()
        a = m.add_variable("a", 0.0, 1.0, kind=VarKind.BINARY, objective=1.0)
        b = m.add_variable("b", 0.0, 1.0, kind=VarKind.BINARY, objective=1.0)
        m.add_constraint("c1", [(a, 1.0), (b, 1.0)], ">=", 3.0)
        res = solve_mip(m, small_options())
        assert res.status is SolveStatus.INFEASIBLE

    def test_node_limit_reports_honestly(self):
        rng = np.random.default_rng(5)
        n = 14
        values = rng.uniform(1.0, 20.0, size=n)
        weights = rng.uniform(1.0, 10.0, size=n)
        m = MipModel()
        xs = [
            m.add_variable(f"x{j}", 0.0, 1.0, kind=VarKind.BINARY, objective=-float(values[j]))
            for j in range(n)
        ]
        m.add_constraint("cap", [(xs[j], float(weights[j])) for j in range(n)], "<=", float(weights.sum() / 2))
        res = solve_mip(m, small_options(node_limit=3))
        assert res.status in (SolveStatus.LIMIT_HIT, SolveStatus.OPTIMAL)
        if res.status is SolveStatus.LIMIT_HIT:
            assert res.node_count <= 3
            assert res.bound is not None

    def test_determinism(self):
        def build():
            m = MipModel()
            vs = []
            for g in range(3):
                members = [
                    m.add_variable(f"u{g}{k}", 0.0, 1.0, kind=VarKind.BINARY, objective=float(1 + g + 2 * k))
                    for k in range(3)
                ]
                m.add_sos1(f"grp{g}", members)
                vs.append(members)
            m.add_constraint(
                "cover", [(vs[g][k], float(1 + k)) for g in range(3) for k in range(3)], ">=", 6.0
            )
            return m

        r1 = solve_mip(build(), small_options())
        r2 = solve_mip(build(), small_options())
        assert r1.objective == r2.objective
        assert np.array_equal(r1.values, r2.values)
        assert r1.node_count == r2.node_count


class TestLpText:
    def test_dump_round_trippable_shape(self):
        m = MipModel()
        x = m.add_variable("x", 0.0, 2.0, objective=1.5)
        u = m.add_variable("u", 0.0, 1.0, kind=VarKind.BINARY, objective=-1.0)
        m.add_constraint("row1", [(x, 1.0), (u, -2.0)], "<=", 3.0)
        m.add_sos1("pick", [u])
        text = m.to_lp_text()
        assert "Minimize" in text
        assert "Subject To" in text
        assert "row1:" in text
        assert "Binaries" in text or "Binary" in text
        assert "SOS" in text
        assert "End" in text

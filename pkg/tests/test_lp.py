import math

import numpy as np
import pytest
from scipy.optimize import linprog

from voxrelax.lp import LinearSystem, export_lp, read_lp, solve


def simplex_system():
    sys = LinearSystem()
    sys.add_var("x1", 0.0)
    sys.add_var("x2", 0.0)
    sys.add_row({"x1": 1.0, "x2": 1.0}, "<=", 1.0)
    sys.set_objective({"x1": 1.0, "x2": 1.0}, sense="max")
    return sys


def random_system(rng, n=6, m=10):
    """Bounded feasible random LP: rows are tight at a known interior point."""
    sys = LinearSystem()
    names = [f"v{i}" for i in range(n)]
    for nm in names:
        sys.add_var(nm, -3.0, 3.0)
    x0 = rng.uniform(-1, 1, n)
    for i in range(m):
        a = rng.normal(size=n)
        sense = ("<=", ">=", "=")[i % 3] if i < m - 1 else "<="
        slack = 0.0 if sense == "=" else rng.uniform(0.1, 1.0)
        rhs = a @ x0 + (slack if sense == "<=" else -slack)
        sys.add_row(dict(zip(names, a)), sense, rhs)
    sys.set_objective(dict(zip(names, rng.normal(size=n))), const=float(rng.normal()),
                      sense="min" if rng.random() < 0.5 else "max")
    return sys


def test_simplex_max():
    sol = solve(simplex_system())
    assert sol.ok
    assert sol.objective == pytest.approx(1.0)


def test_infeasible_status():
    sys = LinearSystem()
    sys.add_var("x")
    sys.add_row({"x": 1.0}, "<=", 0.0)
    sys.add_row({"x": 1.0}, ">=", 1.0)
    assert solve(sys).status == "infeasible"


def test_unbounded_status():
    sys = LinearSystem()
    sys.add_var("x", 0.0)
    sys.set_objective({"x": 1.0}, sense="max")
    assert solve(sys).status == "unbounded"


def test_alternative_objective_leaves_system_unchanged():
    sys = simplex_system()
    sol = solve(sys, objective={"x1": 1.0}, sense="min")
    assert sol.objective == pytest.approx(0.0)
    assert sys.sense == "max"


def test_system_validation():
    sys = LinearSystem()
    sys.add_var("x", 0, 1)
    with pytest.raises(ValueError):
        sys.add_var("x")
    with pytest.raises(ValueError):
        sys.add_var("y", 2, 1)
    with pytest.raises(KeyError):
        sys.add_row({"z": 1.0}, "<=", 0)
    with pytest.raises(ValueError):
        sys.add_row({"x": math.nan}, "<=", 0)
    with pytest.raises(ValueError):
        sys.add_row({"x": 1.0}, "<", 0)


@pytest.mark.parametrize("seed", range(10))
def test_solution_contract(seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng)
    sol = solve(sys)
    assert sol.ok
    rhs = max(abs(r.rhs) for r in sys.rows)
    assert float(sys.residuals(sol.x).max()) <= 1e-7 * (1 + rhs)
    assert sys.bound_violation(sol.x) <= 1e-9
    assert abs(sol.dual_objective - sol.objective) <= 1e-7 * (1 + abs(sol.objective))
    # weak duality in the minimization sense
    flip = 1.0 if sys.sense == "min" else -1.0
    assert flip * sol.dual_objective <= flip * sol.objective + 1e-7 * (1 + abs(sol.objective))


@pytest.mark.parametrize("seed", range(5))
def test_matches_dense_reference(seed):
    """The wrapper agrees with a direct dense linprog call built here."""
    rng = np.random.default_rng(100 + seed)
    sys = random_system(rng)
    A = sys.matrix().toarray()
    rhs = np.array([r.rhs for r in sys.rows])
    sense = [r.sense for r in sys.rows]
    c = np.array([sys.objective.get(n, 0.0) for n in sys.names])
    flip = -1.0 if sys.sense == "max" else 1.0
    le = [i for i, s in enumerate(sense) if s == "<="]
    ge = [i for i, s in enumerate(sense) if s == ">="]
    eq = [i for i, s in enumerate(sense) if s == "="]
    res = linprog(flip * c, A_ub=np.vstack([A[le], -A[ge]]), b_ub=np.concatenate([rhs[le], -rhs[ge]]),
                  A_eq=A[eq], b_eq=rhs[eq], bounds=[(sys.lo[n], sys.hi[n]) for n in sys.names],
                  method="highs-ds")
    assert res.status == 0
    assert solve(sys).objective == pytest.approx(flip * res.fun + sys.obj_const, abs=1e-8)


def test_duals_are_rhs_sensitivities():
    sys = simplex_system()
    sol = solve(sys)
    assert sol.duals[0] == pytest.approx(1.0)
    sys.rows[0].rhs += 0.1
    assert solve(sys).objective == pytest.approx(sol.objective + 0.1 * sol.duals[0])


def test_deterministic():
    sys = random_system(np.random.default_rng(7))
    a, b = solve(sys), solve(sys.copy())
    assert a.objective == b.objective
    assert a.x == b.x


@pytest.mark.parametrize("seed", range(5))
def test_export_roundtrip(seed):
    sys = random_system(np.random.default_rng(200 + seed))
    sys.add_var("free_var")
    sys.add_var("fixed", 0.5, 0.5)
    sys.add_row({"free_var": 1.0, "fixed": 1.0}, "<=", 2.0)
    text = export_lp(sys)
    back = read_lp(text)
    assert back.sense == sys.sense
    assert back.names == sys.names
    assert solve(back).objective == pytest.approx(solve(sys).objective, abs=1e-9)
    # re-export is stable
    assert export_lp(back) == text


def test_export_sections_and_empty_objective():
    sys = LinearSystem()
    sys.add_var("x", 0, 1)
    sys.add_row({"x": 1.0}, "<=", 1.0)
    text = export_lp(sys)
    lines = [ln.strip() for ln in text.splitlines()]
    assert lines.index("Minimize") < lines.index("Subject To") < lines.index("Bounds") < lines.index("End")
    assert "obj: 0" in lines
    assert solve(read_lp(text)).objective == 0.0


def test_read_hand_written_lp():
    text = """Maximize
 obj: 2 x + 3 y
Subject To
 c1: x + y <= 4
 c2: x + 3 y <= 6
Bounds
 0 <= x <= 3
 0 <= y <= inf
End
"""
    sys = read_lp(text)
    sol = solve(sys)
    assert sol.objective == pytest.approx(9.0)
    assert sol.x["x"] == pytest.approx(3.0)
    assert sol.x["y"] == pytest.approx(1.0)


def test_tags_and_multiset():
    sys = simplex_system()
    sys.add_row({"x1": 1.0}, "<=", 0.7, tag="mccormick")
    assert sys.tag_counts() == {"model-linear": 1, "mccormick": 1}
    other = sys.copy()
    other.rows.reverse()
    assert other.row_multiset() == sys.row_multiset()

import math

import numpy as np
import pytest
from scipy.optimize import linprog

from conftest import LOG_TENT, EXP_BILINEAR
from voxrelax.bench import gen_poly_instance, sample_feasible
from voxrelax.expr import normalize, parse_model
from voxrelax.geometry import FacetSystem, same_polytope
from voxrelax.interval import forward_propagate
from voxrelax.lp import LinearSystem, solve
from voxrelax.relax import (
    RelaxConfig,
    RelaxError,
    build_base,
    build_vr,
    duality_range_reduction,
    node_values,
    obbt,
    relax,
)
from voxrelax.voxel import VoxelConfig

E = math.e


def base_cfg():
    return RelaxConfig(mode="base")


def tagged_facets(sys, tag, cols):
    """Rows with ``tag`` as a facet system over ``cols``."""
    A, b = [], []
    for r in sys.rows:
        if r.tag != tag:
            continue
        sign = -1.0 if r.sense == ">=" else 1.0
        A.append([sign * r.coeffs.get(c, 0.0) for c in cols])
        b.append(sign * r.rhs)
    return FacetSystem(np.array(A).reshape(-1, len(cols)), np.array(b))


def exp_bilinear_oracle():
    """Hand-assembled FP relaxation of the exp-bilinear problem.

    Columns (x, y, s, e, p, obj) for s = x - y, e = exp(s), p = x*y,
    obj = p*e.  Only the rows that can bind when maximizing are kept: the
    exp secant on [-1, 1], the McCormick overestimators of x*y on the unit
    square and of p*e on [0, 1] x [1/e, e].
    """
    sec = (E - 1 / E) / 2
    A = [
        [0, 0, -sec, 1, 0, 0],          # e <= secant(s)
        [-1, 0, 0, 0, 1, 0],            # p <= x
        [0, -1, 0, 0, 1, 0],            # p <= y
        [0, 0, 0, -1, -1 / E, 1],       # obj <= e + p/e - 1/e
        [0, 0, 0, 0, -E, 1],            # obj <= e*p
    ]
    b = [(E + 1 / E) / 2, 0, 0, -1 / E, 0]
    A_eq = [[1, -1, -1, 0, 0, 0]]
    bounds = [(0, 1), (0, 1), (-1, 1), (1 / E, E), (0, 1), (None, None)]
    res = linprog([0, 0, 0, 0, 0, -1], A_ub=A, b_ub=b, A_eq=A_eq, b_eq=[0], bounds=bounds, method="highs")
    assert res.status == 0
    return -res.fun


# ---------------------------------------------------------------- modes on the exp-bilinear problem


def test_exp_bilinear_fp_matches_hand_built_lp(exp_bilinear):
    oracle = exp_bilinear_oracle()
    res = relax(exp_bilinear, RelaxConfig(mode="fp"))
    assert res.status == "optimal"
    assert res.bound == pytest.approx(oracle, rel=1e-7)
    assert res.bound == pytest.approx(1.8122, abs=1e-4)
    assert res.bound >= 1.0


def test_exp_bilinear_mode_ordering(exp_bilinear):
    fp = relax(exp_bilinear, RelaxConfig(mode="fp")).bound
    base = relax(exp_bilinear, base_cfg()).bound
    vr = relax(exp_bilinear, RelaxConfig(mode="vr")).bound
    # every point of the unit square has a value at most 1
    assert 1.0 - 1e-9 <= vr <= base + 1e-9 <= fp + 2e-9
    assert vr < base - 0.1


def test_exp_bilinear_counts_and_json(exp_bilinear):
    res = relax(exp_bilinear)
    assert res.n_aux_vars == 4
    assert res.n_constraints == len(res.system.rows)
    js = res.to_json()
    assert js["mode"] == "vr" and js["status"] == "optimal"
    assert js["bound"] == pytest.approx(res.bound)


# ---------------------------------------------------------------- base construction


def test_linear_model_is_copied_exactly():
    model = parse_model("var x, y in [0, 3]; min -x - 2*y; s.t. x + y <= 4; x - y >= -2;")
    dag = normalize(model)
    sys = build_base(dag, forward_propagate(dag))
    assert set(sys.tag_counts()) == {"model-linear"}
    assert relax(model, base_cfg()).bound == pytest.approx(-7.0)
    assert relax(model, RelaxConfig(mode="fp")).bound == pytest.approx(-7.0)


def test_square_node_cuts():
    dag = normalize(parse_model("var x in [0, 2]; min x^2;"))
    sys = build_base(dag, forward_propagate(dag), base_cfg())
    assert sys.tag_counts()["univariate"] >= 4
    t = dag.label(dag.objective)
    for x in np.linspace(0, 2, 9):
        fixed = sys.copy()
        fixed.set_bounds("x", x, x)
        lo = solve(fixed, objective={t: 1.0}, sense="min").objective
        hi = solve(fixed, objective={t: 1.0}, sense="max").objective
        assert lo == pytest.approx(max(0.0, 2 * x - 1, 4 * x - 4), abs=1e-9)
        assert hi == pytest.approx(2 * x, abs=1e-9)


def test_no_product_vr_equals_base():
    dag = normalize(parse_model("var x in [0, 2]; min exp(x) + x^2 - log(x + 1);"))
    store = forward_propagate(dag)
    base = build_base(dag, store, base_cfg())
    vr = build_vr(dag, store, RelaxConfig(), base=base)
    assert vr.row_multiset() == base.row_multiset()


def test_same_variable_product_keeps_mccormick_only():
    dag = normalize(parse_model("var x in [0.5, 2]; min x*exp(x);"))
    vr = build_vr(dag, forward_propagate(dag), RelaxConfig())
    assert "hull-facet" not in vr.tag_counts()
    assert vr.tag_counts()["mccormick"] == 4


@pytest.mark.parametrize("seed", range(10))
def test_single_voxel_reduces_to_mccormick(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-3, 2, 2).tolist()
    hi = (lo + rng.uniform(0.2, 3, 2)).tolist()
    text = f"var x in [{lo[0]!r}, {hi[0]!r}]; var y in [{lo[1]!r}, {hi[1]!r}]; min x*y;"
    dag = normalize(parse_model(text))
    cfg = RelaxConfig(n_breakpoints=2, voxel=VoxelConfig(n_max=0, n_v=1), voxelizer="box")
    sys = build_vr(dag, forward_propagate(dag), cfg)
    cols = ["x", "y", dag.label(dag.objective)]
    assert same_polytope(tagged_facets(sys, "hull-facet", cols), tagged_facets(sys, "mccormick", cols))


def test_unbounded_operand_rejected():
    with pytest.raises(RelaxError):
        relax(parse_model("var x in [0, inf]; var y in [0, 1]; min x*y;"), base_cfg())


def test_infeasible_model_reports_status():
    res = relax(parse_model("var x in [0, 1]; min x; s.t. x >= 2;"), base_cfg())
    assert res.status == "infeasible"


@pytest.mark.parametrize("kwargs", [
    {"mode": "exact"}, {"voxelizer": "octree"}, {"iterations": 0}, {"n_breakpoints": 1}, {"n_tangents": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        RelaxConfig(**kwargs)


# ---------------------------------------------------------------- non-box domains


def test_log_tent_quadtree_improves_on_base(log_tent):
    base = relax(log_tent, base_cfg()).bound
    vr = relax(log_tent, RelaxConfig(voxelizer="quadtree", voxel=VoxelConfig(grid=(9, 9)))).bound
    assert vr <= base - 1e-4
    assert vr >= 1.0 - 1e-9


def test_quotient_relaxation_is_valid():
    model = parse_model("var x in [1, 2]; var y in [1, 4]; max x / y;")
    for mode in ("fp", "base", "vr"):
        res = relax(model, RelaxConfig(mode=mode))
        assert res.status == "optimal"
        assert res.bound >= 2.0 - 1e-9


def test_iterations_never_worse(exp_bilinear):
    one = relax(exp_bilinear, RelaxConfig(iterations=1)).bound
    two = relax(exp_bilinear, RelaxConfig(iterations=2)).bound
    assert 1.0 - 1e-9 <= two <= one + 1e-9


def test_cutoff_bound_is_still_an_overestimate(exp_bilinear):
    res = relax(exp_bilinear, RelaxConfig(iterations=2), cutoff=1.0)
    assert res.bound >= 1.0 - 1e-7


# ---------------------------------------------------------------- range reduction


def one_var(lo, hi, c):
    sys = LinearSystem()
    sys.add_var("x", lo, hi)
    sys.set_objective({"x": c})
    return sys


def test_duality_reduction_upper_active():
    sys = one_var(0.0, 5.0, -2.0)
    sol = solve(sys)
    assert sol.objective == pytest.approx(-10.0)
    assert duality_range_reduction(sys, sol, -9.0)["x"] == pytest.approx((4.5, 5.0))


def test_duality_reduction_lower_active():
    sys = one_var(1.0, 4.0, 3.0)
    sol = solve(sys)
    assert duality_range_reduction(sys, sol, 4.0)["x"] == pytest.approx((1.0, 1.0 + 1.0 / 3.0))


def test_duality_reduction_zero_gap_fixes():
    sys = one_var(0.0, 5.0, -2.0)
    assert duality_range_reduction(sys, solve(sys), -10.0)["x"] == pytest.approx((5.0, 5.0))


def test_duality_reduction_without_bound_is_identity():
    sys = one_var(0.0, 5.0, -2.0)
    assert duality_range_reduction(sys, solve(sys), math.inf)["x"] == (0.0, 5.0)


def test_obbt_examples():
    sys = LinearSystem()
    sys.add_var("x", 0.0, 2.0)
    sys.add_var("y", 0.0, 2.0)
    sys.add_row({"x": 1.0, "y": 1.0}, "<=", 1.0)
    sys.set_objective({"x": 1.0, "y": -1.0})
    assert obbt(sys, ["x", "y"]) == {"x": pytest.approx((0.0, 1.0)), "y": pytest.approx((0.0, 1.0))}
    # x - y <= -0.5 with x + y <= 1 forces y >= 0.5 and x <= 0.25
    cut = obbt(sys, ["x", "y"], cutoff=-0.5)
    assert cut["x"] == pytest.approx((0.0, 0.25))
    assert cut["y"] == pytest.approx((0.5, 1.0))


# ---------------------------------------------------------------- validity


@pytest.mark.parametrize("c_sign", [1.0, -1.0])
@pytest.mark.parametrize("voxelizer", ["projection", "quadtree", "box"])
def test_feasible_points_satisfy_every_row(c_sign, voxelizer):
    inst = gen_poly_instance(5, 8, 4, seed=3, c_sign=c_sign)
    model = inst.to_model()
    pts = sample_feasible(inst, 200, seed=1)
    assert len(pts) > 20
    for mode in ("base", "vr"):
        res = relax(model, RelaxConfig(mode=mode, voxelizer=voxelizer))
        assert res.status == "optimal"
        vals = node_values(res.dag, inst.env(pts))
        assert float(res.system.residuals(vals).max()) <= 1e-7
        assert res.system.bound_violation(vals) <= 1e-7
        assert res.bound <= float(inst.objective(pts).min()) + 1e-7


def test_exp_bilinear_grid_points_satisfy_every_row(exp_bilinear):
    res = relax(exp_bilinear)
    g = np.linspace(0, 1, 41)
    X, Y = (a.ravel() for a in np.meshgrid(g, g))
    vals = node_values(res.dag, {"x": X, "y": Y})
    assert float(res.system.residuals(vals).max()) <= 1e-9


def test_geometry_records(exp_bilinear):
    geometry = []
    res = relax(exp_bilinear, geometry=geometry)
    assert len(geometry) == len(res.dag.product_ids())
    for rec in geometry:
        assert {"node", "targets", "result", "voxelizer", "boxes", "corners", "n_lifted", "n_facets"} <= set(rec)
        assert rec["n_facets"] > 0
        assert rec["voxelizer"] == "projection"


def test_problem_text_constants():
    assert "exp(x-y)" in EXP_BILINEAR
    assert "log(x1)" in LOG_TENT

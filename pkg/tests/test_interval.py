import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxrelax.expr import normalize, parse_model
from voxrelax.interval import (DEFAULT_SWEEPS, InfeasibleError, Interval, IntervalError, forward_propagate,
                               interval_op, inverse_propagate, store_to_json)


def tighten(text):
    dag = normalize(parse_model(text))
    return dag, inverse_propagate(dag, forward_propagate(dag))


# interval_op


def test_product_of_mixed_signs():
    r = interval_op("*", Interval(1, 2), Interval(-3, 4))
    assert r.lo == pytest.approx(-6) and r.hi == pytest.approx(8)
    assert r.lo <= -6 and r.hi >= 8


def test_difference_uses_opposite_endpoints():
    r = Interval(0, 1) - Interval(0, 1)
    assert (r.lo, r.hi) == (-1.0, 1.0)


def test_exp_of_symmetric_interval():
    r = interval_op("exp", Interval(-1, 1))
    assert r.lo == pytest.approx(math.exp(-1), rel=1e-15) and r.hi == pytest.approx(math.e, rel=1e-15)
    assert r.lo <= math.exp(-1) and r.hi >= math.e


def test_division_by_interval_containing_zero_is_rejected():
    with pytest.raises(IntervalError):
        interval_op("/", Interval(1, 2), Interval(-1, 1))


def test_log_of_nonpositive_interval_is_rejected():
    with pytest.raises(IntervalError):
        interval_op("log", Interval(0, 1))


def test_even_power_over_sign_change():
    r = Interval(-2, 1) ** 2
    assert r.lo == 0.0 and r.hi == pytest.approx(4.0)


def test_empty_interval_rejected():
    with pytest.raises(IntervalError):
        Interval(2, 1)


_finite = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(_finite, _finite, _finite, _finite, st.floats(0, 1), st.floats(0, 1),
       st.sampled_from(["+", "-", "*"]))
def test_binary_ops_contain_sampled_values(a, b, c, d, s, t, op):
    A, B = Interval(min(a, b), max(a, b)), Interval(min(c, d), max(c, d))
    x = A.lo + s * (A.hi - A.lo)
    y = B.lo + t * (B.hi - B.lo)
    r = interval_op(op, A, B)
    v = {"+": x + y, "-": x - y, "*": x * y}[op]
    assert r.lo <= v <= r.hi


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1), st.sampled_from([2, 3, 4, 5, 0.5, 1.5, -1, -2]))
def test_powers_contain_sampled_values(a, b, s, p):
    lo, hi = min(a, b), max(a, b)
    if p != int(p) or p < 0:
        lo, hi = abs(lo) + 0.1, abs(lo) + 0.1 + abs(hi - lo)
    x = lo + s * (hi - lo)
    r = Interval(lo, hi) ** p
    assert r.lo <= x**p <= r.hi


# forward propagation


def test_expression_tree_range_is_minus_one_to_e():
    dag = normalize(parse_model("var x1, x2, x3 in [0,1]; min x1^2*exp(x1)*x2 - x2^2*x3^3*x1^3;"))
    root = forward_propagate(dag)[dag.objective]
    assert root.lo == pytest.approx(-1.0, abs=1e-15)
    assert root.hi == pytest.approx(math.e, abs=4e-15)
    assert root.lo <= -1.0 and root.hi >= math.e


def test_constant_dag():
    dag = normalize(parse_model("min 5;"))
    st_ = forward_propagate(dag)
    assert (st_[dag.objective].lo, st_[dag.objective].hi) == (0.0, 0.0)
    assert dag.objective_offset == 5.0


def test_bilinear_on_unit_square():
    dag = normalize(parse_model("var x1, x2 in [0,1]; min x1*x2;"))
    r = forward_propagate(dag)[dag.objective]
    assert r.lo == 0.0 and r.hi == pytest.approx(1.0)


def test_unbounded_leaf_at_nonlinear_node_is_infinite():
    dag = normalize(parse_model("var x in [0, inf]; var y in [0, 1]; min x*y;"))
    r = forward_propagate(dag)[dag.objective]
    assert r.hi == math.inf


@pytest.mark.parametrize("text", [
    "var x1, x2, x3 in [-1, 2]; min x1^2*exp(x2)*x3 - x2^2*x3^3*x1^3 + x1/(x2+2);",
    "var x in [0.5, 3]; var y in [-2, 2]; min log(x)*y^3 - exp(y - x)*x^1.5;",
])
def test_forward_propagation_is_sound(text, rng):
    dag = normalize(parse_model(text))
    store = forward_propagate(dag)
    names = list(dag.variables)
    lo = np.array([dag.variables[v].lo for v in names])
    hi = np.array([dag.variables[v].hi for v in names])
    X = rng.uniform(lo, hi, size=(1000, len(names)))
    vals = dag.evaluate({v: X[:, i] for i, v in enumerate(names)})
    for nid, iv in store.items():
        v = np.broadcast_to(vals[nid], (1000,))
        assert np.all(v >= iv.lo) and np.all(v <= iv.hi), dag.label(nid)


# inverse propagation


def test_linear_constraint_tightens_both_variables():
    dag, st_ = tighten("var x, y in [0, 2]; min x; s.t. x + y <= 1;")
    for v in "xy":
        iv = st_[dag.var_ids[v]]
        assert (iv.lo, iv.hi) == (0.0, 1.0)


def test_square_constraint_tightens_to_unit_interval():
    dag, st_ = tighten("var x in [-5, 5]; min x; s.t. x^2 <= 1;")
    iv = st_[dag.var_ids["x"]]
    assert (iv.lo, iv.hi) == (-1.0, 1.0)


def test_product_equality_divides_through():
    dag, st_ = tighten("var x in [1, 2]; var y in [1, 10]; min x; s.t. x*y = 6;")
    iv = st_[dag.var_ids["y"]]
    assert iv.lo == pytest.approx(3.0) and iv.hi == pytest.approx(6.0)
    assert iv.lo <= 3.0 and iv.hi >= 6.0


def test_infeasible_model_is_certified():
    dag = normalize(parse_model("var x, y in [0, 1]; min x; s.t. x + y >= 3;"))
    with pytest.raises(InfeasibleError):
        inverse_propagate(dag, forward_propagate(dag))


def test_tightening_only_shrinks_and_reaches_fixpoint():
    dag = normalize(parse_model("var x, y in [-3, 3]; min x; s.t. x^2 + y <= 1; exp(x) - y >= 0.5; x*y <= 1;"))
    fw = forward_propagate(dag)
    once = inverse_propagate(dag, fw)
    for nid in fw:
        assert once[nid].subset_of(fw[nid])
    twice = inverse_propagate(dag, once)
    for nid in once:
        assert twice[nid].lo == pytest.approx(once[nid].lo, abs=1e-9)
        assert twice[nid].hi == pytest.approx(once[nid].hi, abs=1e-9)
    assert DEFAULT_SWEEPS == 10


def test_tightened_store_keeps_feasible_points(rng):
    text = "var x, y in [-3, 3]; min x; s.t. x^2 + y <= 1; exp(x) - y >= 0.5;"
    m = parse_model(text)
    dag = normalize(m)
    st_ = inverse_propagate(dag, forward_propagate(dag))
    X = rng.uniform(-3, 3, size=(20000, 2))
    env = {"x": X[:, 0], "y": X[:, 1]}
    feas = (X[:, 0] ** 2 + X[:, 1] <= 1) & (np.exp(X[:, 0]) - X[:, 1] >= 0.5)
    assert feas.sum() > 100
    vals = dag.evaluate({k: v[feas] for k, v in env.items()})
    for nid, iv in st_.items():
        v = np.broadcast_to(vals[nid], (feas.sum(),))
        assert np.all(v >= iv.lo - 1e-12) and np.all(v <= iv.hi + 1e-12)


def test_store_json_uses_labels():
    dag, st_ = tighten("var x, y in [0, 2]; min x*y; s.t. x + y <= 1;")
    js = store_to_json(dag, st_)
    assert js["x"] == [0.0, 1.0]
    assert all(isinstance(v, list) and len(v) == 2 for v in js.values())

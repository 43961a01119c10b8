import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxrelax.expr import (DISTRIBUTE_CAP, ModelError, count_operators, evaluate, factored_form, normalize,
                           parse_model)

from conftest import EXP_BILINEAR


def ops(dag):
    return [n.op for n in dag.nodes if n.op not in ("var", "const")]


# parsing


def test_parse_exp_bilinear():
    m = parse_model(EXP_BILINEAR)
    assert list(m.variables) == ["x", "y"]
    assert m.sense == "max"
    assert m.constraints == []
    assert m.objective_value({"x": 1.0, "y": 1.0}) == pytest.approx(1.0)


def test_parse_constant_objective_without_variables():
    m = parse_model("min 0;")
    assert m.variables == {}
    assert m.objective_value({}) == 0.0


def test_parse_two_variable_model_with_one_linear_constraint():
    m = parse_model("var x, y in [0.1, 1]; min x*log(y); s.t. x+y<=1;")
    assert list(m.variables) == ["x", "y"]
    assert len(m.constraints) == 1
    con = m.constraints[0]
    assert con.sense == "<=" and con.rhs == 1.0


def test_parse_unicode_operators_and_comments():
    m = parse_model("# comment\nvar x in [0, 2];\nmin x·x − 1;\ns.t. x ≤ 1.5;")
    assert m.objective_value({"x": 2.0}) == pytest.approx(3.0)
    assert m.constraints[0].sense == "<="


def test_parse_integer_flag():
    m = parse_model("var n in [0, 5] integer; min n;")
    assert m.variables["n"].integer


def test_constraint_lines_after_st_without_repeating_it():
    m = parse_model("var x, y in [0, 1]; min x; s.t. x + y <= 1; x - y >= 0; x = 0.5;")
    assert [c.sense for c in m.constraints] == ["<=", ">=", "="]


@pytest.mark.parametrize("text, fragment", [
    ("var x in [0,1]; min x +;", "line 1"),
    ("var x in [0,1]; min y;", "undeclared"),
    ("var x in [0,1]; min sin(x);", "sin"),
    ("var x in [2,1]; min x;", "bound"),
    ("var x, y in [1,2]; min x^y;", "exponent"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ModelError) as exc:
        parse_model(text)
    assert fragment in str(exc.value)


def test_roundtrip_through_text():
    m = parse_model("var x in [0.5, 2]; var y in [-1, 3]; max x^2*exp(y)/x - log(x)*y; s.t. x*y >= -1;")
    m2 = parse_model(m.to_text())
    rng = np.random.default_rng(0)
    for _ in range(20):
        env = {"x": rng.uniform(0.5, 2), "y": rng.uniform(-1, 3)}
        assert m2.objective_value(env) == pytest.approx(m.objective_value(env), rel=1e-12)


# normalization


def test_cube_collapses_to_one_power_node():
    dag = normalize(parse_model("var x in [0,2]; min x*x*x;"))
    assert ops(dag) == ["pow"]
    assert dag.nodes[dag.objective].value == 3


def test_distribution_shares_the_common_leaf():
    dag = normalize(parse_model("var x, y, z in [0,1]; min (x+y)*z;"))
    muls = [n for n in dag.nodes if n.op == "mul"]
    assert len(muls) == 2
    z = dag.var_ids["z"]
    assert all(z in n.children for n in muls)


def test_shared_subexpression_gets_one_node():
    dag = normalize(parse_model("var x, y in [0,1]; min x; s.t. exp(x-y) <= 2; exp(x-y) + y >= 0.5;"))
    assert ops(dag).count("exp") == 1


def test_division_kept_as_binary_quotient():
    dag = normalize(parse_model("var x in [1,2]; var y in [0,1]; min y/x;"))
    assert "div" in ops(dag)


def test_distribution_cap_keeps_groups():
    # (x+y)^25 would expand to 26 terms; a small cap keeps the power of the sum
    m = parse_model("var x, y in [0,1]; min (x+y)^3;")
    expanded = normalize(m)
    grouped = normalize(m, cap=2)
    assert "affine" in [expanded.nodes[expanded.objective].op]
    assert grouped.nodes[grouped.objective].op == "pow"
    env = {"x": 0.3, "y": 0.6}
    assert expanded.objective_value(env) == pytest.approx(grouped.objective_value(env))
    assert DISTRIBUTE_CAP == 200


def test_exponent_overflow_is_rejected():
    with pytest.raises(ModelError):
        normalize(parse_model("var x in [0,1]; min ((x^100)^100)^100;"))


def test_max_objective_is_negated():
    dag = normalize(parse_model(EXP_BILINEAR))
    assert dag.objective_sign == -1.0
    assert dag.sense == "max"


def test_normalize_is_idempotent():
    m = parse_model("var x, y, z in [0,1]; min x^2*exp(x)*y - y^2*z^3*x^3 + (x+y)*z; s.t. x*y + exp(x-y) <= 2;")
    d1 = normalize(m)
    d2 = normalize(d1.to_model())
    assert d1.signature() == d2.signature()


_MODELS = [
    "var x, y, z in [0.5, 2]; min x^2*exp(x)*y - y^2*z^3*x^3;",
    "var x, y in [0.5, 2]; min (x + 2*y)^2 * log(x) - y/x + 3;",
    "var x, y, z in [0.5, 2]; max exp(x - y)*x*y + (x*y)*(y*z) - z^0.5;",
]


@pytest.mark.parametrize("text", _MODELS)
def test_dag_matches_parsed_expression_at_random_points(text, rng):
    m = parse_model(text)
    dag = normalize(m)
    names = list(m.variables)
    X = rng.uniform(0.5, 2.0, size=(200, len(names)))
    env = {v: X[:, i] for i, v in enumerate(names)}
    want = np.asarray(evaluate(m.objective, env))
    got = np.asarray(dag.objective_value(env))
    assert np.all(np.abs(got - want) <= 1e-9 * (1 + np.abs(want)))


@pytest.mark.parametrize("text", _MODELS)
def test_aux_count_bounded_by_tree_operators(text):
    m = parse_model(text)
    dag = normalize(m)
    assert len(dag.aux_ids()) <= count_operators(m.objective) + sum(count_operators(c.body) for c in m.constraints)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=5),
       st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_random_polynomials_evaluate_identically(terms, x, y):
    body = " + ".join(f"({c!r})*x^{a}*y^{b}" for c, a, b in terms)
    m = parse_model(f"var x, y in [0.1, 2]; min {body};")
    dag = normalize(m)
    env = {"x": x, "y": y}
    want = m.objective_value(env)
    assert dag.objective_value(env) == pytest.approx(want, rel=1e-9, abs=1e-9)


# factored form


def test_factored_form_of_exp_bilinear():
    ff = factored_form(parse_model(EXP_BILINEAR))
    assert [txt for _, txt in ff.equations] == ["x - y", "exp(t1)", "x*y"]
    assert ff.objective == "t3*t2"
    assert ff.dag.sense == "max"


def test_factored_form_linear_model_has_no_aux():
    ff = factored_form(parse_model("var x, y in [0,1]; min x + 2*y; s.t. x - y <= 0.5;"))
    assert ff.equations == []
    assert len(ff.dag.aux_ids()) == 0


def test_expression_tree_shape_of_interval_example():
    dag = normalize(parse_model("var x1, x2, x3 in [0,1]; min x1^2*exp(x1)*x2 - x2^2*x3^3*x1^3;"))
    kinds = ops(dag)
    assert len(kinds) == 10
    assert sorted(kinds) == sorted(["pow"] * 4 + ["exp"] + ["mul"] * 4 + ["affine"])


def test_aux_label_avoids_variable_names():
    dag = normalize(parse_model("var t1, t2 in [0,1]; min t1*t2 + exp(t1);"))
    labels = [dag.label(i) for i in dag.aux_ids()]
    assert not set(labels) & {"t1", "t2"}
    assert len(set(labels)) == len(labels)

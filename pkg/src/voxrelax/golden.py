"""Golden checks with known closed-form or reference values.

Each check returns a :class:`Check`.  ``run_all`` accepts overrides of the
reference constants so that a perturbed constant can be shown to fail.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.optimize import linprog

from .envelopes import Pentagon, pentagon_envelope, pentagon_lift
from .expr import normalize, parse_model
from .geometry import AxisRegion, Box, build_corner_chain, limiting_matrix, quickhull
from .interval import forward_propagate, inverse_propagate

logger = logging.getLogger(__name__)

# six-box region with a loop in its chain, and the limiting row of the state (2, 1)
LOOP_REGION = [((0, 0), (1, 2)), ((0, 1), (2, 2)), ((2, 1), (4, 4)),
               ((2, 4), (3, 5)), ((4, 3), (5, 4)), ((3, 0), (4, 1))]
LOOP_STATE = (2.0, 1.0)

GOLDEN = {
    # limiting probabilities of LOOP_STATE, keyed by absorbing state
    "chain_row": {(0.0, 0.0): 24 / 95, (0.0, 2.0): 24 / 95, (5.0, 4.0): 8 / 95,
                  (2.0, 5.0): 3 / 95, (4.0, 0.0): 36 / 95},
    "x_eval": (1.5, 1.5),
    "true_value": 81 / 16,
    "r_one": 3.0,
    "r_pentagon": 4.0,
    "r_limit": 3.274653,
    "tree_range": (-1.0, math.e),
    "square_box": (-1.0, 1.0),
    "simplex_box": ((0.0, 1.0), (0.0, 1.0)),
}

TREE_MODEL = "var x1, x2, x3 in [0, 1]; min x1^2*exp(x1)*x2 - x2^2*x3^3*x1^3;"


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(fn):
    def wrapper(golden):
        t = time.perf_counter()
        name, ok, detail = fn(golden)
        return Check(name, bool(ok), detail, time.perf_counter() - t)
    wrapper.__name__ = fn.__name__
    return wrapper


# --------------------------------------------------------------------------
# chain


def loop_region():
    return AxisRegion([Box(*b) for b in LOOP_REGION])


@_timed
def check_chain(golden):
    chain = build_corner_chain(loop_region())
    tstar = limiting_matrix(chain)
    row = tstar[chain.index(LOOP_STATE)]
    err = 0.0
    for state, p in golden["chain_row"].items():
        err = max(err, abs(row[chain.index(state)] - p))
    expected = set(chain.index(s) for s in golden["chain_row"])
    stray = float(sum(row[i] for i in range(len(row)) if i not in expected))
    pts = chain.states
    mean = row @ pts
    bilin = row @ (pts[:, 0] * pts[:, 1])
    moment = max(np.abs(mean - LOOP_STATE).max(), abs(bilin - LOOP_STATE[0] * LOOP_STATE[1]))
    ok = err <= 1e-10 and stray <= 1e-10 and moment <= 1e-9
    return "chain", ok, f"max prob error {err:.2e}, stray mass {stray:.2e}, moment error {moment:.2e}"


# --------------------------------------------------------------------------
# squared-monomial example


def square_pentagon():
    """``{max(0, 2x-1, 4x-4) <= t <= 4, x in [0, 2]}`` as a pentagon."""
    return Pentagon(0.0, 4.0, 2.0, 0.25, 0.75, 0.0, 2.0)


def r_one(x1, x2):
    return max(0.0, 4 * x1**2 + 4 * x2**2 - 16, 8 * x1 + 3 * x2**2 - 16, 3 * x1**2 + 8 * x2 - 16,
               6 * x1 + 6 * x2 - 15, 2 * x1 + 2 * x2 + 3 * x1**2 + 3 * x2**2 - 17)


def r_limit(x1, x2):
    def integrand(lam):
        a = (4 * lam**2 - 4 + 4 * x1 - x1**2) / lam**2
        b = (4 * lam**2 - 8 * lam + 4 * x2 - x2**2) / (1 - lam) ** 2
        return a * b
    val, _ = quad(integrand, 1 - x1 / 2, x2 / 2, epsabs=1e-13, epsrel=1e-13)
    return max(0.0, val)


def r_closed(x1, x2):
    return max(0.0, 4 * x1**2 + 4 * x2**2 - 16, 8 * x1 + 8 * x2 - 20)


def projected_underestimator(x1, x2, P1=None, P2=None):
    """``min mu`` over the pentagon envelope with ``x_i^2 <= t_i <= 4 x_i``."""
    P1 = P1 or square_pentagon()
    P2 = P2 or square_pentagon()
    env = pentagon_envelope(P1, P2)
    x = (x1, x2)
    A, b = [], []
    # columns (t1, t2, mu)
    for row, rhs in zip(env.A, env.b):
        A.append(row[2:])
        b.append(rhs - row[0] * x1 - row[1] * x2)
    for j, P in enumerate((P1, P2)):
        pent = P.inequalities()
        for row, rhs in zip(pent.A, pent.b):
            r = [0.0, 0.0, 0.0]
            r[j] = row[1]
            A.append(r)
            b.append(rhs - row[0] * x[j])
        lower = [0.0, 0.0, 0.0]
        lower[j] = -1.0
        A.append(lower)
        b.append(-x[j] ** 2)
        upper = [0.0, 0.0, 0.0]
        upper[j] = 1.0
        A.append(upper)
        b.append(4 * x[j])
    res = linprog([0, 0, 1], A_ub=A, b_ub=b, bounds=[(None, None)] * 3, method="highs")
    if res.status != 0:
        raise RuntimeError(f"projection LP failed: {res.message}")
    return float(res.fun)


@_timed
def check_square_example(golden):
    x1, x2 = golden["x_eval"]
    true = (x1 * x2) ** 2
    engine = projected_underestimator(x1, x2)
    lim = r_limit(x1, x2)
    errs = {
        "true": abs(true - golden["true_value"]),
        "r1": abs(r_one(x1, x2) - golden["r_one"]),
        "r": abs(r_closed(x1, x2) - golden["r_pentagon"]),
        "engine": abs(engine - golden["r_pentagon"]),
        "r_limit": abs(lim - golden["r_limit"]),
    }
    ok = (max(errs["true"], errs["r1"], errs["r"], errs["engine"]) <= 1e-9 and errs["r_limit"] <= 1e-6
          and engine > lim)
    return "square-monomial", ok, f"engine {engine:.12f}, limit {lim:.9f}, errors " + \
        ", ".join(f"{k} {v:.1e}" for k, v in errs.items())


# --------------------------------------------------------------------------
# pentagon envelope against hulls


def random_pentagon(rng):
    """A valid pentagon with random data."""
    while True:
        fL = rng.uniform(-2.0, 1.0)
        fU = fL + rng.uniform(0.5, 3.0)
        b = rng.uniform(fL + 0.1 * (fU - fL), fU - 0.1 * (fU - fL))
        p1 = rng.uniform(0.0, 0.5)
        p2 = rng.uniform(p1 + 0.05, 1.0)
        xlo = rng.uniform(-1.0, 1.0)
        xhi = xlo + rng.uniform(0.5, 2.0)
        if (p2 - p1) / (b - fL) > (1 - p2) / (fU - b):
            return Pentagon(fL, fU, b, p1, p2, xlo, xhi)


def pentagon_mutual_violation(P1, P2, rng, n_samples=1000):
    """Largest violation of (a) the envelope rows by points of the lifted
    hull and (b) the hull by points satisfying the envelope rows over the
    pentagons, each over ``n_samples`` random samples."""
    env = pentagon_envelope(P1, P2)
    lift = pentagon_lift(P1, P2)
    hull = quickhull(lift)
    scale = 1.0 + np.abs(lift).max()
    w = rng.dirichlet(np.ones(len(lift)) * 0.3, size=n_samples)
    inside = np.vstack([w @ lift, lift])
    v1 = float(env.violation(inside).max()) / scale
    # sample (x, t) in P1 x P2 and mu between the two envelope sides
    V1, V2 = P1.vertices(), P2.vertices()
    a = rng.dirichlet(np.ones(5), size=n_samples) @ V1
    b = rng.dirichlet(np.ones(5), size=n_samples) @ V2
    z = np.column_stack([a[:, 0], b[:, 0], a[:, 1], b[:, 1]])
    under, over = env.A[:6], env.A[6:]
    lo = ((z @ under[:, :4].T) - env.b[:6]).max(axis=1)
    hi = (env.b[6:] - z @ over[:, :4].T).min(axis=1)
    mu = lo + rng.random(n_samples) * (hi - lo)
    pts = np.vstack([np.column_stack([z, lo]), np.column_stack([z, hi]), np.column_stack([z, mu])])
    v2 = float(hull.violation(pts).max()) / scale
    return max(v1, 0.0), max(v2, 0.0)


@_timed
def check_pentagon_hull(golden, n_pairs=10, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        worst = max(worst, *pentagon_mutual_violation(random_pentagon(rng), random_pentagon(rng), rng, 300))
    return "pentagon-hull", worst <= 1e-6, f"{n_pairs} pairs, max scaled violation {worst:.2e}"


# --------------------------------------------------------------------------
# interval propagation


@_timed
def check_intervals(golden):
    dag = normalize(parse_model(TREE_MODEL))
    root = forward_propagate(dag)[dag.objective]
    lo, hi = golden["tree_range"]
    e1 = max(abs(root.lo - lo), abs(root.hi - hi))
    d2 = normalize(parse_model("var x in [-5, 5]; min x; s.t. x^2 <= 1;"))
    st2 = inverse_propagate(d2, forward_propagate(d2))
    x = st2[d2.var_ids["x"]]
    e2 = max(abs(x.lo - golden["square_box"][0]), abs(x.hi - golden["square_box"][1]))
    d3 = normalize(parse_model("var x, y in [0, 2]; min x; s.t. x + y <= 1;"))
    st3 = inverse_propagate(d3, forward_propagate(d3))
    e3 = 0.0
    for name, (a, b) in zip(("x", "y"), golden["simplex_box"]):
        iv = st3[d3.var_ids[name]]
        e3 = max(e3, abs(iv.lo - a), abs(iv.hi - b))
    ok = e1 <= 1e-15 * 4 and e2 == 0.0 and e3 == 0.0
    return "intervals", ok, f"tree range [{root.lo!r}, {root.hi!r}], errors {e1:.1e} {e2:.1e} {e3:.1e}"


CHECKS = (check_chain, check_square_example, check_pentagon_hull, check_intervals)


def run_all(overrides=None):
    golden = dict(GOLDEN)
    golden.update(overrides or {})
    return [check(golden) for check in CHECKS]


def perturbed(name, rel=1e-3):
    """Overrides with one golden constant scaled by ``1 + rel``."""
    if name not in GOLDEN:
        raise KeyError(f"unknown golden constant {name!r}; known: {sorted(GOLDEN)}")
    val = GOLDEN[name]
    if isinstance(val, dict):
        k = next(iter(val))
        val = {**val, k: val[k] * (1 + rel)}
    elif isinstance(val, tuple):
        val = tuple(np.asarray(val, dtype=float) * (1 + rel) + rel)
        val = tuple(map(tuple, val)) if np.ndim(val) > 1 else tuple(map(float, val))
    else:
        val = val * (1 + rel) + rel
    return {name: val}

"""Linear systems, the LP backend, and LP-format text export/import.

Solves go through HiGHS (``scipy.optimize.linprog``), which reports duals
and reduced costs directly.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-7
OPT_TOL = 1e-7


@dataclass
class Row:
    coeffs: dict
    sense: str  # "<=", ">=", "="
    rhs: float
    tag: str = "model-linear"
    name: str = ""


class LinearSystem:
    """Variables with bounds, linear rows with provenance tags, objective."""

    def __init__(self):
        self.names = []
        self.lo = {}
        self.hi = {}
        self.rows = []
        self.objective = {}
        self.obj_const = 0.0
        self.sense = "min"

    def __repr__(self):
        return f"LinearSystem({len(self.names)} vars, {len(self.rows)} rows)"

    def add_var(self, name, lo=-math.inf, hi=math.inf):
        if name in self.lo:
            raise ValueError(f"variable {name!r} already declared")
        if lo > hi:
            raise ValueError(f"empty bounds for {name!r}: [{lo}, {hi}]")
        self.names.append(name)
        self.lo[name] = float(lo)
        self.hi[name] = float(hi)

    def set_bounds(self, name, lo, hi):
        self.lo[name] = float(lo)
        self.hi[name] = float(hi)

    def add_row(self, coeffs, sense, rhs, tag="model-linear", name=None):
        if sense not in ("<=", ">=", "="):
            raise ValueError(f"bad sense {sense!r}")
        clean = {}
        for k, v in coeffs.items():
            if k not in self.lo:
                raise KeyError(f"row references undeclared variable {k!r}")
            v = float(v)
            if math.isnan(v):
                raise ValueError("NaN coefficient")
            if v != 0.0:
                clean[k] = clean.get(k, 0.0) + v
        rhs = float(rhs)
        if math.isnan(rhs):
            raise ValueError("NaN right-hand side")
        self.rows.append(Row(clean, sense, rhs, tag, name or f"r{len(self.rows)}"))
        return len(self.rows) - 1

    def add_facets(self, names, fs, tag):
        """Add ``A z <= b`` and ``E z = f`` of a facet system over ``names``."""
        for a, b in zip(fs.A, fs.b):
            self.add_row(dict(zip(names, a)), "<=", b, tag)
        for e, f in zip(fs.E, fs.f):
            self.add_row(dict(zip(names, e)), "=", f, tag)

    def set_objective(self, coeffs, const=0.0, sense="min"):
        self.objective = {k: float(v) for k, v in coeffs.items() if v != 0.0}
        self.obj_const = float(const)
        self.sense = sense

    def copy(self):
        out = LinearSystem()
        out.names = list(self.names)
        out.lo = dict(self.lo)
        out.hi = dict(self.hi)
        out.rows = [Row(dict(r.coeffs), r.sense, r.rhs, r.tag, r.name) for r in self.rows]
        out.objective = dict(self.objective)
        out.obj_const = self.obj_const
        out.sense = self.sense
        return out

    def tag_counts(self):
        out = {}
        for r in self.rows:
            out[r.tag] = out.get(r.tag, 0) + 1
        return out

    def row_multiset(self):
        """Hashable multiset of rows for structural comparisons."""
        return sorted((tuple(sorted(r.coeffs.items())), r.sense, r.rhs) for r in self.rows)

    def matrix(self):
        """Sparse row matrix (rows x vars) in declaration order."""
        idx = {n: i for i, n in enumerate(self.names)}
        data, ri, ci = [], [], []
        for i, r in enumerate(self.rows):
            for k, v in r.coeffs.items():
                data.append(v)
                ri.append(i)
                ci.append(idx[k])
        return sparse.csr_matrix((data, (ri, ci)), shape=(len(self.rows), len(self.names)))

    def residuals(self, values):
        """Per-row violation at a point (``values``: name -> value, or array
        in declaration order).  Arrays of points are supported column-wise."""
        if isinstance(values, dict):
            X = np.array([np.asarray(values[n], dtype=float) for n in self.names])
        else:
            X = np.asarray(values, dtype=float)
        act = self.matrix() @ X
        rhs = np.array([r.rhs for r in self.rows])
        if X.ndim == 2:
            rhs = rhs[:, None]
        sense = np.array([r.sense for r in self.rows])
        if X.ndim == 2:
            sense = sense[:, None]
        diff = act - rhs
        viol = np.maximum(np.where(sense == "<=", diff, np.where(sense == ">=", -diff, np.abs(diff))), 0.0)
        return viol

    def bound_violation(self, values):
        out = 0.0
        for n in self.names:
            v = np.asarray(values[n])
            out = max(out, float(np.max(self.lo[n] - v, initial=0.0)), float(np.max(v - self.hi[n], initial=0.0)))
        return out


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | iteration-limit
    objective: float = math.nan
    x: dict = field(default_factory=dict)
    duals: np.ndarray = None  # d objective / d rhs per row
    reduced_lower: dict = field(default_factory=dict)  # >= 0 for min: cost of raising lo
    reduced_upper: dict = field(default_factory=dict)  # <= 0 for min
    dual_objective: float = math.nan
    iterations: int = 0

    @property
    def ok(self):
        return self.status == "optimal"

    def reduced_cost(self, name):
        return self.reduced_lower.get(name, 0.0) + self.reduced_upper.get(name, 0.0)


_STATUS = {0: "optimal", 1: "iteration-limit", 2: "infeasible", 3: "unbounded", 4: "iteration-limit"}


def solve(sys, objective=None, sense=None, time_limit=None):
    """Solve ``sys`` (or an alternative objective over its feasible set)."""
    objective = sys.objective if objective is None else objective
    sense = sys.sense if sense is None else sense
    n = len(sys.names)
    idx = {nm: i for i, nm in enumerate(sys.names)}
    c = np.zeros(n)
    for k, v in objective.items():
        c[idx[k]] = v
    flip = -1.0 if sense == "max" else 1.0
    M = sys.matrix()
    senses = np.array([r.sense for r in sys.rows])
    rhs = np.array([r.rhs for r in sys.rows], dtype=float)
    le = np.nonzero(senses == "<=")[0]
    ge = np.nonzero(senses == ">=")[0]
    eq = np.nonzero(senses == "=")[0]
    ub_rows = np.concatenate([le, ge])
    A_ub = sparse.vstack([M[le], -M[ge]]) if len(ub_rows) else None
    b_ub = np.concatenate([rhs[le], -rhs[ge]]) if len(ub_rows) else None
    A_eq = M[eq] if len(eq) else None
    b_eq = rhs[eq] if len(eq) else None
    bounds = [(None if math.isinf(sys.lo[k]) else sys.lo[k], None if math.isinf(sys.hi[k]) else sys.hi[k])
              for k in sys.names]
    options = {"presolve": True}
    if time_limit:
        options["time_limit"] = time_limit
    if n == 0:
        return LpSolution("optimal", sys.obj_const if objective is sys.objective else 0.0, {},
                          np.zeros(len(sys.rows)), {}, {}, sys.obj_const)
    res = linprog(flip * c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs", options=options)
    status = _STATUS.get(res.status, "iteration-limit")
    const = sys.obj_const if objective is sys.objective else 0.0
    if status != "optimal":
        logger.debug("LP status %s: %s", status, res.message)
        return LpSolution(status, math.nan, iterations=int(getattr(res, "nit", 0) or 0))
    x = dict(zip(sys.names, res.x))
    duals = np.zeros(len(sys.rows))
    if len(ub_rows):
        m = res.ineqlin.marginals * flip
        duals[le] = m[: len(le)]
        duals[ge] = -m[len(le):]
    if len(eq):
        duals[eq] = res.eqlin.marginals * flip
    rl = dict(zip(sys.names, res.lower.marginals * flip))
    ru = dict(zip(sys.names, res.upper.marginals * flip))
    dual_obj = const + float(duals @ rhs) if len(rhs) else const
    for k in sys.names:
        if math.isfinite(sys.lo[k]):
            dual_obj += rl[k] * sys.lo[k]
        if math.isfinite(sys.hi[k]):
            dual_obj += ru[k] * sys.hi[k]
    obj = float(c @ res.x) + const
    return LpSolution("optimal", obj, x, duals, rl, ru, dual_obj, int(getattr(res, "nit", 0) or 0))


# --------------------------------------------------------------------------
# LP text format


def _fmt(v):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _expr(coeffs, names):
    parts = []
    for k in names:
        if k in coeffs:
            v = coeffs[k]
            parts.append(f"{'-' if v < 0 else '+'} {_fmt(abs(v))} {k}")
    if not parts:
        return "0"
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else "-" + s[2:]


def export_lp(sys):
    """CPLEX-style LP text with objective, constraints, bounds and end sections."""
    lines = ["\\ relaxation export", "Minimize" if sys.sense == "min" else "Maximize"]
    obj = _expr(sys.objective, sys.names)
    if sys.obj_const:
        obj = f"{obj} {'-' if sys.obj_const < 0 else '+'} {_fmt(abs(sys.obj_const))}" if obj != "0" else _fmt(sys.obj_const)
    lines.append(f" obj: {obj}")
    lines.append("Subject To")
    for r in sys.rows:
        lines.append(f" {r.name}: {_expr(r.coeffs, sys.names)} {r.sense} {_fmt(r.rhs)}")
    lines.append("Bounds")
    for k in sys.names:
        lo, hi = sys.lo[k], sys.hi[k]
        if math.isinf(lo) and math.isinf(hi):
            lines.append(f" {k} free")
        elif lo == hi:
            lines.append(f" {k} = {_fmt(lo)}")
        else:
            lines.append(f" {_fmt(lo)} <= {k} <= {_fmt(hi)}")
    lines.append("End")
    return "\n".join(lines) + "\n"


def _parse_expr(text):
    coeffs, const = {}, 0.0
    toks = re.findall(r"[+-]|[A-Za-z_][A-Za-z_0-9.\[\]]*|[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?|inf", text)
    sign, coef = 1.0, None
    for t in toks:
        if t in "+-":
            if coef is not None:
                const += sign * coef
            sign = 1.0 if t == "+" else -1.0
            coef = None
        elif re.match(r"[A-Za-z_]", t) and t != "inf":
            coeffs[t] = coeffs.get(t, 0.0) + sign * (1.0 if coef is None else coef)
            sign, coef = 1.0, None
        else:
            coef = float(t)
    if coef is not None:
        const += sign * coef
    return coeffs, const


def read_lp(text):
    """Parse text produced by :func:`export_lp` (and simple hand-written LP files)."""
    sys = LinearSystem()
    section = None
    obj_text = None
    rows = []
    bounds = {}
    order = []
    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in ("minimize", "minimise", "min"):
            section, sys.sense = "obj", "min"
            continue
        if low in ("maximize", "maximise", "max"):
            section, sys.sense = "obj", "max"
            continue
        if low in ("subject to", "such that", "st", "s.t."):
            section = "rows"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low == "end":
            break
        if section == "obj":
            obj_text = line.split(":", 1)[1] if ":" in line else line
        elif section == "rows":
            name, body = (line.split(":", 1) if ":" in line else (None, line))
            m = re.search(r"(<=|>=|=<|=>|=|<|>)", body)
            sense = {"=<": "<=", "<": "<=", "=>": ">=", ">": ">="}.get(m.group(1), m.group(1))
            lhs, rhs = body[: m.start()], body[m.end():]
            coeffs, c = _parse_expr(lhs)
            rows.append((name.strip() if name else None, coeffs, sense, float(rhs.strip()) - c))
            for k in coeffs:
                if k not in order:
                    order.append(k)
        elif section == "bounds":
            parts = line.split()
            if len(parts) == 2 and parts[1].lower() == "free":
                bounds[parts[0]] = (-math.inf, math.inf)
                if parts[0] not in order:
                    order.append(parts[0])
            elif len(parts) == 5:
                bounds[parts[2]] = (float(parts[0]), float(parts[4]))
                if parts[2] not in order:
                    order.append(parts[2])
            elif len(parts) == 3:
                k, op, v = parts
                lo, hi = bounds.get(k, (0.0, math.inf))
                v = float(v)
                if op == "=":
                    lo = hi = v
                elif op in (">=", "=>"):
                    lo = v
                else:
                    hi = v
                bounds[k] = (lo, hi)
                if k not in order:
                    order.append(k)
    obj, const = _parse_expr(obj_text or "0")
    for k in obj:
        if k not in order:
            order.append(k)
    for k in order:
        lo, hi = bounds.get(k, (0.0, math.inf))
        sys.add_var(k, lo, hi)
    for name, coeffs, sense, rhs in rows:
        sys.add_row(coeffs, sense, rhs, "model-linear", name)
    sys.set_objective(obj, const, sys.sense)
    return sys

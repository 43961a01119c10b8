"""Model parsing, canonical normalization, and the operator DAG.

A model is parsed into a small AST, every expression is rewritten into a
canonical sum of monomials over *atoms* (variables, ``exp``/``log`` of a
canonical sum, non-expandable powers, quotients), and the result is
hash-consed into an :class:`ExprDag` whose operator nodes are affine
combinations, binary products, quotients, powers with constant exponent,
``exp`` and ``log``.

Rewrite order: flatten, distribute (capped), collapse repeated factors into
powers, deduplicate atoms, group affine combinations, deduplicate nodes.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

DISTRIBUTE_CAP = 200
MAX_EXPONENT = 10_000


class ModelError(ValueError):
    """Malformed model text or an unsupported construct."""

    def __init__(self, msg, line=None, col=None):
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(msg + where)
        self.line = line
        self.col = col


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Ast:
    op: str  # num var add sub mul div pow neg exp log
    args: tuple = ()
    value: float = 0.0
    name: str = ""

    def __str__(self):
        return ast_to_str(self)


def num(v):
    return Ast("num", value=float(v))


def var(name):
    return Ast("var", name=name)


def ast_to_str(a):
    if a.op == "num":
        return repr(a.value) if a.value >= 0 else f"({a.value!r})"
    if a.op == "var":
        return a.name
    if a.op in ("exp", "log"):
        return f"{a.op}({ast_to_str(a.args[0])})"
    if a.op == "neg":
        return f"(-{ast_to_str(a.args[0])})"
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}[a.op]
    return f"({ast_to_str(a.args[0])} {sym} {ast_to_str(a.args[1])})"


def evaluate(a, env):
    """Evaluate an AST; ``env`` maps names to floats or numpy arrays."""
    op = a.op
    if op == "num":
        return a.value
    if op == "var":
        return env[a.name]
    if op == "neg":
        return -evaluate(a.args[0], env)
    if op in ("exp", "log"):
        x = evaluate(a.args[0], env)
        return (np.exp if op == "exp" else np.log)(x)
    x = evaluate(a.args[0], env)
    y = evaluate(a.args[1], env)
    if op == "add":
        return x + y
    if op == "sub":
        return x - y
    if op == "mul":
        return x * y
    if op == "div":
        return x / y
    if op == "pow":
        return np.power(x, y) if isinstance(x, np.ndarray) else x ** y
    raise ValueError(op)


def ast_variables(a, acc=None):
    acc = set() if acc is None else acc
    if a.op == "var":
        acc.add(a.name)
    for ch in a.args:
        ast_variables(ch, acc)
    return acc


def count_operators(a):
    """Operator-node count of the un-deduplicated tree (n-ary chains count once per op)."""
    if a.op in ("num", "var"):
        return 0
    return 1 + sum(count_operators(ch) for ch in a.args)


# --------------------------------------------------------------------------
# model and parser


@dataclass
class VarDecl:
    name: str
    lo: float
    hi: float
    integer: bool = False


@dataclass
class Constraint:
    body: Ast
    sense: str  # "<=", ">=", "="
    rhs: float
    name: str = ""


@dataclass
class Model:
    variables: dict = field(default_factory=dict)
    objective: Ast = field(default_factory=lambda: num(0.0))
    sense: str = "min"
    constraints: list = field(default_factory=list)

    def var_names(self):
        return list(self.variables)

    def box(self):
        lo = np.array([v.lo for v in self.variables.values()], dtype=float)
        hi = np.array([v.hi for v in self.variables.values()], dtype=float)
        return lo, hi

    def objective_value(self, env):
        return evaluate(self.objective, env)

    def is_feasible(self, env, tol=1e-9):
        for v in self.variables.values():
            x = env[v.name]
            if np.any(x < v.lo - tol) or np.any(x > v.hi + tol):
                return False
        for con in self.constraints:
            val = evaluate(con.body, env) - con.rhs
            if con.sense == "<=" and np.any(val > tol):
                return False
            if con.sense == ">=" and np.any(val < -tol):
                return False
            if con.sense == "=" and np.any(abs(val) > tol):
                return False
        return True

    def to_text(self):
        lines = []
        for v in self.variables.values():
            kind = " integer" if v.integer else ""
            lines.append(f"var {v.name} in [{v.lo!r}, {v.hi!r}]{kind};")
        lines.append(f"{self.sense} {ast_to_str(self.objective)};")
        for con in self.constraints:
            lines.append(f"s.t. {ast_to_str(con.body)} {con.sense} {con.rhs!r};")
        return "\n".join(lines) + "\n"


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<st>s\.t\.)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op><=|>=|==|\*\*|[-+*/^(),;\[\]=<>])
    """,
    re.VERBOSE,
)

_UNICODE = {"−": "-", "≤": "<=", "≥": ">=", "·": "*", "×": "*"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text):
    for k, v in _UNICODE.items():
        text = text.replace(k, v)
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ModelError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        raise ModelError(msg, tok.line, tok.col)

    def accept(self, text):
        if self.tok.text == text and self.tok.kind != "eof":
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")

    # statements
    def model(self):
        m = Model()
        objective_seen = False
        in_constraints = False
        while self.tok.kind != "eof":
            if self.accept(";"):
                continue
            t = self.tok
            if t.kind == "name" and t.text == "var":
                self.i += 1
                self.declaration(m)
            elif t.kind == "name" and t.text in ("min", "max"):
                if objective_seen:
                    self.error("second objective")
                self.i += 1
                m.sense = t.text
                m.objective = self.expr()
                objective_seen = True
            elif t.kind == "st":
                self.i += 1
                in_constraints = True
                self.constraint(m)
            elif t.kind == "name" and self.toks[self.i + 1].text in (",", "in"):
                self.declaration(m)
            elif in_constraints:
                # later lines of an ``s.t.`` section
                self.constraint(m)
            else:
                self.error(f"unexpected token {t.text!r}")
            if self.tok.kind != "eof":
                self.expect(";")
        self.resolve(m)
        return m

    def declaration(self, m):
        names = []
        while True:
            if self.tok.kind != "name":
                self.error("expected variable name")
            names.append(self.tok)
            self.i += 1
            if not self.accept(","):
                break
        if not self.accept("in"):
            self.error("expected 'in'")
        self.expect("[")
        lo = self.const_expr()
        self.expect(",")
        hi = self.const_expr()
        self.expect("]")
        integer = False
        if self.tok.kind == "name" and self.tok.text == "integer":
            self.i += 1
            integer = True
        if lo > hi:
            self.error(f"lower bound {lo} exceeds upper bound {hi}", names[0])
        for t in names:
            if t.text in m.variables:
                self.error(f"variable {t.text!r} declared twice", t)
            if t.text in ("exp", "log", "var", "min", "max", "in", "integer", "inf"):
                self.error(f"reserved name {t.text!r}", t)
            m.variables[t.text] = VarDecl(t.text, lo, hi, integer)

    def const_expr(self):
        tok = self.tok
        a = self.expr()
        if ast_variables(a):
            self.error("bounds must be constant", tok)
        try:
            return float(evaluate(a, {}))
        except (ValueError, OverflowError, ZeroDivisionError):
            self.error("cannot evaluate bound", tok)

    def constraint(self, m):
        lhs = self.expr()
        t = self.tok
        if t.text in ("<=", ">=", "=", "=="):
            self.i += 1
        else:
            self.error("expected '<=', '>=' or '='")
        sense = "=" if t.text in ("=", "==") else t.text
        rhs = self.expr()
        if ast_variables(rhs):
            body, rhs_val = Ast("sub", (lhs, rhs)), 0.0
        else:
            body, rhs_val = lhs, float(evaluate(rhs, {}))
        m.constraints.append(Constraint(body, sense, rhs_val, f"c{len(m.constraints)}"))

    def resolve(self, m):
        # declarations may follow use; check after the full pass
        for a in [m.objective] + [c.body for c in m.constraints]:
            missing = ast_variables(a) - set(m.variables)
            if missing:
                raise ModelError(f"undeclared variable {sorted(missing)[0]!r}")

    # expressions: sum > product > unary > power > atom
    def expr(self):
        a = self.term()
        while self.tok.text in ("+", "-"):
            op = "add" if self.tok.text == "+" else "sub"
            self.i += 1
            a = Ast(op, (a, self.term()))
        return a

    def term(self):
        a = self.unary()
        while self.tok.text in ("*", "/"):
            op = "mul" if self.tok.text == "*" else "div"
            self.i += 1
            a = Ast(op, (a, self.unary()))
        return a

    def unary(self):
        if self.accept("-"):
            return Ast("neg", (self.unary(),))
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.tok.text in ("^", "**"):
            t = self.tok
            self.i += 1
            exp = self.unary()
            if ast_variables(exp):
                self.error("unsupported: variable exponent", t)
            return Ast("pow", (base, exp))
        return base

    def atom(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return num(float(t.text))
        if t.kind == "name":
            self.i += 1
            if self.tok.text == "(":
                if t.text not in ("exp", "log"):
                    self.error(f"unsupported operator {t.text!r}", t)
                self.i += 1
                arg = self.expr()
                self.expect(")")
                return Ast(t.text, (arg,))
            if t.text == "inf":
                return num(math.inf)
            return var(t.text)
        if self.accept("("):
            a = self.expr()
            self.expect(")")
            return a
        self.error(f"unexpected token {t.text or 'end of input'!r}")


def parse_model(text):
    """Parse model source text into a :class:`Model`."""
    return _Parser(text).model()


# --------------------------------------------------------------------------
# canonical polynomials over atoms
#
# atom   := ("v", name) | ("exp", P) | ("log", P) | ("pow", P, p)
#         | ("div", N, D) | ("grp", P)
# mono   := tuple of (atom, k>=1) sorted by atom key
# P      := tuple of (mono, coeff) sorted by mono key   (frozen poly)

_RANK = {"v": 0, "grp": 1, "pow": 2, "exp": 3, "log": 4, "div": 5}


@lru_cache(maxsize=None)
def _atom_key(atom):
    return (_RANK[atom[0]], repr(atom))


@lru_cache(maxsize=None)
def _mono_key(mono):
    return (sum(k for _, k in mono), tuple((_atom_key(a), k) for a, k in mono))


def _freeze(p):
    return tuple(sorted(((m, c) for m, c in p.items() if c != 0.0), key=lambda mc: _mono_key(mc[0])))


def _thaw(fp):
    return dict(fp)


def _const(p):
    """Constant value if ``p`` has no variable monomials, else None."""
    if all(m == () for m in p):
        return p.get((), 0.0)
    return None


def _mono_mul(m1, m2):
    exps = dict(m1)
    for a, k in m2:
        exps[a] = exps.get(a, 0) + k
        if exps[a] > MAX_EXPONENT:
            raise ModelError(f"exponent overflow ({exps[a]}) on power consolidation")
    return tuple(sorted(exps.items(), key=lambda ak: _atom_key(ak[0])))


def _add(p, q, s=1.0):
    out = dict(p)
    for m, c in q.items():
        out[m] = out.get(m, 0.0) + s * c
        if out[m] == 0.0:
            del out[m]
    return out


def _scale(p, s):
    if s == 0.0:
        return {}
    return {m: s * c for m, c in p.items()}


def _atom_poly(atom, k=1):
    return {((atom, k),): 1.0}


def _group(p):
    """Wrap a multi-term poly as an opaque factor, pulling out a scalar."""
    c = _const(p)
    if c is not None:
        return {(): c} if c else {}
    if len(p) == 1:
        return dict(p)
    fp = _freeze(p)
    lead = fp[-1][1]
    inner = _freeze(_scale(p, 1.0 / lead)) if lead != 1.0 else fp
    return _scale(_atom_poly(("grp", inner)), lead)


def _mul(p, q, cap=DISTRIBUTE_CAP):
    if not p or not q:
        return {}
    if len(p) > 1 and len(q) > 1 and len(p) * len(q) > cap:
        p, q = _group(p), _group(q)
    out = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            out[m] = out.get(m, 0.0) + c1 * c2
    return {m: c for m, c in out.items() if c != 0.0}


def _pow_atom(atom, e):
    """``atom ** e`` for integer ``e`` != 0 as a poly."""
    if e > 0:
        return _atom_poly(atom, e)
    if atom[0] == "pow":
        inner, p = atom[1], atom[2]
        q = p * e
        if float(q).is_integer() and float(p).is_integer():
            if q > 0:
                return _pow_poly(_thaw(inner), int(q))
            return _atom_poly(("pow", inner, float(q)))
        return _atom_poly(("pow", atom_to_frozen(atom), float(e)))
    return _atom_poly(("pow", atom_to_frozen(atom), float(e)))


def atom_to_frozen(atom):
    return _freeze(_atom_poly(atom))


def _pow_poly(p, e, cap=DISTRIBUTE_CAP):
    """``p ** e`` for a constant exponent ``e``."""
    c = _const(p)
    if c is not None:
        try:
            val = c ** e
        except ZeroDivisionError:
            raise ModelError("division by zero in constant power") from None
        if isinstance(val, complex):
            raise ModelError(f"negative base {c} with fractional exponent {e}")
        return {(): float(val)} if val else {}
    if abs(e) > MAX_EXPONENT:
        raise ModelError(f"exponent overflow ({e}) on power consolidation")
    if float(e).is_integer():
        e = int(e)
        if e == 0:
            return {(): 1.0}
        if len(p) == 1:
            (mono, coef), = p.items()
            if e > 0:
                exps = tuple((a, k * e) for a, k in mono)
                for a, k in exps:
                    if k > MAX_EXPONENT:
                        raise ModelError(f"exponent overflow ({k}) on power consolidation")
                return {exps: coef ** e}
            out = {(): float(coef) ** e}
            for a, k in mono:
                out = _mul(out, _pow_atom(a, k * e), cap)
            return out
        if e > 0:
            out = dict(p)
            for _ in range(e - 1):
                if len(out) * len(p) > cap:
                    return _pow_grouped(p, e)
                out = _mul(out, p, cap)
            return out
        return _pow_grouped(p, e)
    return _pow_grouped(p, float(e))


def _pow_grouped(p, e):
    fp = _freeze(p)
    if isinstance(e, int) and e > 0:
        g = _group(p)
        (mono, coef), = g.items()
        return {tuple((a, k * e) for a, k in mono): coef ** e}
    return _atom_poly(("pow", fp, float(e)))


def _poly_of(a, cap=DISTRIBUTE_CAP):
    op = a.op
    if op == "num":
        if not math.isfinite(a.value):
            raise ModelError("non-finite constant in expression")
        return {(): a.value} if a.value else {}
    if op == "var":
        return _atom_poly(("v", a.name))
    if op == "neg":
        return _scale(_poly_of(a.args[0], cap), -1.0)
    if op in ("add", "sub"):
        return _add(_poly_of(a.args[0], cap), _poly_of(a.args[1], cap), 1.0 if op == "add" else -1.0)
    if op == "mul":
        return _mul(_poly_of(a.args[0], cap), _poly_of(a.args[1], cap), cap)
    if op == "div":
        n = _poly_of(a.args[0], cap)
        d = _poly_of(a.args[1], cap)
        c = _const(d)
        if c is not None:
            if c == 0.0:
                raise ModelError("division by constant zero")
            return _scale(n, 1.0 / c)
        if not n:
            return {}
        fd = _freeze(d)
        lead = fd[-1][1]
        d1 = _freeze(_scale(d, 1.0 / lead))
        nc = _const(n)
        if nc is not None:
            return _scale(_atom_poly(("div", _freeze({(): 1.0}), d1)), nc / lead)
        if len(n) == 1:
            (mono, coef), = n.items()
            return _scale(_atom_poly(("div", _freeze({mono: 1.0}), d1)), coef / lead)
        return _scale(_atom_poly(("div", _freeze(n), d1)), 1.0 / lead)
    if op == "pow":
        e = _poly_of(a.args[1], cap)
        ev = _const(e)
        if ev is None:
            raise ModelError("unsupported: variable exponent")
        return _pow_poly(_poly_of(a.args[0], cap), ev, cap)
    if op == "exp":
        p = _poly_of(a.args[0], cap)
        c = _const(p)
        if c is not None:
            return {(): math.exp(c)}
        return _atom_poly(("exp", _freeze(p)))
    if op == "log":
        p = _poly_of(a.args[0], cap)
        c = _const(p)
        if c is not None:
            if c <= 0.0:
                raise ModelError(f"log of nonpositive constant {c}")
            v = math.log(c)
            return {(): v} if v else {}
        return _atom_poly(("log", _freeze(p)))
    raise ModelError(f"unsupported operator {op!r}")


# --------------------------------------------------------------------------
# DAG


@dataclass(frozen=True)
class Node:
    """One DAG node.

    ``value`` holds the constant for ``const`` nodes, the additive constant
    for ``affine`` nodes and the exponent for ``pow`` nodes.
    """

    id: int
    op: str  # var const affine mul div pow exp log
    children: tuple = ()
    coeffs: tuple = ()
    value: float = 0.0
    name: str = ""


@dataclass
class RootBound:
    """A constraint ``lo <= node <= hi`` on a root node."""

    root: int
    lo: float
    hi: float
    name: str = ""


@dataclass
class ExprDag:
    nodes: list
    variables: dict  # name -> VarDecl
    var_ids: dict  # name -> node id
    objective: int
    objective_sign: float  # +1 for min, -1 for max
    objective_offset: float  # model objective = node + offset; minimized: sign*(node + offset)
    constraints: list  # RootBound
    sense: str = "min"
    parents: dict = field(default_factory=dict)

    def __post_init__(self):
        parents = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for c in n.children:
                parents[c].append(n.id)
        self.parents = parents
        self._labels = {}
        k = 0
        for n in self.nodes:
            if n.op == "var":
                self._labels[n.id] = n.name
            elif n.op == "const":
                self._labels[n.id] = repr(n.value)
            elif self.is_aux(n.id):
                k += 1
                self._labels[n.id] = self._fresh(f"t{k}")
            else:
                self._labels[n.id] = self._fresh(f"r{n.id}")

    def _fresh(self, name):
        """``name`` prefixed with underscores until it clashes with no variable."""
        while name in self.variables:
            name = "_" + name
        return name

    def node(self, i):
        return self.nodes[i]

    def label(self, i):
        return self._labels[i]

    def is_aux(self, i):
        """Operator nodes carry an auxiliary variable, except affine roots."""
        n = self.nodes[i]
        if n.op in ("var", "const"):
            return False
        if n.op == "affine" and not self.parents[i]:
            return False
        return True

    def aux_ids(self):
        return [n.id for n in self.nodes if self.is_aux(n.id)]

    def operator_ids(self):
        return [n.id for n in self.nodes if n.op not in ("var", "const")]

    def product_ids(self):
        return [n.id for n in self.nodes if n.op in ("mul", "div")]

    def roots(self):
        out = [self.objective] + [c.root for c in self.constraints]
        return list(dict.fromkeys(out))

    def evaluate(self, env):
        """Values of every node for a variable assignment (floats or arrays)."""
        vals = {}
        for n in self.nodes:
            vals[n.id] = _eval_node(n, vals, env)
        return vals

    def objective_value(self, env):
        """Objective in the model's own sense (not negated)."""
        vals = self.evaluate(env)
        return vals[self.objective] + self.objective_offset

    def node_to_ast(self, i):
        n = self.nodes[i]
        if n.op == "var":
            return var(n.name)
        if n.op == "const":
            return num(n.value)
        ch = [self.node_to_ast(c) for c in n.children]
        if n.op == "affine":
            acc = num(n.value) if n.value else None
            for coef, a in zip(n.coeffs, ch):
                term = a if coef == 1.0 else Ast("mul", (num(coef), a))
                acc = term if acc is None else Ast("add", (acc, term))
            return acc if acc is not None else num(0.0)
        if n.op == "mul":
            return Ast("mul", tuple(ch))
        if n.op == "div":
            return Ast("div", tuple(ch))
        if n.op == "pow":
            return Ast("pow", (ch[0], num(n.value)))
        return Ast(n.op, (ch[0],))

    def to_model(self):
        """Rebuild a :class:`Model` equivalent to this DAG."""
        obj = self.node_to_ast(self.objective)
        if self.objective_offset:
            obj = Ast("add", (obj, num(self.objective_offset)))
        m = Model(dict(self.variables), obj, self.sense, [])
        for con in self.constraints:
            body = self.node_to_ast(con.root)
            if con.lo == con.hi:
                m.constraints.append(Constraint(body, "=", con.lo, con.name))
                continue
            if math.isfinite(con.hi):
                m.constraints.append(Constraint(body, "<=", con.hi, con.name))
            if math.isfinite(con.lo):
                m.constraints.append(Constraint(body, ">=", con.lo, con.name))
        return m

    def signature(self):
        """Structural fingerprint (labels and operator structure)."""
        nodes = tuple((n.op, n.children, n.coeffs, n.value, n.name) for n in self.nodes)
        cons = tuple(sorted((c.root, c.lo, c.hi) for c in self.constraints))
        return nodes, self.objective, self.objective_sign, self.objective_offset, cons


def _eval_node(n, vals, env):
    op = n.op
    if op == "var":
        return env[n.name]
    if op == "const":
        return n.value
    ch = [vals[c] for c in n.children]
    if op == "affine":
        acc = n.value
        for coef, v in zip(n.coeffs, ch):
            acc = acc + coef * v
        return acc
    if op == "mul":
        return ch[0] * ch[1]
    if op == "div":
        return ch[0] / ch[1]
    if op == "pow":
        x = ch[0]
        p = n.value
        if float(p).is_integer():
            return x ** int(p) if not isinstance(x, np.ndarray) else np.power(x, int(p)) if p >= 0 else 1.0 / np.power(x, -int(p))
        return np.power(x, p)
    if op == "exp":
        return np.exp(ch[0])
    if op == "log":
        return np.log(ch[0])
    raise ValueError(op)


class _Builder:
    def __init__(self, variables):
        self.nodes = []
        self.index = {}
        self.var_ids = {}
        for name in variables:
            self.var_ids[name] = self._make("var", name=name)

    def _make(self, op, children=(), coeffs=(), value=0.0, name=""):
        key = (op, children, coeffs, value, name)
        if key in self.index:
            return self.index[key]
        nid = len(self.nodes)
        self.nodes.append(Node(nid, op, children, coeffs, value, name))
        self.index[key] = nid
        return nid

    def const(self, c):
        return self._make("const", value=float(c))

    def poly(self, fp):
        """Node for a frozen poly (affine over monomial nodes)."""
        terms = [(m, c) for m, c in fp if m != ()]
        const = sum(c for m, c in fp if m == ())
        if not terms:
            return self.const(const)
        if len(terms) == 1 and terms[0][1] == 1.0 and const == 0.0:
            return self.mono(terms[0][0])
        kids = [(self.mono(m), c) for m, c in terms]
        kids.sort()
        merged = {}
        for k, c in kids:
            merged[k] = merged.get(k, 0.0) + c
        items = sorted((k, c) for k, c in merged.items() if c != 0.0)
        if not items:
            return self.const(const)
        return self._make("affine", tuple(k for k, _ in items), tuple(c for _, c in items), float(const))

    def mono(self, mono):
        factors = []
        for atom, k in mono:
            nid = self.atom(atom)
            if k != 1:
                nid = self._make("pow", (nid,), value=float(k))
            factors.append(nid)
        acc = factors[0]
        for f in factors[1:]:
            acc = self._make("mul", (acc, f))
        return acc

    def atom(self, atom):
        kind = atom[0]
        if kind == "v":
            return self.var_ids[atom[1]]
        if kind == "grp":
            return self.poly(atom[1])
        if kind in ("exp", "log"):
            return self._make(kind, (self.poly(atom[1]),))
        if kind == "pow":
            return self._make("pow", (self.poly(atom[1]),), value=float(atom[2]))
        if kind == "div":
            return self._make("div", (self.poly(atom[1]), self.poly(atom[2])))
        raise ValueError(kind)

    def root(self, p):
        """Root node for a poly ``p``, returning (node, scale, offset) such that
        ``p = scale * node + offset`` with ``node`` free of a bare constant."""
        const = p.get((), 0.0)
        rest = {m: c for m, c in p.items() if m != ()}
        if not rest:
            return self.const(0.0), 1.0, const
        if len(rest) == 1:
            (mono, coef), = rest.items()
            return self.mono(mono), coef, const
        return self.poly(_freeze(rest)), 1.0, const


def normalize(m, cap=DISTRIBUTE_CAP):
    """Canonicalize a model into an :class:`ExprDag`.

    Constraints are stored as root bounds ``lo <= node <= hi``; a single-term
    body ``a * node + c`` is rescaled so the root is the monomial node itself.
    A ``max`` objective is negated; ``objective_sign`` records this.
    """
    b = _Builder(m.variables)
    sign = 1.0 if m.sense == "min" else -1.0
    obj_poly = _poly_of(m.objective, cap)
    # keep objective node unscaled: internal objective = sign*coef*node + sign*offset
    const = obj_poly.get((), 0.0)
    rest = {mm: c for mm, c in obj_poly.items() if mm != ()}
    if len(rest) == 1:
        (mono, coef), = rest.items()
        if coef == 1.0:
            obj_node = b.mono(mono)
        else:
            obj_node = b.poly(_freeze(rest))
    elif rest:
        obj_node = b.poly(_freeze(rest))
    else:
        obj_node = b.const(0.0)
    bounds = []
    for con in m.constraints:
        p = _add(_poly_of(con.body, cap), {(): con.rhs}, -1.0) if con.rhs else _poly_of(con.body, cap)
        node, scale, offset = b.root(p)
        lo, hi = {"<=": (-math.inf, 0.0), ">=": (0.0, math.inf), "=": (0.0, 0.0)}[con.sense]
        if b.nodes[node].op == "const":
            # constant constraint: check and drop
            if not (lo - 1e-12 <= offset <= hi + 1e-12):
                raise ModelError(f"constraint {con.name or ''} is constant and violated")
            continue
        lo, hi = lo - offset, hi - offset
        if scale < 0:
            lo, hi = hi, lo
        lo, hi = lo / scale, hi / scale
        if lo == 0.0:
            lo = 0.0
        if hi == 0.0:
            hi = 0.0
        bounds.append(RootBound(node, lo, hi, con.name))
    return ExprDag(b.nodes, dict(m.variables), dict(b.var_ids), obj_node, sign, const, bounds, m.sense)


@dataclass
class FactoredForm:
    """Auxiliary equations in topological order plus root expressions."""

    dag: ExprDag
    equations: list  # (label, text)
    objective: str
    constraints: list  # text

    def __str__(self):
        lines = [f"{lbl} = {txt}" for lbl, txt in self.equations]
        lines.append(f"{self.dag.sense} {self.objective}")
        lines.extend(f"s.t. {c}" for c in self.constraints)
        return "\n".join(lines)


def _node_text(dag, i):
    n = dag.nodes[i]
    lab = [dag.label(c) for c in n.children]
    if n.op == "affine":
        parts = []
        for coef, l in zip(n.coeffs, lab):
            if coef == 1.0:
                parts.append(f"+ {l}")
            elif coef == -1.0:
                parts.append(f"- {l}")
            else:
                parts.append(f"{'-' if coef < 0 else '+'} {abs(coef):g}*{l}")
        if n.value:
            parts.append(f"{'-' if n.value < 0 else '+'} {abs(n.value):g}")
        s = " ".join(parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]
    if n.op == "mul":
        return f"{lab[0]}*{lab[1]}"
    if n.op == "div":
        return f"{lab[0]}/{lab[1]}"
    if n.op == "pow":
        p = n.value
        return f"{lab[0]}^{int(p) if float(p).is_integer() else p}"
    if n.op in ("exp", "log"):
        return f"{n.op}({lab[0]})"
    return dag.label(i)


def factored_form(m):
    """Normalize ``m`` (a Model or an already built DAG) and enumerate the
    auxiliary equations ``t_k = op(children)`` for non-root operator nodes."""
    dag = m if isinstance(m, ExprDag) else normalize(m)
    eqs = []
    for n in dag.nodes:
        if dag.is_aux(n.id) and dag.parents[n.id]:
            eqs.append((dag.label(n.id), _node_text(dag, n.id)))
    obj = _node_text(dag, dag.objective)
    if dag.objective_offset:
        obj = f"{obj} + {dag.objective_offset:g}"
    cons = []
    for c in dag.constraints:
        txt = _node_text(dag, c.root)
        if c.lo == c.hi:
            cons.append(f"{txt} = {c.lo:g}")
        else:
            if math.isfinite(c.lo):
                cons.append(f"{txt} >= {c.lo:g}")
            if math.isfinite(c.hi):
                cons.append(f"{txt} <= {c.hi:g}")
    return FactoredForm(dag, eqs, obj, cons)

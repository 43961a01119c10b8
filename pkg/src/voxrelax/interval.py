"""Interval arithmetic with outward rounding, plus forward and inverse
bound propagation over an :class:`~voxrelax.expr.ExprDag`.

Endpoints are widened by one ulp only when the floating-point result of an
operation is not exact, so intervals built from representable data (e.g.
``[0, 1] * [0, 1]``) stay exact while transcendental results stay sound.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction

logger = logging.getLogger(__name__)

INF = math.inf

#: Inverse-propagation sweep cap.
DEFAULT_SWEEPS = 10
#: An interval with ``lo > hi + EMPTY_TOL`` is a proof of infeasibility;
#: smaller crossings are clamped to a point.
EMPTY_TOL = 1e-12


class IntervalError(ValueError):
    """Operation undefined on the given interval (e.g. ``log`` of ``[-1, 1]``)."""


class InfeasibleError(Exception):
    """Bound propagation produced an empty interval."""

    def __init__(self, node, lo, hi):
        super().__init__(f"empty interval [{lo}, {hi}] at node {node}")
        self.node = node
        self.lo = lo
        self.hi = hi


def _down(x):
    return math.nextafter(x, -INF) if math.isfinite(x) else x


def _up(x):
    return math.nextafter(x, INF) if math.isfinite(x) else x


def _split(a):
    # Veltkamp split for Dekker's exact product
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


def _prod_exact(a, b, p):
    if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(p)):
        return True
    if abs(p) > 1e300 or (p != 0 and abs(p) < 1e-290):
        return Fraction(a) * Fraction(b) == Fraction(p)
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return err == 0.0


def _sum_exact(a, b, s):
    if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(s)):
        return True
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return err == 0.0


def _mul(a, b):
    if a == 0.0 or b == 0.0:
        return 0.0, 0.0
    p = a * b
    if _prod_exact(a, b, p):
        return p, p
    return _down(p), _up(p)


def _add(a, b):
    if math.isinf(a) or math.isinf(b):
        s = a + b
        return s, s
    s = a + b
    if _sum_exact(a, b, s):
        return s, s
    return _down(s), _up(s)


def _div(a, b):
    if math.isinf(b):
        return (0.0, 0.0) if math.isfinite(a) else (a * math.copysign(1, b), a * math.copysign(1, b))
    q = a / b
    if math.isfinite(q) and math.isfinite(a) and _prod_exact(q, b, q * b) and q * b == a:
        return q, q
    return _down(q), _up(q)


def _ipow(x, k):
    """``x**k`` for integer ``k`` as a (lo, hi) enclosure."""
    if math.isinf(x):
        if k > 0:
            return (INF, INF) if (x > 0 or k % 2 == 0) else (-INF, -INF)
        return 0.0, 0.0
    if x == 0.0:
        if k > 0:
            return 0.0, 0.0
        return INF, INF
    try:
        y = x ** k
    except OverflowError:
        y = math.copysign(INF, x) if k % 2 else INF
    if math.isinf(y):
        return y, y
    if abs(k) <= 16 and Fraction(x) ** k == Fraction(y):
        return y, y
    # a few ulps for repeated rounding in the pow routine
    lo, hi = y, y
    for _ in range(2):
        lo, hi = _down(lo), _up(hi)
    return lo, hi


def _rpow(x, p):
    """``x**p`` for real ``p`` and ``x >= 0``."""
    if x == 0.0:
        return (0.0, 0.0) if p > 0 else (INF, INF)
    if math.isinf(x):
        return (INF, INF) if p > 0 else (0.0, 0.0)
    try:
        y = x ** p
    except OverflowError:
        return INF, INF
    lo, hi = y, y
    for _ in range(2):
        lo, hi = _down(lo), _up(hi)
    return max(lo, 0.0), hi


def _is_int(p):
    return float(p).is_integer()


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]`` over the extended reals."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise IntervalError("NaN endpoint")
        if self.lo > self.hi:
            raise IntervalError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, v):
        return cls(float(v), float(v))

    @classmethod
    def entire(cls):
        return cls(-INF, INF)

    def __iter__(self):
        yield self.lo
        yield self.hi

    def __repr__(self):
        return f"[{self.lo!r}, {self.hi!r}]"

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def mid(self):
        if math.isinf(self.lo) or math.isinf(self.hi):
            if math.isinf(self.lo) and math.isinf(self.hi):
                return 0.0
            return self.lo if math.isfinite(self.lo) else self.hi
        return 0.5 * (self.lo + self.hi)

    def is_finite(self):
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def contains(self, x, tol=0.0):
        return self.lo - tol <= x <= self.hi + tol

    def subset_of(self, other, tol=0.0):
        return other.lo - tol <= self.lo and self.hi <= other.hi + tol

    def intersect(self, other, node=None):
        lo = max(self.lo, other.lo)
        hi = min(self.hi, other.hi)
        if lo > hi:
            if lo - hi > EMPTY_TOL * max(1.0, abs(lo), abs(hi)):
                raise InfeasibleError(node, lo, hi)
            lo = hi = 0.5 * (lo + hi)
        return Interval(lo, hi)

    def hull(self, other):
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = _as_interval(other)
        return Interval(_add(self.lo, other.lo)[0], _add(self.hi, other.hi)[1])

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-_as_interval(other))

    def __rsub__(self, other):
        return _as_interval(other) - self

    def __mul__(self, other):
        other = _as_interval(other)
        lows, highs = [], []
        for a in (self.lo, self.hi):
            for b in (other.lo, other.hi):
                lo, hi = _mul(a, b)
                lows.append(lo)
                highs.append(hi)
        return Interval(min(lows), max(highs))

    __rmul__ = __mul__

    def scale(self, c):
        return self * Interval.point(c)

    def reciprocal(self):
        if self.lo <= 0.0 <= self.hi:
            raise IntervalError(f"division by interval containing zero {self}")
        lo = _div(1.0, self.hi)[0]
        hi = _div(1.0, self.lo)[1]
        return Interval(lo, hi)

    def __truediv__(self, other):
        other = _as_interval(other)
        if other.lo <= 0.0 <= other.hi:
            raise IntervalError(f"division by interval containing zero {other}")
        lows, highs = [], []
        for a in (self.lo, self.hi):
            for b in (other.lo, other.hi):
                lo, hi = _div(a, b)
                lows.append(lo)
                highs.append(hi)
        return Interval(min(lows), max(highs))

    def __rtruediv__(self, other):
        return _as_interval(other) / self

    def __pow__(self, p):
        return ipow(self, p)


def _as_interval(x):
    if isinstance(x, Interval):
        return x
    return Interval.point(x)


def ipow(a, p):
    """Enclosure of ``{x**p : x in a}`` for a constant exponent ``p``."""
    p = float(p)
    if _is_int(p):
        k = int(p)
        if k == 0:
            return Interval(1.0, 1.0)
        if k < 0 and a.lo <= 0.0 <= a.hi:
            raise IntervalError(f"negative power of interval containing zero {a}")
        lo_lo, lo_hi = _ipow(a.lo, k)
        hi_lo, hi_hi = _ipow(a.hi, k)
        lows, highs = [lo_lo, hi_lo], [lo_hi, hi_hi]
        if k > 0 and k % 2 == 0 and a.lo < 0.0 < a.hi:
            lows.append(0.0)
        return Interval(min(lows), max(highs))
    # non-integer exponent: real-valued only for x >= 0
    if a.hi < 0.0 or (p < 0 and a.hi <= 0.0):
        raise IntervalError(f"x**{p} undefined on {a}")
    lo = max(a.lo, 0.0)
    if p < 0 and lo == 0.0:
        lo_val = (INF, INF)
    else:
        lo_val = _rpow(lo, p)
    hi_val = _rpow(a.hi, p)
    if p > 0:
        return Interval(lo_val[0], hi_val[1])
    return Interval(hi_val[0], lo_val[1])


def iexp(a):
    lo = 0.0 if a.lo == -INF else math.exp(a.lo) if a.lo < 709 else INF
    hi = INF if a.hi > 709 else math.exp(a.hi)
    if a.lo == 0.0:
        lo_r = 1.0
    else:
        lo_r = max(_down(lo), 0.0)
    hi_r = 1.0 if a.hi == 0.0 else _up(hi)
    return Interval(lo_r, hi_r)


def ilog(a):
    if a.lo <= 0.0:
        raise IntervalError(f"log of interval touching <= 0: {a}")
    lo = 0.0 if a.lo == 1.0 else _down(math.log(a.lo))
    hi = 0.0 if a.hi == 1.0 else (INF if math.isinf(a.hi) else _up(math.log(a.hi)))
    return Interval(lo, hi)


def interval_op(op, a, b=None):
    """Apply a named operator to intervals.

    ``op`` is one of ``+ - * / exp log`` or ``("pow", p)``.
    """
    if isinstance(op, tuple) and op[0] == "pow":
        return ipow(a, op[1])
    binary = {"+": Interval.__add__, "-": Interval.__sub__,
              "*": Interval.__mul__, "/": Interval.__truediv__}
    if op in binary:
        if b is None:
            raise ValueError(f"operator {op!r} needs two operands")
        return binary[op](a, b)
    if b is not None:
        raise ValueError(f"operator {op!r} is unary")
    if op == "exp":
        return iexp(a)
    if op == "log":
        return ilog(a)
    if op == "neg":
        return -a
    raise ValueError(f"unsupported operator {op!r}")


# --------------------------------------------------------------------------
# inverse operators


def _div_extended(z, y):
    """Hull of ``{x : x*y' in z for some y' in y}``; entire line if unknown."""
    if not (y.lo <= 0.0 <= y.hi):
        return z / y
    if z.lo <= 0.0 <= z.hi:
        return Interval.entire()
    if y.lo == 0.0 and y.hi > 0.0:
        # y in (0, yhi]
        if z.lo > 0.0:
            return Interval(_div(z.lo, y.hi)[0], INF)
        return Interval(-INF, _div(z.hi, y.hi)[1])
    if y.hi == 0.0 and y.lo < 0.0:
        if z.lo > 0.0:
            return Interval(-INF, _div(z.lo, y.lo)[1])
        return Interval(_div(z.hi, y.lo)[0], INF)
    return Interval.entire()


def _root(z, k):
    """Enclosure of the nonnegative ``k``-th root of ``z >= 0``."""
    if z <= 0.0:
        return 0.0, 0.0
    if math.isinf(z):
        return INF, INF
    r = z ** (1.0 / k)
    if float(k).is_integer() and 1 < k <= 16:
        # polish and test exactness
        kk = int(k)
        for cand in (r, _down(r), _up(r)):
            if Fraction(cand) ** kk == Fraction(z):
                return cand, cand
    return _down(_down(r)), _up(_up(r))


def inverse_pow(z, x, p):
    """Tighten ``x`` given ``z = x**p`` with ``z`` in ``z``."""
    p = float(p)
    pieces = []
    segments = []
    if x.hi > 0.0:
        segments.append(Interval(max(x.lo, 0.0), x.hi))
    if x.lo < 0.0 and _is_int(p):
        segments.append(Interval(x.lo, min(x.hi, 0.0)))
    if x.lo <= 0.0 <= x.hi and not segments:
        segments.append(Interval(0.0, 0.0))
    for seg in segments:
        if p < 0 and seg.lo <= 0.0 <= seg.hi and seg.lo == seg.hi:
            continue
        try:
            img = ipow(seg, p)
        except IntervalError:
            continue
        if img.hi < z.lo or img.lo > z.hi:
            continue
        zz = Interval(max(img.lo, z.lo), min(img.hi, z.hi))
        negative = seg.hi <= 0.0 and seg.lo < 0.0
        if not negative:
            # x >= 0: x = z**(1/p), increasing for p > 0, decreasing for p < 0
            a = _root(zz.lo, p)[0] if p > 0 else _root_neg_exp(zz.hi, p)[0]
            b = _root(zz.hi, p)[1] if p > 0 else _root_neg_exp(zz.lo, p)[1]
        else:
            k = int(p)
            sgn = 1.0 if k % 2 == 0 else -1.0
            # x**k = sgn * |x|**k on x <= 0
            m = Interval(*sorted((sgn * zz.lo, sgn * zz.hi)))
            m = Interval(max(m.lo, 0.0), max(m.hi, 0.0))
            if k > 0:
                ma, mb = _root(m.lo, k)[0], _root(m.hi, k)[1]
            else:
                ma, mb = _root_neg_exp(m.hi, k)[0], _root_neg_exp(m.lo, k)[1]
            a, b = -mb, -ma
        lo, hi = max(a, seg.lo), min(b, seg.hi)
        if lo <= hi:
            pieces.append(Interval(lo, hi))
    if not pieces:
        raise InfeasibleError(None, z.lo, z.hi)
    out = pieces[0]
    for piece in pieces[1:]:
        out = out.hull(piece)
    return out


def _root_neg_exp(z, p):
    """Enclosure of ``z**(1/p)`` for ``p < 0``, ``z >= 0``."""
    if z <= 0.0:
        return INF, INF
    if math.isinf(z):
        return 0.0, 0.0
    r = z ** (1.0 / p)
    return _down(_down(r)), _up(_up(r))


def inverse_exp(z, x):
    if z.hi <= 0.0:
        raise InfeasibleError(None, z.lo, z.hi)
    lo = -INF if z.lo <= 0.0 else _down(math.log(z.lo))
    hi = INF if math.isinf(z.hi) else _up(math.log(z.hi))
    return x.intersect(Interval(lo, hi))


def inverse_log(z, x):
    lo = 0.0 if z.lo == -INF else (0.0 if z.lo < -745 else _down(math.exp(z.lo)) if z.lo < 709 else INF)
    hi = INF if z.hi > 709 else _up(math.exp(z.hi))
    return x.intersect(Interval(max(lo, 0.0), hi))


# --------------------------------------------------------------------------
# propagation over a DAG


def initial_store(dag):
    """Leaf intervals from the declared variable bounds; constants as points."""
    store = {}
    for node in dag.nodes:
        if node.op == "var":
            var = dag.variables[node.name]
            store[node.id] = Interval(var.lo, var.hi)
        elif node.op == "const":
            store[node.id] = Interval.point(node.value)
    return store


def eval_node(node, store):
    """Forward enclosure of one operator node from its children's intervals."""
    op = node.op
    ch = [store[c] for c in node.children]
    if op == "var":
        return store[node.id]
    if op == "const":
        return Interval.point(node.value)
    if op == "affine":
        acc = Interval.point(node.value)
        for coef, iv in zip(node.coeffs, ch):
            acc = acc + iv.scale(coef)
        return acc
    if op == "mul":
        return ch[0] * ch[1]
    if op == "div":
        return _div_extended(ch[0], ch[1]) if ch[1].lo <= 0.0 <= ch[1].hi else ch[0] / ch[1]
    if op == "pow":
        a = ch[0]
        p = float(node.value)
        if not _is_int(p) and a.lo < 0.0:
            a = Interval(0.0, max(a.hi, 0.0))
        if p < 0 and a.lo <= 0.0 <= a.hi:
            return Interval.entire() if _is_int(p) else Interval(0.0, INF)
        return ipow(a, p)
    if op == "exp":
        return iexp(ch[0])
    if op == "log":
        a = ch[0]
        if a.hi <= 0.0:
            raise InfeasibleError(node.id, a.lo, a.hi)
        if a.lo <= 0.0:
            return Interval(-INF, ilog(Interval(a.hi, a.hi)).hi)
        return ilog(a)
    raise ValueError(f"unknown node op {op!r}")


def forward_propagate(dag, store=None, pinned=None):
    """Bound every node bottom-up; results are intersected with ``store``.

    ``pinned`` maps node ids to intervals that replace (rather than tighten)
    the node's bound and are not recomputed from children; the quadtree
    voxelizer uses this to restrict target variables to a cell.
    """
    out = dict(initial_store(dag) if store is None else store)
    for node in dag.nodes:
        if node.op == "var" and node.id not in out:
            var = dag.variables[node.name]
            out[node.id] = Interval(var.lo, var.hi)
    pinned = pinned or {}
    for node in dag.nodes:
        if node.id in pinned:
            out[node.id] = pinned[node.id]
            continue
        if node.op in ("var", "const"):
            if node.op == "const":
                out[node.id] = Interval.point(node.value)
            continue
        iv = eval_node(node, out)
        old = out.get(node.id)
        out[node.id] = iv if old is None else iv.intersect(old, node.id)
    return out


def _inverse_node(node, z, store):
    """Tightened child intervals for one node given its output interval."""
    ch = [store[c] for c in node.children]
    op = node.op
    if op == "affine":
        terms = [iv.scale(c) for c, iv in zip(node.coeffs, ch)]
        rest_total = z - node.value
        out = []
        for i, (coef, iv) in enumerate(zip(node.coeffs, ch)):
            others = Interval.point(0.0)
            for j, t in enumerate(terms):
                if j != i:
                    others = others + t
            target = rest_total - others
            out.append(iv.intersect(target / Interval.point(coef), node.children[i]))
        return out
    if op == "mul":
        x, y = ch
        nx = x.intersect(_div_extended(z, y), node.children[0])
        ny = y.intersect(_div_extended(z, nx), node.children[1])
        return [nx, ny]
    if op == "div":
        x, y = ch
        nx = x.intersect(z * y, node.children[0]) if y.is_finite() and z.is_finite() else x
        ny = y.intersect(_div_extended(nx, z), node.children[1])
        return [nx, ny]
    if op == "pow":
        try:
            return [ch[0].intersect(inverse_pow(z, ch[0], node.value), node.children[0])]
        except InfeasibleError as exc:
            raise InfeasibleError(node.children[0], exc.lo, exc.hi) from None
    if op == "exp":
        try:
            return [inverse_exp(z, ch[0])]
        except InfeasibleError as exc:
            raise InfeasibleError(node.children[0], exc.lo, exc.hi) from None
    if op == "log":
        return [inverse_log(z, ch[0])]
    return ch


def inverse_propagate(dag, store, constraints=None, sweeps=DEFAULT_SWEEPS, rtol=1e-9):
    """Top-down domain tightening from constraint root bounds.

    ``constraints`` maps root node ids to intervals; by default the DAG's own
    constraint list is used.  Forward and inverse sweeps alternate until no
    bound moves by more than ``rtol`` (relative) or ``sweeps`` is reached.
    Raises :class:`InfeasibleError` when a domain becomes empty.
    """
    if constraints is None:
        constraints = {}
        for con in dag.constraints:
            iv = Interval(con.lo, con.hi)
            constraints[con.root] = constraints[con.root].intersect(iv) if con.root in constraints else iv
    out = forward_propagate(dag, store)
    for _ in range(sweeps):
        before = dict(out)
        for root, iv in constraints.items():
            out[root] = out[root].intersect(iv, root)
        for node in reversed(dag.nodes):
            if node.op in ("var", "const"):
                continue
            new_children = _inverse_node(node, out[node.id], out)
            for cid, iv in zip(node.children, new_children):
                if dag.nodes[cid].op == "const":
                    if not iv.contains(dag.nodes[cid].value, 1e-9 * (1 + abs(dag.nodes[cid].value))):
                        raise InfeasibleError(cid, iv.lo, iv.hi)
                    continue
                out[cid] = out[cid].intersect(iv, cid)
        out = forward_propagate(dag, out)
        if not _moved(before, out, rtol):
            break
    return out


def _moved(before, after, rtol):
    for k, iv in after.items():
        old = before.get(k)
        if old is None:
            return True
        for a, b in ((old.lo, iv.lo), (old.hi, iv.hi)):
            if a == b:
                continue
            if math.isinf(a) or math.isinf(b):
                return True
            if abs(a - b) > rtol * max(1.0, abs(a), abs(b)):
                return True
    return False


def store_to_json(dag, store):
    """Serializable dump of a bound store keyed by variable / aux names."""
    out = {}
    for node in dag.nodes:
        if node.id not in store or node.op == "const":
            continue
        iv = store[node.id]
        out[dag.label(node.id)] = [_json_num(iv.lo), _json_num(iv.hi)]
    return out


def _json_num(x):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x

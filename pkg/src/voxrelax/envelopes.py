"""Closed-form relaxations: McCormick, univariate hulls, piecewise-linear
estimators and the pentagon product envelope."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import FacetSystem

BISECT_TOL = 1e-10


class DomainError(ValueError):
    """Function undefined or not finite on the requested domain."""


# --------------------------------------------------------------------------
# McCormick


def mccormick(xb, yb):
    """Facets of conv{(x, y, xy)} over a box, as rows over (x, y, mu).

    A flat axis turns the envelope into the exact equality ``mu = c * other``.
    """
    xl, xu = xb
    yl, yu = yb
    if not all(map(math.isfinite, (xl, xu, yl, yu))):
        raise DomainError("McCormick needs finite bounds")
    eqs = []
    if xl == xu:
        eqs.append(([0.0, -xl, 1.0], 0.0))
    if yl == yu:
        eqs.append(([-yl, 0.0, 1.0], 0.0))
    if eqs:
        return FacetSystem(np.zeros((0, 3)), np.zeros(0),
                           np.array([e for e, _ in eqs]), np.array([f for _, f in eqs]))
    A = np.array([
        [yl, xl, -1.0],
        [yu, xu, -1.0],
        [-yl, -xu, 1.0],
        [-yu, -xl, 1.0],
    ])
    b = np.array([xl * yl, xu * yu, -xu * yl, -xl * yu])
    return FacetSystem(A, b)


# --------------------------------------------------------------------------
# univariate functions


@dataclass(frozen=True)
class Univariate:
    """``x**p``, ``exp(x)`` or ``log(x)``."""

    kind: str
    p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("pow", "exp", "log"):
            raise ValueError(f"unsupported univariate kind {self.kind!r}")

    @property
    def is_int_power(self):
        return self.kind == "pow" and float(self.p).is_integer()

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "exp":
            return np.exp(x)
        if self.kind == "log":
            return np.log(x)
        if self.is_int_power:
            k = int(self.p)
            return np.power(x, k) if k >= 0 else 1.0 / np.power(x, -k)
        return np.power(x, self.p)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "exp":
            return np.exp(x)
        if self.kind == "log":
            return 1.0 / x
        if self.p == 0:
            return np.zeros_like(x)
        if self.is_int_power:
            k = int(self.p)
            if k == 1:
                return np.ones_like(x)
            return k * (np.power(x, k - 1) if k - 1 >= 0 else 1.0 / np.power(x, 1 - k))
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.p * np.power(x, self.p - 1)

    def check_domain(self, lo, hi):
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise DomainError(f"{self} needs a finite domain, got [{lo}, {hi}]")
        if lo > hi:
            raise DomainError("empty domain")
        if self.kind == "log" and lo <= 0:
            raise DomainError(f"log needs a positive domain, got [{lo}, {hi}]")
        if self.kind == "pow":
            if self.p < 0 and lo <= 0.0 <= hi:
                raise DomainError(f"x^{self.p} undefined at 0 in [{lo}, {hi}]")
            if not self.is_int_power and lo < 0:
                raise DomainError(f"x^{self.p} needs x >= 0, got [{lo}, {hi}]")

    def pieces(self, lo, hi):
        """Split ``[lo, hi]`` into ``(a, b, curvature)`` with curvature in
        ``{"convex", "concave", "linear"}``."""
        self.check_domain(lo, hi)
        if self.kind == "exp":
            return [(lo, hi, "convex")]
        if self.kind == "log":
            return [(lo, hi, "concave")]
        p = self.p
        if p in (0.0, 1.0):
            return [(lo, hi, "linear")]
        if not self.is_int_power:
            return [(lo, hi, "convex" if (p > 1 or p < 0) else "concave")]
        k = int(p)
        if k % 2 == 0:
            return [(lo, hi, "convex")]
        # odd k: concave for x < 0, convex for x > 0 (either sign of k)
        out = []
        if lo < 0:
            out.append((lo, min(hi, 0.0), "concave"))
        if hi > 0:
            out.append((max(lo, 0.0), hi, "convex"))
        if not out:
            out.append((lo, hi, "convex"))
        return [pc for pc in out if pc[1] > pc[0]] or [out[0]]

    def __str__(self):
        if self.kind == "pow":
            p = int(self.p) if self.is_int_power else self.p
            return f"x^{p}"
        return f"{self.kind}(x)"


class _Negated:
    """``-f`` with the same interface, used to derive upper envelopes."""

    def __init__(self, f):
        self.f = f

    def __call__(self, x):
        return -self.f(x)

    def deriv(self, x):
        return -self.f.deriv(x)

    def pieces(self, lo, hi):
        flip = {"convex": "concave", "concave": "convex", "linear": "linear"}
        return [(a, b, flip[c]) for a, b, c in self.f.pieces(lo, hi)]


def _bisect(phi, a, b, tol=BISECT_TOL):
    """Root of a function with ``phi(a) >= 0 >= phi(b)``."""
    fa = phi(a)
    for _ in range(200):
        if b - a <= tol * max(1.0, abs(a), abs(b)):
            break
        m = 0.5 * (a + b)
        fm = phi(m)
        if (fm >= 0) == (fa >= 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def _tangent(f, z):
    m = float(f.deriv(z))
    return m, float(f(z)) - m * z


def _chord(f, a, b):
    fa, fb = float(f(a)), float(f(b))
    m = (fb - fa) / (b - a)
    return m, fa - m * a


def _convex_envelope_cuts(f, lo, hi, n):
    """Affine minorants ``(slope, intercept)`` whose max is the convex envelope
    of ``f`` on ``[lo, hi]`` (tangent cuts sampled at ``n`` points).

    Intercepts are re-derived as ``min f(x) - m x`` so bisection error in a
    tangency point cannot make a cut invalid."""
    cuts = _raw_envelope_cuts(f, lo, hi, n)
    out = []
    for m, c in cuts:
        if math.isfinite(m):
            out.append((m, _extreme_offset(f, m, lo, hi, "min")))
    return out


def _tangent_points(f, pts, lo, hi):
    out = []
    for z in pts:
        if not math.isfinite(float(f.deriv(z))):
            z = z + 1e-6 * (hi - lo) * (1 if z <= 0.5 * (lo + hi) else -1)
        out.append(z)
    return out


def _raw_envelope_cuts(f, lo, hi, n):
    pcs = f.pieces(lo, hi)
    curv = [c for _, _, c in pcs]
    if hi == lo:
        return [(0.0, float(f(lo)))]
    if all(c == "linear" for c in curv):
        return [_chord(f, lo, hi)]
    if all(c in ("convex", "linear") for c in curv):
        return [_tangent(f, z) for z in _tangent_points(f, np.linspace(lo, hi, max(n, 1)), lo, hi)]
    if all(c in ("concave", "linear") for c in curv):
        return [_chord(f, lo, hi)]
    if len(pcs) == 2 and curv == ["concave", "convex"]:
        c = pcs[0][1]
        flo = float(f(lo))

        def phi(z):
            return float(f(z)) - flo - float(f.deriv(z)) * (z - lo)

        if phi(hi) >= 0:
            return [_chord(f, lo, hi)]
        z = _bisect(phi, c, hi)
        m = float(f.deriv(z))
        cuts = [(m, flo - m * lo)]
        cuts += [_tangent(f, t) for t in np.linspace(z, hi, max(n, 2))[1:]]
        return cuts
    if len(pcs) == 2 and curv == ["convex", "concave"]:
        c = pcs[0][1]
        fhi = float(f(hi))

        def phi(w):
            return fhi - float(f(w)) - float(f.deriv(w)) * (hi - w)

        # phi >= 0 near lo when the tangent at lo passes below (hi, f(hi))
        if phi(lo) <= 0:
            return [_chord(f, lo, hi)]
        w = _bisect(lambda t: phi(t), lo, c)
        m = float(f.deriv(w))
        cuts = [(m, fhi - m * hi)]
        cuts += [_tangent(f, t) for t in np.linspace(lo, w, max(n, 2))[:-1]]
        return cuts
    raise DomainError(f"unsupported curvature pattern {curv}")


def univariate_hull(func, dom, n_tangents=3):
    """Outer approximation of ``{(x, t) : t = func(x), x in dom}``.

    Rows over ``(x, t)``: tangent cuts below on convex stretches, secants
    above on concave ones, and the tangency split for convexo-concave cases.
    """
    lo, hi = map(float, dom)
    func.check_domain(lo, hi)
    if lo == hi:
        return FacetSystem(np.zeros((0, 2)), np.zeros(0), np.array([[0.0, 1.0]]), np.array([float(func(lo))]))
    rows, rhs, tags = [], [], []
    for m, c in _convex_envelope_cuts(func, lo, hi, n_tangents):
        rows.append([m, -1.0])
        rhs.append(-c)
        tags.append("under")
    for m, c in _convex_envelope_cuts(_Negated(func), lo, hi, n_tangents):
        # -f >= m x + c  =>  t <= -m x - c
        rows.append([m, 1.0])
        rhs.append(-c)
        tags.append("over")
    fs = FacetSystem(np.array(rows), np.array(rhs))
    fs.tags = tags
    return fs


# --------------------------------------------------------------------------
# piecewise-linear estimators


@dataclass
class PiecewiseLinear:
    """Per-segment affine functions on uniform breakpoints.

    At an interior breakpoint the value is the min (under) or max (over) of
    the two adjacent pieces.
    """

    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    side: str  # "under" | "over"

    def __post_init__(self):
        self.breakpoints = np.asarray(self.breakpoints, dtype=float)
        self.slopes = np.asarray(self.slopes, dtype=float)
        self.intercepts = np.asarray(self.intercepts, dtype=float)
        if len(self.slopes) != max(len(self.breakpoints) - 1, 1):
            raise ValueError("one affine piece per segment required")

    def piece_values(self, x):
        return self.slopes * x + self.intercepts

    def segment_values(self, k, x):
        return self.slopes[k] * x + self.intercepts[k]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        bp = self.breakpoints
        nseg = len(self.slopes)
        k = np.clip(np.searchsorted(bp, x, side="right") - 1, 0, nseg - 1)
        val = self.slopes[k] * x + self.intercepts[k]
        # interior breakpoints: combine both adjacent pieces
        at = np.isin(x, bp[1:-1])
        if np.any(at):
            kl = np.clip(k - 1, 0, nseg - 1)
            other = self.slopes[kl] * x + self.intercepts[kl]
            comb = np.minimum if self.side == "under" else np.maximum
            val = np.where(at, comb(val, other), val)
        return val

    def segments(self):
        bp = self.breakpoints
        if len(bp) == 1:
            return [(bp[0], bp[0], self.slopes[0], self.intercepts[0])]
        return [(bp[k], bp[k + 1], self.slopes[k], self.intercepts[k]) for k in range(len(bp) - 1)]


def _extreme_offset(f, s, a, b, which):
    """min or max of ``f(x) - s*x`` over ``[a, b]``."""
    cands = [a, b]
    if b > a:
        for pa, pb, curv in f.pieces(a, b):
            if curv == "linear" or pb <= pa:
                continue
            ga = float(f.deriv(pa)) - s
            gb = float(f.deriv(pb)) - s
            if ga == 0.0:
                cands.append(pa)
            elif gb == 0.0:
                cands.append(pb)
            elif (ga < 0) != (gb < 0):
                if ga > 0:
                    z = _bisect(lambda t: float(f.deriv(t)) - s, pa, pb)
                else:
                    z = _bisect(lambda t: s - float(f.deriv(t)), pa, pb)
                cands.append(z)
                cands.extend([max(pa, z - 1e-9 * (pb - pa)), min(pb, z + 1e-9 * (pb - pa))])
    vals = [float(f(x)) - s * x for x in cands]
    if not all(map(math.isfinite, vals)):
        raise DomainError("non-finite function value on segment")
    return min(vals) if which == "min" else max(vals)


def pl_estimators(func, dom, n_breakpoints):
    """Piecewise-linear ``(under, over)`` estimators on uniform breakpoints."""
    if n_breakpoints < 2:
        raise ValueError("need at least 2 breakpoints")
    lo, hi = map(float, dom)
    func.check_domain(lo, hi)
    if lo == hi:
        v = float(func(lo))
        bp = np.array([lo])
        return (PiecewiseLinear(bp, [0.0], [v], "under"), PiecewiseLinear(bp, [0.0], [v], "over"))
    bp = np.linspace(lo, hi, n_breakpoints)
    us, ui, os_, oi = [], [], [], []
    for a, b in zip(bp[:-1], bp[1:]):
        curv = {c for _, _, c in func.pieces(a, b)} - {"linear"}
        chord = _chord(func, a, b)[0]
        tangent = float(func.deriv(0.5 * (a + b)))
        if curv == {"convex"}:
            su, so = tangent, chord
        elif curv == {"concave"}:
            su, so = chord, tangent
        else:
            su = so = chord
        us.append(su)
        ui.append(_extreme_offset(func, su, a, b, "min"))
        os_.append(so)
        oi.append(_extreme_offset(func, so, a, b, "max"))
    return PiecewiseLinear(bp, us, ui, "under"), PiecewiseLinear(bp, os_, oi, "over")


def identity_estimators(dom):
    """Exact estimators ``u(t) = o(t) = t`` with breakpoints at the bounds."""
    lo, hi = map(float, dom)
    bp = np.array([lo, hi]) if hi > lo else np.array([lo])
    return (PiecewiseLinear(bp, [1.0], [0.0], "under"), PiecewiseLinear(bp, [1.0], [0.0], "over"))


# --------------------------------------------------------------------------
# pentagon envelope


@dataclass(frozen=True)
class Pentagon:
    """Outer approximation of a function graph on ``[xlo, xhi]`` with vertices
    (in normalized abscissa ``s``) ``(0, fL), (p1, fL), (p2, b), (1, fU), (0, fU)``.
    """

    fL: float
    fU: float
    b: float
    p1: float
    p2: float
    xlo: float = 0.0
    xhi: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.p1 < self.p2 <= 1.0):
            raise ValueError("pentagon needs 0 <= p1 < p2 <= 1")
        if not (self.fL < self.b < self.fU):
            raise ValueError("pentagon needs fL < b < fU")
        if not self.xhi > self.xlo:
            raise ValueError("pentagon needs a nondegenerate x-interval")
        if self.r1 <= self.r2:
            raise ValueError("degenerate or non-convex pentagon: r1 <= r2")

    @property
    def r1(self):
        return (self.p2 - self.p1) / (self.b - self.fL)

    @property
    def r2(self):
        return (1.0 - self.p2) / (self.fU - self.b)

    @property
    def w(self):
        return 1.0 / (self.r1 - self.r2)

    @property
    def span(self):
        return self.xhi - self.xlo

    def vertices(self):
        s = np.array([0.0, self.p1, self.p2, 1.0, 0.0])
        t = np.array([self.fL, self.fL, self.b, self.fU, self.fU])
        return np.column_stack([self.xlo + s * self.span, t])

    def inequalities(self):
        """Rows over ``(x, t)`` describing the pentagon."""
        v = self.vertices()
        rows, rhs = [], []
        for i in range(5):
            a, c = v[i], v[(i + 1) % 5]
            n = np.array([c[1] - a[1], -(c[0] - a[0])])
            if np.linalg.norm(n) == 0:
                continue
            rows.append(n)
            rhs.append(n @ a)
        return FacetSystem(np.array(rows), np.array(rhs))


def pentagon_envelope(P1, P2):
    """Convex and concave envelope of ``t1*t2`` over ``P1 x P2``.

    Rows over ``(x1, x2, t1, t2, mu)``: six ``mu >= alpha.(x, t) + c`` and six
    ``mu <= beta.(x, t) + d`` pieces, computed on the unit abscissa and then
    mapped back to each pentagon's x-interval.
    """
    f1L, f1U, b1, r11, r12, w1 = P1.fL, P1.fU, P1.b, P1.r1, P1.r2, P1.w
    f2L, f2U, b2, r21, r22, w2 = P2.fL, P2.fU, P2.b, P2.r1, P2.r2, P2.w
    p21 = P2.p1
    alpha = np.array([
        [0, 0, f2U, f1U],
        [0, 0, f2L, f1L],
        [(f2U - f2L) * w1, 0, f2L - r12 * (f2U - f2L) * w1, b1],
        [0, (f1U - f1L) * w2, b2, f1L - r22 * (f1U - f1L) * w2],
        [(f2U - b2) * w1, (f1U - b1) * w2, b2 - r12 * (f2U - b2) * w1, b1 - r22 * (f1U - b1) * w2],
        [(b2 - f2L) * w1, (b1 - f1L) * w2, b2 - r11 * (b2 - f2L) * w1, b1 - r21 * (b1 - f1L) * w2],
    ], dtype=float)
    c = f1U * f2L - (alpha[:, 0] + alpha[:, 1] * p21 + alpha[:, 2] * f1U + alpha[:, 3] * f2L)
    beta = np.array([
        [0, 0, f2U, f1L],
        [0, 0, f2L, f1U],
        [(f2L - f2U) * w1, 0, f2L - r11 * (f2L - f2U) * w1, b1],
        [0, (f1L - f1U) * w2, b2, f1L - r21 * (f1L - f1U) * w2],
        [(f2L - b2) * w1, (b1 - f1U) * w2, b2 - r12 * (f2L - b2) * w1, b1 - r21 * (b1 - f1U) * w2],
        [(b2 - f2U) * w1, (f1L - b1) * w2, b2 - r11 * (b2 - f2U) * w1, b1 - r22 * (f1L - b1) * w2],
    ], dtype=float)
    d = f1U * f2U - (beta[:, 0] + beta[:, 1] + beta[:, 2] * f1U + beta[:, 3] * f2U)
    # s_i = (x_i - xlo_i) / span_i
    scale = np.array([1.0 / P1.span, 1.0 / P2.span, 1.0, 1.0])
    shift = np.array([P1.xlo / P1.span, P2.xlo / P2.span, 0.0, 0.0])
    alpha_x, c_x = alpha * scale, c - alpha @ shift
    beta_x, d_x = beta * scale, d - beta @ shift
    A = np.vstack([
        np.column_stack([alpha_x, -np.ones(6)]),
        np.column_stack([-beta_x, np.ones(6)]),
    ])
    b = np.concatenate([-c_x, d_x])
    fs = FacetSystem(A, b)
    fs.tags = ["under"] * 6 + ["over"] * 6
    return fs


def pentagon_lift(P1, P2):
    """The 25 points ``(x1, x2, t1, t2, t1*t2)`` over vertex pairs."""
    V1, V2 = P1.vertices(), P2.vertices()
    return np.array([[a[0], b[0], a[1], b[1], a[1] * b[1]] for a in V1 for b in V2])

"""Axis-aligned outer approximations of feasible regions.

Three voxelizers are provided:

* ``outer_approx``: recursive interval splitting of a box.
* ``approx_projection`` followed by ``boundary_voxelize``: an outer polygon of
  the projection of a linear system onto two variables, covered by boxes.
* ``quadtree_voxelize``: quadtree refinement of a coarse grid using interval
  inside/outside tests.

All of them return an :class:`AxisRegion` that contains every feasible point.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import AxisRegion, Box, polygon_area, sort_clockwise
from .interval import InfeasibleError, Interval, IntervalError, forward_propagate
from .lp import solve

logger = logging.getLogger(__name__)

THIN_INFLATE = 1e-9
GAP_TOL = 1e-9


class VoxelError(ValueError):
    pass


@dataclass(frozen=True)
class VoxelConfig:
    epsilon: float = 1e-3
    n_max: int = 5
    n_v: int = 5
    grid: tuple = (3, 3)
    fill: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.n_max < 0:
            raise ValueError("n_max must be >= 0")
        if self.n_v < 1:
            raise ValueError("n_v must be >= 1")
        if len(self.grid) != 2 or min(self.grid) < 2:
            raise ValueError("grid sizes must be >= 2")


# --------------------------------------------------------------------------
# interval tests shared by the splitting and quadtree voxelizers


def constraint_ranges(dag, store, pinned):
    """Intervals of every constraint function ``g_j`` (``g_j <= 0`` feasible)
    when the nodes in ``pinned`` are restricted to the given intervals.

    Two-sided root bounds give two functions.  If pinning makes the bound
    store empty, a single certified-positive interval is returned.  Only the
    variable bounds of ``store`` are used: operator nodes tightened by the
    constraints themselves would make every box look certified inside.
    """
    leaves = {n.id: store[n.id] for n in dag.nodes if n.op == "var" and n.id in store}
    pins = {}
    for nid, iv in pinned.items():
        old = store.get(nid)
        try:
            pins[nid] = iv if old is None else iv.intersect(old, nid)
        except InfeasibleError:
            return [Interval(1.0, 1.0)]
    try:
        out = forward_propagate(dag, leaves, pinned=pins)
    except (InfeasibleError, IntervalError):
        return [Interval(1.0, 1.0)]
    ranges = []
    for rb in dag.constraints:
        body = out[rb.root]
        if math.isfinite(rb.hi):
            ranges.append(body - Interval.point(rb.hi))
        if math.isfinite(rb.lo):
            ranges.append(Interval.point(rb.lo) - body)
    return ranges


def dag_range_fn(dag, store, target_ids):
    """Range function over boxes in the coordinates ``target_ids``."""
    def range_fn(box):
        pinned = {nid: Interval(a, b) for nid, a, b in zip(target_ids, box.lo, box.hi)}
        return constraint_ranges(dag, store, pinned)
    return range_fn


def _classify(ranges):
    """'inside' if every upper bound is <= 0, 'outside' if some lower bound
    is > 0, else 'unknown'."""
    if any(r.lo > 0.0 for r in ranges):
        return "outside"
    if all(r.hi <= 0.0 for r in ranges):
        return "inside"
    return "unknown"


# --------------------------------------------------------------------------
# recursive splitting


def _split_box(box):
    mid = [(a + b) / 2 for a, b in zip(box.lo, box.hi)]
    out = []
    for choice in itertools.product((0, 1), repeat=box.dim):
        lo = [box.lo[i] if c == 0 else mid[i] for i, c in enumerate(choice)]
        hi = [mid[i] if c == 0 else box.hi[i] for i, c in enumerate(choice)]
        out.append(Box(lo, hi))
    return out


def outer_approx(range_fn, box, eps):
    """Outer approximation of ``{x in box : g(x) <= 0}`` by interval splitting.

    ``range_fn(box)`` returns a list of intervals enclosing each ``g_j`` over
    the box.  Certified-inside boxes are kept whole, certified-outside boxes
    are dropped, and the rest are halved along every axis until their
    diameter falls below ``eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if not all(math.isfinite(v) for v in box.lo + box.hi):
        raise VoxelError("outer_approx needs a finite box")
    kept = []
    stack = [box]
    while stack:
        b = stack.pop()
        verdict = _classify(range_fn(b))
        if verdict == "outside":
            continue
        if verdict == "inside" or b.diameter() < eps:
            kept.append(b)
        else:
            stack.extend(_split_box(b))
    logger.debug("outer_approx kept %d boxes", len(kept))
    return AxisRegion(kept)


# --------------------------------------------------------------------------
# approximated projection


@dataclass
class Projection:
    """Outer polygon of a projection plus the data that produced it."""

    vertices: np.ndarray  # clockwise outer polygon
    normals: np.ndarray  # supporting halfplanes n . z <= h
    offsets: np.ndarray
    support_points: np.ndarray  # LP optima, the inner hull's generators
    n_lps: int

    @property
    def area(self):
        return polygon_area(self.vertices)

    def bounding_box(self):
        return Box(self.vertices.min(axis=0), self.vertices.max(axis=0))


def _support(sys, names, direction):
    """Maximize ``direction . (x, y)`` over the system."""
    coeffs = {}
    for name, c in zip(names, direction):
        if c != 0.0:
            coeffs[name] = coeffs.get(name, 0.0) + float(c)
    sol = solve(sys, objective=coeffs, sense="max")
    if sol.status == "infeasible":
        raise InfeasibleError(None, math.nan, math.nan)
    if sol.status == "unbounded":
        raise VoxelError(f"projection unbounded along {list(direction)} for {names}")
    if not sol.ok:
        raise VoxelError(f"support LP failed with status {sol.status}")
    point = np.array([sol.x[n] for n in names])
    return float(np.dot(direction, point)), point


def clip_polygon(vertices, normal, offset):
    """Sutherland-Hodgman clip of a convex polygon by ``normal . z <= offset``."""
    out = []
    n = len(vertices)
    for i in range(n):
        p, q = vertices[i], vertices[(i + 1) % n]
        fp, fq = np.dot(normal, p) - offset, np.dot(normal, q) - offset
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    return np.array(out) if out else np.zeros((0, 2))


def _outer_polygon(normals, offsets, lo, hi):
    poly = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    for n, h in zip(normals, offsets):
        poly = clip_polygon(poly, n, h)
        if len(poly) == 0:
            break
    return poly


def _inner_edges(points):
    """Outward unit normals and offsets of the inner hull's edges."""
    pts = np.unique(np.round(points, 12), axis=0)
    if len(pts) == 1:
        return np.zeros((0, 2)), np.zeros(0)
    centred = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centred, tol=1e-10) < 2:
        # segment: both sides are candidate edges
        d = pts[-1] - pts[0]
        n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
        return np.array([n, -n]), np.array([n @ pts[0], -n @ pts[0]])
    poly = sort_clockwise(_hull2d(pts))
    normals, offsets = [], []
    for i in range(len(poly)):
        p, q = poly[i], poly[(i + 1) % len(poly)]
        d = q - p
        # clockwise order: outward normal is on the left of the travel direction
        n = np.array([-d[1], d[0]])
        norm = np.linalg.norm(n)
        if norm == 0:
            continue
        n = n / norm
        if n @ (poly.mean(axis=0) - p) > 0:
            n = -n
        normals.append(n)
        offsets.append(n @ p)
    return np.array(normals), np.array(offsets)


def _hull2d(pts):
    """Monotone-chain convex hull of 2-D points."""
    pts = sorted(map(tuple, pts))

    def turn(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and turn(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1])


def approx_projection(sys, targets, n_max=5, eps=1e-6):
    """Outer polygon of the projection of ``sys`` onto the two ``targets``.

    Starts from the four axis supports, then spends up to ``n_max`` LPs on
    the inner-hull edge whose supporting halfplane is farthest from the
    current outer polygon, stopping once that distance is below ``eps``.
    """
    names = list(targets)
    if len(names) != 2:
        raise ValueError("projection needs exactly two target variables")
    missing = [n for n in names if n not in sys.names]
    if missing:
        raise VoxelError(f"unknown target variables {missing}")
    normals, offsets, points = [], [], []
    n_lps = 0
    for d in ([1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]):
        h, p = _support(sys, names, np.array(d))
        n_lps += 1
        normals.append(np.array(d))
        offsets.append(h)
        points.append(p)
    lo = np.array([-offsets[1], -offsets[3]])
    hi = np.array([offsets[0], offsets[2]])
    confirmed = []
    for _ in range(n_max):
        outer = _outer_polygon(normals[4:], offsets[4:], lo, hi)
        inner_n, inner_h = _inner_edges(np.array(points))
        best, best_gap = None, eps
        for n, h in zip(inner_n, inner_h):
            if any(np.allclose(n, c, atol=1e-9) for c in confirmed):
                continue
            gap = float(np.max(outer @ n) - h) if len(outer) else 0.0
            if gap >= best_gap:
                best, best_gap = (n, h), gap
        if best is None:
            break
        n, h_inner = best
        h, p = _support(sys, names, n)
        n_lps += 1
        if h - h_inner <= max(eps, GAP_TOL * (1 + abs(h))):
            # the inner edge is a true edge of the projection
            confirmed.append(n)
        normals.append(n)
        offsets.append(h)
        points.append(p)
    outer = _outer_polygon(normals[4:], offsets[4:], lo, hi)
    if len(outer):
        outer = sort_clockwise(_dedupe_ring(outer))
    return Projection(outer, np.array(normals), np.array(offsets), np.array(points), n_lps)


def _dedupe_ring(poly, tol=1e-12):
    keep = []
    for p in poly:
        if not any(np.max(np.abs(p - q)) <= tol for q in keep):
            keep.append(p)
    return np.array(keep)


# --------------------------------------------------------------------------
# boundary voxelization


def _inflate(lo, hi, delta, clip_lo, clip_hi):
    """Give zero-width sides a small positive width, staying inside the clip box."""
    lo, hi = lo.copy(), hi.copy()
    for i in range(2):
        if hi[i] - lo[i] < delta:
            lo[i] = max(lo[i] - delta, clip_lo[i])
            hi[i] = min(hi[i] + delta, clip_hi[i])
    return lo, hi


def _vertical_extent(poly, x):
    """Min and max ``y`` of a convex polygon on the vertical line at ``x``."""
    ys = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        a, b = min(p[0], q[0]), max(p[0], q[0])
        if x < a - 1e-12 or x > b + 1e-12:
            continue
        if b - a <= 1e-15:
            ys.extend([p[1], q[1]])
        else:
            t = (x - p[0]) / (q[0] - p[0])
            ys.append(p[1] + t * (q[1] - p[1]))
    return (min(ys), max(ys)) if ys else None


def boundary_voxelize(vertices, n_v=5, fill=True):
    """Cover a convex polygon's boundary with ``n_v`` boxes per edge.

    Edge ``(V_i, V_{i+1})`` contributes the boxes with diagonal corners
    ``V_i + j/n_v (V_{i+1} - V_i)`` and ``V_i + (j+1)/n_v (V_{i+1} - V_i)``.
    With ``fill`` the interior is added as vertical strips, so the region
    contains the whole polygon.
    """
    poly = sort_clockwise(np.asarray(vertices, dtype=float))
    if len(poly) < 3:
        raise VoxelError("boundary voxelization needs at least 3 vertices")
    if n_v < 1:
        raise ValueError("n_v must be >= 1")
    clip_lo, clip_hi = poly.min(axis=0), poly.max(axis=0)
    diam = float(np.linalg.norm(clip_hi - clip_lo))
    delta = THIN_INFLATE * max(diam, 1.0)
    boxes = []
    xs = set()
    for i in range(len(poly)):
        p, q = poly[i], poly[(i + 1) % len(poly)]
        for j in range(n_v):
            a = p + j / n_v * (q - p)
            b = p + (j + 1) / n_v * (q - p)
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            xs.update((lo[0], hi[0]))
            lo, hi = _inflate(lo, hi, delta, clip_lo, clip_hi)
            boxes.append(Box(lo, hi))
    if fill:
        xs = sorted(xs)
        for xa, xb in zip(xs, xs[1:]):
            if xb - xa <= 1e-15:
                continue
            ea, eb = _vertical_extent(poly, xa), _vertical_extent(poly, xb)
            if ea is None or eb is None:
                continue
            # lower boundary is convex and upper concave, so these bound the strip
            ylo, yhi = max(ea[0], eb[0]), min(ea[1], eb[1])
            if yhi > ylo:
                boxes.append(Box((xa, ylo), (xb, yhi)))
    tol = 1e-12 * max(diam, 1.0)
    return AxisRegion(boxes, tol=tol)


# --------------------------------------------------------------------------
# quadtree voxelization


def quadtree_cells(range_fn, bbox, grid=(3, 3), points=None):
    """Quadtree refinement over a ``p x q`` grid on ``bbox``.

    ``range_fn(box)`` returns interval enclosures of the constraint
    functions.  A subgrid is certified inside, pruned as certified outside,
    kept as an unresolved leaf when it spans a single grid interval in some
    axis, or split at its middle indices.  ``points`` may give explicit grid
    coordinates per axis.  Returns a list of ``(box, status)`` pairs with
    status ``inside``, ``leaf`` or ``pruned``.
    """
    if points is None:
        points = [np.linspace(a, b, k) for a, b, k in zip(bbox.lo, bbox.hi, grid)]
    gx, gy = (np.asarray(p, dtype=float) for p in points)
    if len(gx) < 2 or len(gy) < 2:
        raise ValueError("grid needs at least two points per axis")
    out = []
    queue = [(0, len(gx) - 1, 0, len(gy) - 1)]
    while queue:
        il, iu, jl, ju = queue.pop(0)
        box = Box((gx[il], gy[jl]), (gx[iu], gy[ju]))
        verdict = _classify(range_fn(box))
        if verdict == "outside":
            out.append((box, "pruned"))
        elif verdict == "inside":
            out.append((box, "inside"))
        elif iu - il <= 1 or ju - jl <= 1:
            out.append((box, "leaf"))
        else:
            im, jm = (il + iu) // 2, (jl + ju) // 2
            queue.extend([(il, im, jl, jm), (im, iu, jl, jm), (il, im, jm, ju), (im, iu, jm, ju)])
    return out


def quadtree_voxelize(range_fn, bbox, grid=(3, 3), points=None):
    """Union of the inside and unresolved cells of :func:`quadtree_cells`."""
    cells = quadtree_cells(range_fn, bbox, grid, points)
    return AxisRegion([b for b, status in cells if status != "pruned"])

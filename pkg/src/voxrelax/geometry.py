"""Axis-aligned regions, corner points, grid covers, convex hulls and the
convex-extension Markov chain.

Regions are finite unions of boxes in n dimensions.  The chain writes every
decomposition point of a region as a convex combination of its corner
points while preserving multilinear function values; it is used as a
verification oracle, the relaxation itself only needs corners and hulls.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

logger = logging.getLogger(__name__)

POINT_TOL = 1e-9
HULL_TOL = 1e-7


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise ValueError("box corner dimensions differ")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"inverted box {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    def vertices(self):
        return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=float)

    def contains(self, pts, tol=POINT_TOL):
        pts = np.atleast_2d(pts)
        return np.all((pts >= np.array(self.lo) - tol) & (pts <= np.array(self.hi) + tol), axis=1)

    def intersect(self, other):
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(a > b for a, b in zip(lo, hi)):
            return None
        return Box(lo, hi)

    def diameter(self):
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))


def dedupe_points(pts, tol=POINT_TOL):
    """Remove points within ``tol`` (max-norm) of an earlier point, keeping order."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if len(pts) == 0:
        return pts
    keep = []
    for i, p in enumerate(pts):
        if not any(np.max(np.abs(pts[j] - p)) <= tol for j in keep):
            keep.append(i)
    return pts[keep]


@dataclass
class AxisRegion:
    """Finite union of boxes.  An empty list is allowed and means the empty set.

    ``tol`` is the coordinate tolerance used when comparing points during
    corner extraction.
    """
    boxes: list
    tol: float = POINT_TOL
    _disc: np.ndarray = field(default=None, init=False, repr=False)
    _corner: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.boxes = [b if isinstance(b, Box) else Box(*b) for b in self.boxes]
        dims = {b.dim for b in self.boxes}
        if len(dims) > 1:
            raise ValueError("boxes of mixed dimension")

    @property
    def is_empty(self):
        return not self.boxes

    @property
    def dim(self):
        if self.is_empty:
            raise ValueError("empty region has no dimension")
        return self.boxes[0].dim

    def __len__(self):
        return len(self.boxes)

    def lo_hi(self):
        lo = np.array([b.lo for b in self.boxes])
        hi = np.array([b.hi for b in self.boxes])
        return lo, hi

    def bounding_box(self):
        lo, hi = self.lo_hi()
        return Box(lo.min(axis=0), hi.max(axis=0))

    def contains(self, pts, tol=POINT_TOL):
        pts = np.atleast_2d(pts)
        if self.is_empty:
            return np.zeros(len(pts), dtype=bool)
        lo, hi = self.lo_hi()
        inside = (pts[:, None, :] >= lo[None] - tol) & (pts[:, None, :] <= hi[None] + tol)
        return np.any(np.all(inside, axis=2), axis=1)

    def to_json(self):
        corners = [] if self.is_empty else corner_points(self).tolist()
        return {"boxes": [[list(b.lo), list(b.hi)] for b in self.boxes], "corners": corners}


def disc_points(h):
    """Vertices of the stored boxes, deduplicated at the region's tolerance."""
    if h._disc is None:
        h._disc = dedupe_points(np.vstack([b.vertices() for b in h.boxes]), h.tol)
    return h._disc


def _slice_extremes(h, pts, tol=None):
    """Per point and axis, the min and max of the region's slice through it.

    Returns ``(smin, smax)`` of shape (npts, dim); NaN where the slice is empty.
    """
    tol = h.tol if tol is None else tol
    lo, hi = h.lo_hi()
    pts = np.atleast_2d(pts)
    inside = (pts[:, None, :] >= lo[None] - tol) & (pts[:, None, :] <= hi[None] + tol)
    count = inside.sum(axis=2)
    d = h.dim
    smin = np.full(pts.shape, np.nan)
    smax = np.full(pts.shape, np.nan)
    for i in range(d):
        # boxes containing the point in all coordinates except i
        others = (count - inside[:, :, i]) == d - 1
        lo_i = np.where(others, lo[None, :, i], np.inf).min(axis=1)
        hi_i = np.where(others, hi[None, :, i], -np.inf).max(axis=1)
        ok = others.any(axis=1)
        smin[ok, i] = lo_i[ok]
        smax[ok, i] = hi_i[ok]
    return smin, smax


def corner_points(h, tol=None):
    """Disc points that are extreme in the slice through them along every axis."""
    tol = h.tol if tol is None else tol
    if h._corner is None:
        disc = disc_points(h)
        smin, smax = _slice_extremes(h, disc, tol)
        extreme = (np.abs(disc - smin) <= tol) | (np.abs(disc - smax) <= tol)
        h._corner = disc[np.all(extreme, axis=1)]
    return h._corner


def grid_cover(h, grid, tol=None):
    """Cells of the grid cover of ``h``: for every grid cell meeting ``h``,
    the region ``cell ∩ h``.  Cells whose intersection is lower dimensional
    than the box it came from are dropped unless that box is itself flat."""
    tol = h.tol if tol is None else tol
    grid = [np.unique(np.asarray(g, dtype=float)) for g in grid]
    if len(grid) != h.dim:
        raise ValueError("grid dimension mismatch")
    bb = h.bounding_box()
    for g, a, b in zip(grid, bb.lo, bb.hi):
        if g[0] > a + tol or g[-1] < b - tol:
            raise ValueError("grid does not cover the region's bounding box")
    cells = []
    for idx in itertools.product(*[range(max(len(g) - 1, 1)) for g in grid]):
        cell = Box([g[k] for g, k in zip(grid, idx)],
                   [g[min(k + 1, len(g) - 1)] for g, k in zip(grid, idx)])
        parts = []
        for box in h.boxes:
            inter = cell.intersect(box)
            if inter is None:
                continue
            flat_ok = all(
                (ih - il) > tol or (bh - bl) <= tol
                for il, ih, bl, bh in zip(inter.lo, inter.hi, box.lo, box.hi)
            )
            if flat_ok:
                parts.append(inter)
        if parts:
            cells.append(AxisRegion(parts, tol=h.tol))
    return cells


# --------------------------------------------------------------------------
# convex-extension Markov chain


@dataclass
class CornerChain:
    states: np.ndarray  # (k, dim)
    T: np.ndarray  # (k, k) row-stochastic
    absorbing: np.ndarray  # indices

    def index(self, point, tol=POINT_TOL):
        d = np.max(np.abs(self.states - np.asarray(point, dtype=float)), axis=1)
        i = int(np.argmin(d))
        if d[i] > tol:
            raise KeyError(f"{point} is not a chain state")
        return i

    @property
    def transient(self):
        mask = np.ones(len(self.states), dtype=bool)
        mask[self.absorbing] = False
        return np.nonzero(mask)[0]


def build_corner_chain(h, tol=POINT_TOL):
    """Build the chain: every non-corner state splits along the smallest
    axis on which it is not slice-extreme, into the two slice ends."""
    states = [tuple(p) for p in disc_points(h)]
    index = {s: i for i, s in enumerate(states)}
    stack = list(states)
    rows = {}
    while stack:
        v = stack.pop()
        smin, smax = _slice_extremes(h, np.array([v]), tol)
        smin, smax = smin[0], smax[0]
        axis = None
        for i in range(h.dim):
            if abs(v[i] - smin[i]) > tol and abs(v[i] - smax[i]) > tol:
                axis = i
                break
        if axis is None:
            rows[v] = {v: 1.0}
            continue
        a, b = smin[axis], smax[axis]
        vl = v[:axis] + (float(a),) + v[axis + 1:]
        vr = v[:axis] + (float(b),) + v[axis + 1:]
        for u in (vl, vr):
            if u not in index:
                index[u] = len(states)
                states.append(u)
                stack.append(u)
        lam = (b - v[axis]) / (b - a)
        rows[v] = {vl: lam, vr: 1.0 - lam}
    k = len(states)
    T = np.zeros((k, k))
    for v, row in rows.items():
        for u, p in row.items():
            T[index[v], index[u]] += p
    absorbing = np.array([i for i in range(k) if T[i, i] == 1.0], dtype=int)
    return CornerChain(np.array(states, dtype=float), T, absorbing)


def limiting_matrix(chain):
    """``T* = lim T^t`` for an absorbing chain via the fundamental matrix."""
    T = chain.T
    k = len(T)
    trans = chain.transient
    absn = chain.absorbing
    Ts = np.zeros((k, k))
    Ts[absn, absn] = 1.0
    if len(trans):
        Q = T[np.ix_(trans, trans)]
        R = T[np.ix_(trans, absn)]
        A = np.eye(len(trans)) - Q
        if np.linalg.matrix_rank(A) < len(trans):
            raise ValueError("chain is not absorbing: I - Q is singular")
        Ts[np.ix_(trans, absn)] = np.linalg.solve(A, R)
    return Ts


def corner_decompose(x, h, chain=None, tstar=None, tol=POINT_TOL):
    """Convex multipliers of ``x`` over the corner points of ``h``.

    Returns ``(points, weights)``.  Multilinear interpolation over a box
    containing ``x`` is composed with the chain's limiting distribution.
    """
    x = np.asarray(x, dtype=float)
    box = next((b for b in h.boxes if b.contains(x, tol)[0]), None)
    if box is None:
        raise ValueError(f"point {x.tolist()} is not in the region")
    chain = chain or build_corner_chain(h, tol)
    tstar = limiting_matrix(chain) if tstar is None else tstar
    acc = np.zeros(len(chain.states))
    lo, hi = np.array(box.lo), np.array(box.hi)
    span = hi - lo
    frac = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    for choice in itertools.product((0, 1), repeat=h.dim):
        w = 1.0
        for j, c in enumerate(choice):
            w *= frac[j] if c else 1.0 - frac[j]
        if w == 0.0:
            continue
        v = np.where(np.array(choice) == 1, hi, lo)
        acc += w * tstar[chain.index(v, tol)]
    keep = np.nonzero(acc > 1e-15)[0]
    return chain.states[keep], acc[keep]


# --------------------------------------------------------------------------
# facet systems and hulls


@dataclass
class FacetSystem:
    """Polyhedron ``{z : A z <= b, E z = f}``."""

    A: np.ndarray
    b: np.ndarray
    E: np.ndarray = None
    f: np.ndarray = None
    tags: list = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        if self.A.ndim != 2:
            raise ValueError("facet matrix must be 2-D; use np.zeros((0, d)) when empty")
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        d = self.A.shape[1]
        self.E = np.zeros((0, d)) if self.E is None else np.asarray(self.E, dtype=float).reshape(-1, d)
        self.f = np.zeros(0) if self.f is None else np.asarray(self.f, dtype=float).reshape(-1)

    @property
    def dim(self):
        return self.A.shape[1]

    def __len__(self):
        return len(self.A)

    def violation(self, pts):
        """Max constraint violation per point."""
        pts = np.atleast_2d(pts)
        v = np.zeros(len(pts))
        if len(self.A):
            v = np.maximum(v, (pts @ self.A.T - self.b).max(axis=1))
        if len(self.E):
            v = np.maximum(v, np.abs(pts @ self.E.T - self.f).max(axis=1))
        return v

    def contains(self, pts, tol=HULL_TOL):
        return self.violation(pts) <= tol

    def normalized(self):
        """Rows scaled to unit normals and sorted; equalities sign-fixed."""
        A, b = _unit_rows(self.A, self.b)
        E, f = _unit_rows(self.E, self.f)
        for i in range(len(E)):
            k = np.nonzero(np.abs(E[i]) > 1e-12)[0]
            if len(k) and E[i, k[0]] < 0:
                E[i], f[i] = -E[i], -f[i]
        order = np.lexsort(np.column_stack([A, b]).T[::-1]) if len(A) else []
        return FacetSystem(A[order], b[order], E, f)

    def restrict(self, mask):
        return FacetSystem(self.A[mask], self.b[mask], self.E, self.f)

    def to_json(self):
        return {"A": self.A.tolist(), "b": self.b.tolist(), "E": self.E.tolist(), "f": self.f.tolist()}


def _unit_rows(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(A) == 0:
        return A.copy(), b.copy()
    n = np.linalg.norm(A, axis=1)
    n[n == 0] = 1.0
    return A / n[:, None], b / n


def dedupe_facets(A, b, tol=1e-8):
    """Drop rows whose unit normal and offset match an earlier row."""
    A, b = _unit_rows(A, b)
    keep = []
    for i in range(len(A)):
        dup = False
        for j in keep:
            if A[i] @ A[j] > 1 - tol and abs(b[i] - b[j]) <= 1e-7 * (1 + abs(b[j])):
                dup = True
                break
        if not dup:
            keep.append(i)
    return A[keep], b[keep]


def same_polytope(fs1, fs2, tol=1e-7):
    """Facet-set equality after normalization (within ``tol``)."""
    a, b = fs1.normalized(), fs2.normalized()
    if len(a.A) != len(b.A) or len(a.E) != len(b.E):
        return False
    for row, off in zip(a.A, a.b):
        if not np.any((np.abs(b.A - row).max(axis=1) <= tol) & (np.abs(b.b - off) <= tol)):
            return False
    if len(a.E):
        # equality spaces compared through projectors
        Pa = a.E.T @ np.linalg.pinv(a.E.T)
        Pb = b.E.T @ np.linalg.pinv(b.E.T)
        if np.abs(Pa - Pb).max() > tol:
            return False
    return True


def quickhull(points, rank_tol=1e-10):
    """Facets of the convex hull of a point set in dimension 2 to 5.

    Degenerate inputs are handled in their affine hull: the returned system
    carries the affine-hull equalities plus the facets of the lower
    dimensional hull.  Offsets are set to the max over the input points, so
    every input point satisfies every facet and each facet is tight.
    """
    pts = dedupe_points(np.asarray(points, dtype=float))
    n, d = pts.shape
    if n == 0:
        raise ValueError("empty point set")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    unit = (pts - lo) / span
    center = unit.mean(axis=0)
    _, s, vt = np.linalg.svd(unit - center, full_matrices=True)
    smax = s[0] if len(s) else 0.0
    rank = int(np.sum(s > rank_tol * max(smax, 1.0))) if smax > 0 else 0
    basis, comp = vt[:rank], vt[rank:]
    if rank == 0:
        normals_u = np.zeros((0, d))
    elif rank == 1:
        normals_u = np.vstack([basis[0], -basis[0]])
    else:
        proj = (unit - center) @ basis.T
        try:
            hull = ConvexHull(proj)
        except QhullError:
            hull = ConvexHull(proj, qhull_options="QJ")
        normals_u = hull.equations[:, :-1] @ basis
    # map normals back: a·u <= c with u = (z - lo)/span  =>  (a/span)·z <= ...
    A = normals_u / span
    E = comp / span
    A = A[np.linalg.norm(A, axis=1) > 0]
    vals = pts @ A.T
    b = vals.max(axis=0) if len(A) else np.zeros(0)
    A, b = dedupe_facets(A, b)
    # recompute offsets after normalization so every facet is tight
    b = (pts @ A.T).max(axis=0) if len(A) else b
    E, _ = _unit_rows(E, np.zeros(len(E)))
    f = (pts @ E.T).mean(axis=0) if len(E) else np.zeros(0)
    return FacetSystem(A, b, E, f)


def polygon_area(vertices):
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def sort_clockwise(vertices):
    """Sort 2-D points clockwise around their centroid, ties by distance."""
    v = np.asarray(vertices, dtype=float)
    c = v.mean(axis=0)
    ang = np.arctan2(v[:, 1] - c[1], v[:, 0] - c[0])
    dist = np.linalg.norm(v - c, axis=1)
    order = np.lexsort((dist, -ang))
    return v[order]

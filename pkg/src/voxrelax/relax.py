"""Linear relaxations of factorable models.

``build_base`` relaxes every operator node over interval bounds of its
operands (McCormick for products and quotients, tangent/secant cuts for
univariate functions).  ``build_vr`` adds, for every product node, the
convex hull of lifted corner points of an axis-aligned outer approximation
of the operands' joint domain.  ``relax`` runs the full pipeline with bound
tightening and returns the bound in the model's own sense.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .envelopes import DomainError, Univariate, identity_estimators, mccormick, pl_estimators, univariate_hull
from .expr import Model, normalize
from .geometry import AxisRegion, Box, corner_points, grid_cover, quickhull
from .interval import InfeasibleError, Interval, forward_propagate, inverse_propagate
from .lp import LinearSystem, solve
from .voxel import (VoxelConfig, VoxelError, approx_projection, boundary_voxelize, dag_range_fn,
                    quadtree_voxelize)

logger = logging.getLogger(__name__)

__all__ = ["LinearSystem", "RelaxConfig", "RelaxError", "RelaxResult", "build_base", "build_vr",
           "relax_product_node", "duality_range_reduction", "obbt", "relax", "node_values"]

MODES = ("fp", "base", "vr")
VOXELIZERS = ("projection", "quadtree", "box")
UNIVARIATE_OPS = ("pow", "exp", "log")


class RelaxError(ValueError):
    """The model cannot be relaxed (e.g. an unbounded operand)."""


@dataclass(frozen=True)
class RelaxConfig:
    """Relaxation settings.  ``fp`` turns off every bound-tightening step."""

    mode: str = "vr"
    n_breakpoints: int = 9
    voxel: VoxelConfig = field(default_factory=VoxelConfig)
    voxelizer: str = "projection"
    iterations: int = 1
    n_tangents: int = 3
    fbbt: bool = True
    duality_reduction: bool = True
    obbt: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.voxelizer not in VOXELIZERS:
            raise ValueError(f"voxelizer must be one of {VOXELIZERS}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.n_breakpoints < 2:
            raise ValueError("n_breakpoints must be >= 2")
        if self.n_tangents < 1:
            raise ValueError("n_tangents must be >= 1")

    @property
    def tightening(self):
        return self.mode != "fp"

    def with_mode(self, mode):
        return replace(self, mode=mode)


def _univariate(node):
    if node.op == "pow":
        return Univariate("pow", float(node.value))
    return Univariate(node.op)


def _domain(func, iv):
    """Operand interval restricted to where ``func`` is defined."""
    lo, hi = iv.lo, iv.hi
    if func.kind == "pow" and not func.is_int_power:
        lo = max(lo, 0.0)
    return lo, hi


class _Terms:
    """Maps DAG node ids to LP variable names or constant values."""

    def __init__(self, dag):
        self.dag = dag

    def __call__(self, nid):
        node = self.dag.nodes[nid]
        if node.op == "const":
            return float(node.value)
        return self.dag.label(nid)


def _add_rows(sys, terms, fs, tag):
    """Add a FacetSystem whose columns are LP names or constants."""
    def emit(coeffs_row, sense, rhs):
        coeffs = {}
        for t, a in zip(terms, coeffs_row):
            if a == 0.0:
                continue
            if isinstance(t, str):
                coeffs[t] = coeffs.get(t, 0.0) + float(a)
            else:
                rhs -= a * t
        if coeffs:
            sys.add_row(coeffs, sense, float(rhs), tag=tag)
        elif (sense == "<=" and rhs < -1e-9) or (sense == "=" and abs(rhs) > 1e-9):
            raise InfeasibleError(None, rhs, rhs)
    for row, rhs in zip(fs.A, fs.b):
        emit(row, "<=", rhs)
    for row, rhs in zip(fs.E, fs.f):
        emit(row, "=", rhs)


def _finite(iv):
    return math.isfinite(iv.lo) and math.isfinite(iv.hi)


def _need_finite(dag, nid, store, what):
    iv = store[nid]
    if not _finite(iv):
        raise RelaxError(f"unbounded operand {dag.label(nid)} in {iv} at {what} node")
    return iv


def build_base(dag, store, cfg=None, extra_stores=()):
    """Factorable relaxation of ``dag`` over the interval bounds in ``store``.

    ``extra_stores`` are looser stores (e.g. before tightening) whose
    univariate cuts are added as well; McCormick over the tighter box
    already dominates the looser one.
    """
    cfg = cfg or RelaxConfig(mode="base")
    term = _Terms(dag)
    sys = LinearSystem()
    for node in dag.nodes:
        if node.op == "var" or dag.is_aux(node.id):
            iv = store[node.id]
            sys.add_var(dag.label(node.id), iv.lo, iv.hi)
    for node in dag.nodes:
        if not dag.is_aux(node.id):
            continue
        nid = node.id
        t = dag.label(nid)
        if node.op == "affine":
            coeffs = {t: -1.0}
            rhs = -node.value
            for c, ch in zip(node.coeffs, node.children):
                v = term(ch)
                if isinstance(v, str):
                    coeffs[v] = coeffs.get(v, 0.0) + c
                else:
                    rhs -= c * v
            sys.add_row(coeffs, "=", rhs, tag="model-linear")
        elif node.op in ("mul", "div"):
            if node.op == "mul":
                a, b = node.children
                cols = [term(a), term(b), t]
                box_a, box_b = a, b
            else:
                # t = a / b is relaxed as t * b = a
                a, b = node.children
                cols = [t, term(b), term(a)]
                box_a, box_b = nid, b
            ia = _need_finite(dag, box_a, store, node.op)
            ib = _need_finite(dag, box_b, store, node.op)
            _add_rows(sys, cols, mccormick((ia.lo, ia.hi), (ib.lo, ib.hi)), "mccormick")
        elif node.op in UNIVARIATE_OPS:
            func = _univariate(node)
            ch = node.children[0]
            x = term(ch)
            seen = set()
            for st in (store,) + tuple(extra_stores):
                lo, hi = _domain(func, st[ch])
                if (lo, hi) in seen:
                    continue
                seen.add((lo, hi))
                if not (math.isfinite(lo) and math.isfinite(hi)):
                    if st is store:
                        raise RelaxError(f"unbounded operand {dag.label(ch)} at {node.op} node")
                    continue
                try:
                    fs = univariate_hull(func, (lo, hi), cfg.n_tangents)
                except DomainError as exc:
                    if st is store:
                        raise RelaxError(str(exc)) from exc
                    continue
                _add_rows(sys, [x, t], fs, "univariate")
        else:
            raise RelaxError(f"unsupported node op {node.op!r}")
    for rb in dag.constraints:
        _add_root_bound(sys, dag, term, rb)
    _set_objective(sys, dag, term)
    return sys


def _root_expr(dag, term, nid):
    """Linear expression (coeffs, const) of a root node over LP names."""
    node = dag.nodes[nid]
    if node.op == "affine" and not dag.is_aux(nid):
        coeffs, const = {}, float(node.value)
        for c, ch in zip(node.coeffs, node.children):
            v = term(ch)
            if isinstance(v, str):
                coeffs[v] = coeffs.get(v, 0.0) + c
            else:
                const += c * v
        return coeffs, const
    v = term(nid)
    if isinstance(v, str):
        return {v: 1.0}, 0.0
    return {}, v


def _add_root_bound(sys, dag, term, rb):
    coeffs, const = _root_expr(dag, term, rb.root)
    lo, hi = rb.lo - const, rb.hi - const
    if not coeffs:
        if lo > 1e-9 or hi < -1e-9:
            raise InfeasibleError(rb.root, lo, hi)
        return
    if lo == hi:
        sys.add_row(coeffs, "=", lo, tag="model-linear", name=rb.name or None)
        return
    if math.isfinite(hi):
        sys.add_row(coeffs, "<=", hi, tag="model-linear", name=rb.name or None)
    if math.isfinite(lo):
        sys.add_row(coeffs, ">=", lo, tag="model-linear", name=rb.name or None)


def _set_objective(sys, dag, term):
    """Minimize ``sign * (objective node + offset)``."""
    coeffs, const = _root_expr(dag, term, dag.objective)
    s = dag.objective_sign
    sys.set_objective({k: s * v for k, v in coeffs.items()}, s * (const + dag.objective_offset), "min")


# --------------------------------------------------------------------------
# product nodes


@dataclass
class _Operand:
    var: int  # node id of the voxelized variable
    under: object
    over: object


def _operand(dag, nid, store, n_breakpoints):
    """A univariate child is relaxed through its input with PL estimators;
    anything else through identity estimators on itself."""
    node = dag.nodes[nid]
    if node.op in UNIVARIATE_OPS and dag.nodes[node.children[0]].op != "const":
        func = _univariate(node)
        v = node.children[0]
        lo, hi = _domain(func, store[v])
        if math.isfinite(lo) and math.isfinite(hi):
            try:
                under, over = pl_estimators(func, (lo, hi), n_breakpoints)
                return _Operand(v, under, over)
            except DomainError:
                pass
    iv = store[nid]
    under, over = identity_estimators((iv.lo, iv.hi))
    return _Operand(nid, under, over)


def _clip_region(region, bbox):
    boxes = [b for b in (bx.intersect(bbox) for bx in region.boxes) if b is not None]
    return AxisRegion(boxes, tol=region.tol)


def _region(dag, sys, store, cfg, v1, v2, bbox):
    """Axis-aligned outer approximation of the (v1, v2) domain."""
    vc = cfg.voxel
    if cfg.voxelizer == "box":
        return AxisRegion([bbox])
    if cfg.voxelizer == "quadtree":
        region = quadtree_voxelize(dag_range_fn(dag, store, [v1, v2]), bbox, vc.grid)
        if region.is_empty:
            raise InfeasibleError(v1, math.nan, math.nan)
        return region
    try:
        proj = approx_projection(sys, (dag.label(v1), dag.label(v2)), vc.n_max, vc.epsilon)
    except VoxelError as exc:
        logger.debug("projection failed for (%s, %s): %s", dag.label(v1), dag.label(v2), exc)
        return AxisRegion([bbox])
    verts = proj.vertices
    if len(verts) < 3 or proj.area <= 1e-12 * max(bbox.volume(), 1e-300):
        if len(verts) == 0:
            raise InfeasibleError(v1, math.nan, math.nan)
        return _clip_region(AxisRegion([Box(verts.min(axis=0), verts.max(axis=0))]), bbox)
    return _clip_region(boundary_voxelize(verts, vc.n_v, vc.fill), bbox)


def lifted_points(region, op1, op2):
    """Four estimator products at every corner of every grid-cover cell."""
    grid = [op1.under.breakpoints, op2.under.breakpoints]
    pts = []
    for cell in grid_cover(region, grid):
        corners = corner_points(cell)
        if len(corners) == 0:
            continue
        mid = cell.bounding_box()
        k = []
        for axis, op in enumerate((op1, op2)):
            bp = op.under.breakpoints
            c = 0.5 * (mid.lo[axis] + mid.hi[axis])
            k.append(int(np.clip(np.searchsorted(bp, c, side="right") - 1, 0, len(op.under.slopes) - 1)))
        a, b = corners[:, 0], corners[:, 1]
        u1 = op1.under.segment_values(k[0], a)
        w1 = op1.over.segment_values(k[0], a)
        u2 = op2.under.segment_values(k[1], b)
        w2 = op2.over.segment_values(k[1], b)
        for p in (u1 * u2, u1 * w2, w1 * u2, w1 * w2):
            pts.append(np.column_stack([a, b, p]))
    return np.vstack(pts) if pts else np.zeros((0, 3))


def relax_product_node(nid, sys, dag, store, cfg, linking=None, geometry=None):
    """Add hull facets for one product (or quotient) node to ``sys``.

    The projection voxelizer reads linear constraints from ``linking``
    (default ``sys``).  If ``geometry`` is a list, a record of the region
    and hull is appended to it.  Returns the number of rows added; 0 when the node is skipped (constant
    operand, both operands over the same variable, or unbounded domains).
    """
    node = dag.nodes[nid]
    if node.op == "mul":
        operands, result = node.children, nid
    elif node.op == "div":
        # t = a / b  <=>  t * b = a
        operands, result = (nid, node.children[1]), node.children[0]
    else:
        raise ValueError(f"node {nid} is not a product")
    if any(dag.nodes[o].op == "const" for o in operands):
        return 0
    op1 = _operand(dag, operands[0], store, cfg.n_breakpoints)
    op2 = _operand(dag, operands[1], store, cfg.n_breakpoints)
    if op1.var == op2.var:
        logger.debug("node %s: operands share variable %s, kept McCormick only", nid, dag.label(op1.var))
        return 0
    i1, i2 = store[op1.var], store[op2.var]
    if not (_finite(i1) and _finite(i2)):
        return 0
    bbox = Box((i1.lo, i2.lo), (i1.hi, i2.hi))
    region = _region(dag, sys if linking is None else linking, store, cfg, op1.var, op2.var, bbox)
    pts = lifted_points(region, op1, op2)
    if len(pts) == 0:
        return 0
    fs = quickhull(pts)
    before = len(sys.rows)
    cols = [dag.label(op1.var), dag.label(op2.var), _Terms(dag)(result)]
    _add_rows(sys, cols, fs, "hull-facet")
    if geometry is not None:
        geometry.append({"node": dag.label(nid), "targets": cols[:2], "result": str(cols[2]),
                         "voxelizer": cfg.voxelizer, **region.to_json(),
                         "n_lifted": len(pts), "n_facets": len(fs.A) + len(fs.E)})
    return len(sys.rows) - before


def build_vr(dag, store, cfg=None, base=None, extra_stores=(), geometry=None):
    """Base relaxation plus hull facets for every product node."""
    cfg = cfg or RelaxConfig()
    base = base or build_base(dag, store, cfg, extra_stores)
    sys = base.copy()
    for nid in sorted(dag.product_ids()):
        # every node projects the same base system, so the order does not matter
        added = relax_product_node(nid, sys, dag, store, cfg, linking=base, geometry=geometry)
        logger.debug("node %s: %d hull rows", dag.label(nid), added)
    return sys


# --------------------------------------------------------------------------
# range reduction


def duality_range_reduction(sys, sol, primal_bound):
    """Tightened ``{name: (lo, hi)}`` from reduced costs at active bounds.

    ``sys`` is a minimization and ``primal_bound`` the objective of a known
    feasible point.  A variable at its lower bound with reduced cost
    ``lam > 0`` can move at most ``gap / lam`` before the LP bound exceeds
    the primal bound; symmetric for the upper bound.
    """
    out = {k: (sys.lo[k], sys.hi[k]) for k in sys.names}
    if not sol.ok or not math.isfinite(primal_bound):
        return out
    gap = max(primal_bound - sol.objective, 0.0)
    for k in sys.names:
        lo, hi = out[k]
        lam_lo = sol.reduced_lower.get(k, 0.0)
        lam_hi = -sol.reduced_upper.get(k, 0.0)
        if lam_lo > 1e-9 and math.isfinite(lo):
            hi = min(hi, lo + gap / lam_lo)
        if lam_hi > 1e-9 and math.isfinite(hi):
            lo = max(lo, out[k][1] - gap / lam_hi)
        out[k] = (lo, max(hi, lo))
    return out


def obbt(sys, names, cutoff=None):
    """Per-variable LP bounds ``{name: (lo, hi)}`` over ``sys``.

    With ``cutoff`` the row ``objective <= cutoff`` is added first, which
    keeps every point at least as good as the cutoff.
    """
    work = sys.copy()
    if cutoff is not None and math.isfinite(cutoff) and work.objective:
        work.add_row(dict(work.objective), "<=", cutoff - work.obj_const, tag="model-linear")
    out = {}
    for k in names:
        lo, hi = work.lo[k], work.hi[k]
        smin = solve(work, objective={k: 1.0}, sense="min")
        if smin.status == "infeasible":
            raise InfeasibleError(k, lo, hi)
        if smin.ok:
            lo = max(lo, smin.objective)
        smax = solve(work, objective={k: 1.0}, sense="max")
        if smax.ok:
            hi = min(hi, smax.objective)
        out[k] = (lo, max(hi, lo))
    return out


def _tighten(dag, store, bounds):
    """Intersect named bounds into the store, padded outward by a hair."""
    ids = {dag.label(n.id): n.id for n in dag.nodes if n.op == "var" or dag.is_aux(n.id)}
    out = dict(store)
    for name, (lo, hi) in bounds.items():
        nid = ids[name]
        pad = 1e-9 * (1.0 + max(abs(lo), abs(hi))) if math.isfinite(lo) and math.isfinite(hi) else 0.0
        out[nid] = out[nid].intersect(Interval(lo - pad, hi + pad), nid)
    return out


# --------------------------------------------------------------------------
# pipeline


@dataclass
class RelaxResult:
    mode: str
    status: str  # optimal | infeasible | unbounded | iteration-limit
    bound: float  # in the model's sense: lower bound for min, upper for max
    lp_value: float  # minimized LP objective
    system: LinearSystem = None
    dag: object = None
    store: dict = None
    times: dict = field(default_factory=dict)
    solution: object = None

    @property
    def n_constraints(self):
        return len(self.system.rows) if self.system is not None else 0

    @property
    def n_aux_vars(self):
        return len(self.dag.aux_ids()) if self.dag is not None else 0

    def to_json(self):
        return {
            "mode": self.mode,
            "status": self.status,
            "bound": _num(self.bound),
            "n_constraints": self.n_constraints,
            "n_aux_vars": self.n_aux_vars,
            "rows_by_tag": self.system.tag_counts() if self.system is not None else {},
            "times": {k: round(v, 6) for k, v in self.times.items()},
        }


def _num(x):
    return x if math.isfinite(x) else str(x)


def _infeasible(mode, dag, times):
    sign = dag.objective_sign if dag is not None else 1.0
    return RelaxResult(mode, "infeasible", sign * math.inf, math.inf, dag=dag, times=times)


def relax(model, cfg=None, cutoff=None, geometry=None):
    """Relax ``model`` (a Model or an ExprDag) and solve the LP.

    ``cutoff`` is the objective of a known feasible point in the model's
    sense; it sharpens OBBT and enables duality-based reduction between
    iterations.  Without it the final relaxation is valid for every
    feasible point.  ``geometry`` collects voxelization records (see
    :func:`relax_product_node`) from the last iteration.
    """
    cfg = cfg or RelaxConfig()
    t0 = time.perf_counter()
    dag = normalize(model) if isinstance(model, Model) else model
    times = {"construct_s": 0.0, "solve_s": 0.0}
    min_cutoff = None if cutoff is None else dag.objective_sign * cutoff
    try:
        root = forward_propagate(dag)
        store = inverse_propagate(dag, root) if cfg.tightening and cfg.fbbt else root
    except InfeasibleError:
        times["construct_s"] = time.perf_counter() - t0
        return _infeasible(cfg.mode, dag, times)
    best = None
    try:
        for it in range(cfg.iterations):
            tc = time.perf_counter()
            extra = (root,) if store is not root else ()
            base = build_base(dag, store, cfg, extra)
            if cfg.tightening and cfg.obbt:
                names = [dag.label(dag.var_ids[v]) for v in dag.variables]
                store = _tighten(dag, store, obbt(base, names, min_cutoff))
                if cfg.fbbt:
                    store = inverse_propagate(dag, store)
                base = build_base(dag, store, cfg, extra)
            if geometry is not None:
                geometry.clear()
            sys = build_vr(dag, store, cfg, base=base, geometry=geometry) if cfg.mode == "vr" else base
            times["construct_s"] += time.perf_counter() - tc
            ts = time.perf_counter()
            sol = solve(sys)
            times["solve_s"] += time.perf_counter() - ts
            logger.info("iteration %d: %s LP value %s (%d rows)", it + 1, sol.status, sol.objective, len(sys.rows))
            if sol.status == "infeasible":
                return _infeasible(cfg.mode, dag, times)
            if best is None or (sol.ok and (not best[0].ok or sol.objective > best[0].objective)):
                best = (sol, sys, store)
            if not sol.ok or it == cfg.iterations - 1:
                break
            if cfg.tightening and cfg.duality_reduction and min_cutoff is not None:
                store = _tighten(dag, store, duality_range_reduction(sys, sol, min_cutoff))
            if cfg.tightening and cfg.fbbt:
                store = inverse_propagate(dag, store)
    except InfeasibleError:
        return _infeasible(cfg.mode, dag, times)
    sol, sys, store = best
    times["total_s"] = time.perf_counter() - t0
    lp_value = sol.objective if sol.ok else -math.inf
    bound = dag.objective_sign * lp_value
    return RelaxResult(cfg.mode, sol.status, bound, lp_value, sys, dag, store, times, sol)


def node_values(dag, env):
    """LP-name -> value map of every variable and auxiliary for a model point."""
    vals = dag.evaluate(env)
    return {dag.label(n.id): vals[n.id] for n in dag.nodes if n.op == "var" or dag.is_aux(n.id)}

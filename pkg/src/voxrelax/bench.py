"""Random polynomial benchmark, primal bounds, gap metrics and experiment reports.

Instances have the form

    min  c.x + d.y   s.t.  A x + B y <= b,  y_j = x^alpha_j,  xL <= x <= xU

built so that a random interior point ``x_tilde`` is feasible with every
constraint active.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from .expr import normalize, parse_model
from .relax import RelaxConfig, relax

logger = logging.getLogger(__name__)

BENCH_SIZES = ((15, 30, 20), (25, 50, 20), (50, 100, 20), (100, 200, 20))
METHODS = ("fp", "base", "vr")
# bounds this close to the primal value (relative) count as closing the gap
GAP_TOL = 1e-7
ALPHA_GRID = np.round(np.linspace(0.0, 1.0, 101), 2)
CSV_FIELDS = ("instance_id", "n", "m", "r", "seed", "method", "bound", "primal", "r_rrg",
              "t_construct_s", "t_solve_s")

# one child stream per random quantity, in this order
_STREAMS = ("alpha", "d", "B", "A", "bounds", "x_tilde")


@dataclass
class PolyInstance:
    n: int
    m: int
    r: int
    seed: int
    alpha: np.ndarray  # (m, n) integer exponents
    c: np.ndarray
    d: np.ndarray
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    xl: np.ndarray
    xu: np.ndarray
    x_tilde: np.ndarray

    @property
    def instance_id(self):
        return f"poly-{self.n}-{self.m}-{self.r}-s{self.seed}"

    def monomials(self, X):
        """``y`` for one point (n,) or many points (k, n)."""
        X = np.asarray(X, dtype=float)
        return np.prod(X[..., None, :] ** self.alpha, axis=-1)

    def objective(self, X):
        X = np.asarray(X, dtype=float)
        return X @ self.c + self.monomials(X) @ self.d

    def slack(self, X):
        """``b - A x - B y``; feasible iff all entries are >= 0."""
        X = np.asarray(X, dtype=float)
        return self.b - X @ self.A.T - self.monomials(X) @ self.B.T

    def is_feasible(self, X, tol=1e-9):
        X = np.atleast_2d(X)
        scale = 1.0 + np.abs(self.b)
        in_box = np.all((X >= self.xl - tol) & (X <= self.xu + tol), axis=1)
        return in_box & np.all(self.slack(X) >= -tol * scale, axis=1)

    def to_text(self):
        """Model text readable by :func:`parse_model`."""
        names = [f"x{i + 1}" for i in range(self.n)]
        mono = []
        for row in self.alpha:
            mono.append("*".join(f"{names[i]}^{int(e)}" for i, e in enumerate(row) if e))

        def linear(coef_x, coef_y):
            terms = [f"{float(v)!r}*{names[i]}" for i, v in enumerate(coef_x) if v != 0.0]
            terms += [f"{float(v)!r}*{mono[j]}" for j, v in enumerate(coef_y) if v != 0.0]
            return " + ".join(terms) if terms else "0"

        lines = [f"# {self.instance_id}"]
        for i, nm in enumerate(names):
            lines.append(f"var {nm} in [{float(self.xl[i])!r}, {float(self.xu[i])!r}];")
        lines.append(f"min {linear(self.c, self.d)};")
        for k in range(self.r):
            lines.append(f"s.t. {linear(self.A[k], self.B[k])} <= {float(self.b[k])!r};")
        return "\n".join(lines) + "\n"

    def to_model(self):
        return parse_model(self.to_text())

    def env(self, X):
        """Variable assignment for ``Model``/``ExprDag`` evaluation."""
        X = np.atleast_2d(X)
        return {f"x{i + 1}": X[:, i] for i in range(self.n)}

    def to_json(self):
        out = asdict(self)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in out.items()}


def gen_poly_instance(n, m, r, seed, c_sign=1.0):
    """Random instance; deterministic per ``(n, m, r, seed)``.

    ``c = c_sign * sum_j d_j grad m_j(x_tilde)``.  With the default sign the
    objective is nondecreasing in every coordinate on the nonnegative box,
    so ``x = xL`` is optimal whenever it is feasible; ``c_sign=-1`` makes
    ``x_tilde`` a stationary point of the objective instead.
    """
    if min(n, m, r) < 1:
        raise ValueError("n, m, r must be >= 1")
    ss = np.random.SeedSequence([int(seed), n, m, r])
    rngs = dict(zip(_STREAMS, (np.random.default_rng(s) for s in ss.spawn(len(_STREAMS)))))
    rng = rngs["alpha"]
    alpha = np.zeros((m, n), dtype=int)
    for j in range(m):
        k = min(int(rng.choice([2, 3])), n)
        idx = rng.choice(n, size=k, replace=False)
        alpha[j, idx] = rng.choice([2, 3], size=k)

    def sparse_unit(rng, shape):
        keep = rng.random(shape) < 0.7
        return np.where(keep, rng.random(shape), 0.0)

    d = sparse_unit(rngs["d"], m)
    B = sparse_unit(rngs["B"], (r, m))
    A = rngs["A"].uniform(-10.0, 10.0, (r, n))
    xl = rngs["bounds"].choice([0.0, 1.0, 2.0], size=n)
    xu = rngs["bounds"].choice([3.0, 4.0], size=n)
    xt = rngs["x_tilde"].uniform(xl, xu)
    y = np.prod(xt ** alpha, axis=1)
    grad = np.zeros((m, n))
    for j in range(m):
        for i in np.nonzero(alpha[j])[0]:
            e = alpha[j].copy()
            e[i] -= 1
            grad[j, i] = alpha[j, i] * np.prod(xt ** e)
    c = c_sign * (grad.T @ d)
    b = A @ xt + B @ y
    return PolyInstance(n, m, r, int(seed), alpha, c, d, A, B, b, xl, xu, xt)


# --------------------------------------------------------------------------
# feasible points


def _jacobian(inst, x):
    """Jacobian of ``A x + B y(x)`` at ``x``."""
    grad = np.zeros((inst.m, inst.n))
    for j in range(inst.m):
        for i in np.nonzero(inst.alpha[j])[0]:
            e = inst.alpha[j].copy()
            e[i] -= 1
            grad[j, i] = inst.alpha[j, i] * np.prod(x ** e)
    return inst.A + inst.B @ grad


def _interior_direction(inst):
    """Unit direction ``u`` with ``J u < 0`` at ``x_tilde`` (None if there is none)."""
    J = _jacobian(inst, inst.x_tilde)
    n = inst.n
    # max s  s.t.  J u + s <= 0,  -1 <= u <= 1,  s <= 1
    scale = np.linalg.norm(J, axis=1, keepdims=True)
    A_ub = np.hstack([J / scale, np.ones((inst.r, 1))])
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=A_ub, b_ub=np.zeros(inst.r),
                  bounds=[(-1, 1)] * n + [(None, 1.0)], method="highs")
    if res.status != 0 or res.x[-1] <= 1e-9:
        return None, J
    return res.x[:n], J


def sample_feasible(inst, k, seed=0, max_tries=200):
    """Up to ``k`` feasible points: random steps from ``x_tilde`` into the
    cone of strictly decreasing directions, plus rejection samples from the box."""
    rng = np.random.default_rng(seed)
    pts = []
    u, J = _interior_direction(inst)
    width = inst.xu - inst.xl
    near = k - k // 2  # the rest comes from the whole box when possible
    if u is not None:
        for _ in range(max_tries):
            need = near - len(pts)
            if need <= 0:
                break
            dirs = u + rng.normal(scale=0.5, size=(4 * need, inst.n)) * np.abs(u).max()
            dirs = dirs[np.all(dirs @ J.T < 0, axis=1)]
            if not len(dirs):
                continue
            tau = rng.uniform(0.0, 1.0, size=(len(dirs), 1)) * width.min()
            for _ in range(30):
                X = inst.x_tilde + tau * dirs
                ok = inst.is_feasible(X, tol=0.0)
                if ok.all():
                    break
                tau = np.where(ok[:, None], tau, tau * 0.5)
            pts.extend(X[ok][:need])
    tries = 0
    while len(pts) < k and tries < max_tries:
        X = rng.uniform(inst.xl, inst.xu, size=(4096, inst.n))
        pts.extend(X[inst.is_feasible(X, tol=0.0)][: k - len(pts)])
        tries += 1
    if not k:
        return np.zeros((0, inst.n))
    return np.vstack([inst.x_tilde[None]] + [np.array(pts)] * bool(pts))[:k]


# --------------------------------------------------------------------------
# primal bounds


def _descend(f, feasible, x, lo, hi, step=0.25, tol=1e-7, max_iter=400):
    """Best-improvement coordinate descent with step halving, staying feasible."""
    n = len(x)
    h = step * (hi - lo)
    fx = float(f(x[None])[0])
    eye = np.eye(n)
    for _ in range(max_iter):
        if np.all(h < tol * (1.0 + hi - lo)):
            break
        cand = np.vstack([x + h[:, None] * eye, x - h[:, None] * eye])
        cand = np.clip(cand, lo, hi)
        ok = feasible(cand)
        if ok.any():
            vals = np.where(ok, f(cand), np.inf)
            i = int(np.argmin(vals))
            if vals[i] < fx - 1e-12 * (1.0 + abs(fx)):
                x, fx = cand[i], float(vals[i])
                continue
        h = h * 0.5
    return x, fx


def poly_primal_bound(inst, restarts=50, seed=0):
    """Best local minimum over descents from ``x_tilde`` and feasible samples."""
    starts = sample_feasible(inst, restarts, seed=seed)
    best_x, best = inst.x_tilde, float(inst.objective(inst.x_tilde))
    for x0 in starts:
        x, fx = _descend(inst.objective, lambda X: inst.is_feasible(X, tol=0.0), x0, inst.xl, inst.xu)
        if fx < best:
            best_x, best = x, fx
    return best, best_x


def primal_bound(model, start=None, restarts=50, seed=0, tol=1e-9):
    """Objective of a feasible point found by local descent, in the model's
    sense (+inf for min / -inf for max if none is found)."""
    dag = normalize(model)
    names = list(model.variables)
    lo = np.array([model.variables[v].lo for v in names], dtype=float)
    hi = np.array([model.variables[v].hi for v in names], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("primal_bound needs finite variable bounds")
    sign = dag.objective_sign

    def env(X):
        return {v: X[:, i] for i, v in enumerate(names)}

    def f(X):
        with np.errstate(all="ignore"):
            vals = sign * np.asarray(dag.objective_value(env(X)), dtype=float)
        return np.broadcast_to(np.nan_to_num(vals, nan=np.inf), (len(X),)).copy()

    def feasible(X):
        with np.errstate(all="ignore"):
            vals = dag.evaluate(env(X))
        ok = np.ones(len(X), dtype=bool)
        for rb in dag.constraints:
            v = np.broadcast_to(np.asarray(vals[rb.root], dtype=float), (len(X),))
            slack = tol * (1.0 + np.abs(v))
            ok &= np.isfinite(v) & (v <= rb.hi + slack) & (v >= rb.lo - slack)
        return ok

    rng = np.random.default_rng(seed)
    starts = [] if start is None else [np.asarray([start[v] for v in names] if isinstance(start, dict) else start, float)]
    starts.append(0.5 * (lo + hi))
    X = rng.uniform(lo, hi, size=(max(restarts, 1) * 20, len(names)))
    starts.extend(X[feasible(X)][: max(restarts - len(starts), 0)])
    best, best_x = math.inf, None
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        if not feasible(x0[None])[0]:
            continue
        x, fx = _descend(f, feasible, x0, lo, hi)
        if fx < best:
            best, best_x = fx, x
    if best_x is None:
        return sign * math.inf, None
    best_x, best = _polish(f, feasible, dag, env, best_x, best, lo, hi)
    return sign * best, dict(zip(names, best_x))


def _polish(f, feasible, dag, env, x, fx, lo, hi):
    """SLSQP from the best descent point; kept only if feasible and better.
    Coordinate moves stall on sloped constraint faces, SLSQP does not."""
    def cons(z):
        with np.errstate(all="ignore"):
            vals = dag.evaluate(env(z[None]))
        out = []
        for rb in dag.constraints:
            v = float(np.ravel(vals[rb.root])[0])
            if math.isfinite(rb.hi):
                out.append(rb.hi - v)
            if math.isfinite(rb.lo):
                out.append(v - rb.lo)
        return np.nan_to_num(np.array(out), nan=-1e9)

    constraints = [{"type": "ineq", "fun": cons}] if dag.constraints else []
    try:
        res = minimize(lambda z: float(f(z[None])[0]), x, method="SLSQP", bounds=list(zip(lo, hi)),
                       constraints=constraints, options={"maxiter": 200, "ftol": 1e-12})
    except (ValueError, FloatingPointError):
        return x, fx
    z = np.clip(res.x, lo, hi)
    if feasible(z[None])[0]:
        fz = float(f(z[None])[0])
        if fz < fx:
            return z, fz
    return x, fx


# --------------------------------------------------------------------------
# metrics


def remaining_gaps(bounds, primal):
    """Relative remaining gap per method for one instance (minimization).

    ``(u - v_i) / (u - min_j v_j)``; if the weakest bound already meets
    ``u`` within the LP tolerance every method gets 0.
    """
    finite = {k: v for k, v in bounds.items() if math.isfinite(v)}
    out = {k: math.nan for k in bounds}
    if not finite or not math.isfinite(primal):
        return out
    worst = min(finite.values())
    denom = primal - worst
    for k, v in finite.items():
        if denom <= GAP_TOL * (1.0 + abs(primal)):
            logger.debug("zero reference gap, all remaining gaps set to 0")
            out[k] = 0.0
        else:
            out[k] = float(np.clip((primal - v) / denom, 0.0, 1.0))
    return out


def rcg(p1, p2, primal):
    """Relative closed gap of a stronger bound ``p1`` over ``p2`` (minimization);
    NaN when ``p1 < p2`` beyond the LP tolerance."""
    tol = GAP_TOL * (1.0 + abs(primal))
    if p1 < p2 - tol:
        return math.nan
    denom = primal - p2
    if denom <= tol:
        return 0.0
    return max(p1 - p2, 0.0) / denom


def mu_curve(r_values, grid=ALPHA_GRID):
    r = np.asarray([v for v in r_values if not math.isnan(v)])
    if len(r) == 0:
        return np.zeros(len(grid))
    return np.array([(r <= a + 1e-12).mean() for a in grid])


@dataclass
class GapReport:
    rows: list = field(default_factory=list)  # CSV rows as dicts
    mu: dict = field(default_factory=dict)  # method -> mu curve on ALPHA_GRID
    rcg: list = field(default_factory=list)  # per instance and ordered method pair
    timings: dict = field(default_factory=dict)  # method -> mean construct / solve seconds
    failures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def mean_gap(self, method):
        vals = [row["r_rrg"] for row in self.rows if row["method"] == method and not math.isnan(row["r_rrg"])]
        return float(np.mean(vals)) if vals else math.nan

    def bounds(self, method):
        return {row["instance_id"]: row["bound"] for row in self.rows if row["method"] == method}

    def timing_table(self):
        """Mean construction and solve times per method, one line each."""
        lines = [f"{'method':<8}{'construct_s':>14}{'solve_s':>12}"]
        for meth, t in self.timings.items():
            lines.append(f"{meth:<8}{t['t_construct_s']:>14.4f}{t['t_solve_s']:>12.4f}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: row[k] for k in CSV_FIELDS})

    def to_json(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            return v
        return {
            "config": self.config,
            "rows": [{k: clean(v) for k, v in row.items()} for row in self.rows],
            "mean_remaining_gap": {m: clean(self.mean_gap(m)) for m in self.mu},
            "mu": {"alpha": ALPHA_GRID.tolist(), **{m: c.tolist() for m, c in self.mu.items()}},
            "rcg": [{k: clean(v) for k, v in row.items()} for row in self.rcg],
            "timings": {m: {k: clean(v) for k, v in t.items()} for m, t in self.timings.items()},
            "failures": self.failures,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)


def gap_metrics(per_instance, methods):
    """Build a report from ``[{instance_id, n, m, r, seed, primal, bounds,
    times}]`` where ``bounds`` and ``times`` are keyed by method."""
    rep = GapReport()
    for inst in sorted(per_instance, key=lambda p: p["instance_id"]):
        gaps = remaining_gaps(inst["bounds"], inst["primal"])
        for meth in methods:
            t = inst["times"].get(meth, {})
            rep.rows.append({
                "instance_id": inst["instance_id"], "n": inst["n"], "m": inst["m"], "r": inst["r"],
                "seed": inst["seed"], "method": meth, "bound": inst["bounds"][meth],
                "primal": inst["primal"], "r_rrg": gaps[meth],
                "t_construct_s": t.get("construct_s", math.nan), "t_solve_s": t.get("solve_s", math.nan),
            })
        for m1 in methods:
            for m2 in methods:
                if m1 != m2:
                    rep.rcg.append({"instance_id": inst["instance_id"], "stronger": m1, "weaker": m2,
                                    "rcg": rcg(inst["bounds"][m1], inst["bounds"][m2], inst["primal"])})
    for meth in methods:
        rs = [row["r_rrg"] for row in rep.rows if row["method"] == meth]
        rep.mu[meth] = mu_curve(rs)
        tc = [row["t_construct_s"] for row in rep.rows if row["method"] == meth]
        ts = [row["t_solve_s"] for row in rep.rows if row["method"] == meth]
        rep.timings[meth] = {"t_construct_s": _nanmean(tc), "t_solve_s": _nanmean(ts)}
    return rep


def _nanmean(values):
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


# --------------------------------------------------------------------------
# experiment


def bench_config(mode):
    """Settings for the polynomial benchmark: 5 breakpoints over the box."""
    return RelaxConfig(mode=mode, n_breakpoints=5, voxelizer="box")


def run_instance(size, seed, configs, restarts=50, c_sign=1.0):
    n, m, r = size
    inst = gen_poly_instance(n, m, r, seed, c_sign)
    primal, _ = poly_primal_bound(inst, restarts=restarts, seed=seed)
    model = inst.to_model()
    bounds, times = {}, {}
    for meth, cfg in configs.items():
        res = relax(model, cfg, cutoff=primal)
        bounds[meth] = res.bound
        times[meth] = res.times
        logger.info("%s %s: %.6g (primal %.6g)", inst.instance_id, meth, res.bound, primal)
    return {"instance_id": inst.instance_id, "n": n, "m": m, "r": r, "seed": seed,
            "primal": primal, "bounds": bounds, "times": times}


def run_experiment(sizes, seeds, configs=None, jobs=1, restarts=50, c_sign=1.0):
    """Relax every instance under every configuration and collect metrics.

    ``configs`` maps method names to :class:`RelaxConfig`.  Failures are
    recorded and the run continues.
    """
    configs = configs or {meth: bench_config(meth) for meth in ("fp", "vr")}
    methods = list(configs)
    tasks = [(tuple(s), int(seed)) for s in sizes for seed in seeds]
    results, failures = [], []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(run_instance, s, seed, configs, restarts, c_sign): (s, seed) for s, seed in tasks}
            for fut, (s, seed) in futs.items():
                try:
                    results.append(fut.result())
                except Exception as exc:  # recorded, run continues
                    failures.append({"size": list(s), "seed": seed, "error": repr(exc)})
    else:
        for s, seed in tasks:
            try:
                results.append(run_instance(s, seed, configs, restarts, c_sign))
            except Exception as exc:  # recorded, run continues
                logger.warning("instance %s seed %s failed: %s", s, seed, exc)
                failures.append({"size": list(s), "seed": seed, "error": repr(exc)})
    rep = gap_metrics(results, methods)
    rep.failures = failures
    rep.config = {
        "sizes": [list(s) for s in sizes], "seeds": list(seeds), "restarts": restarts, "c_sign": c_sign,
        "methods": {k: _config_json(c) for k, c in configs.items()},
    }
    return rep


def _config_json(cfg):
    out = asdict(cfg)
    out["voxel"] = asdict(cfg.voxel)
    out["voxel"]["grid"] = list(cfg.voxel.grid)
    return out

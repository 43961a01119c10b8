"""Command-line entry points: ``relax``, ``bench``, ``gen`` and ``verify``.

JSON results go to stdout and logs to stderr.  Exit codes: 0 success,
1 usage error, 2 model error, 3 solve failure (or a failed golden check).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import golden
from .bench import ALPHA_GRID, bench_config, gen_poly_instance, primal_bound, run_experiment
from .expr import ModelError, parse_model
from .interval import IntervalError, store_to_json
from .lp import export_lp
from .relax import VOXELIZERS, RelaxConfig, RelaxError, relax
from .voxel import VoxelConfig

logger = logging.getLogger("voxrelax")

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_SOLVE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _int_list(text):
    """``"1-5,8"`` -> ``[1, 2, 3, 4, 5, 8]``; empty text gives ``[]``."""
    out = []
    for part in filter(None, text.split(",")):
        a, sep, b = part.partition("-")
        try:
            out.extend(range(int(a), int(b) + 1) if sep else [int(a)])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from None
    return out


def _size(text):
    try:
        n, m, r = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must be n,m,r, got {text!r}") from None
    if min(n, m, r) < 1:
        raise argparse.ArgumentTypeError("size entries must be >= 1")
    return (n, m, r)


def _add_relax_flags(p, nb_default):
    p.add_argument("--voxelizer", choices=VOXELIZERS, default=None,
                   help="region builder for product nodes (default: projection; box for bench)")
    p.add_argument("--nb", type=lambda t: max(2, _positive_int(t)), default=nb_default,
                   help="breakpoints of the piecewise-linear estimators")
    p.add_argument("--nmax", type=_nonneg_int, default=5, help="projection refinement LPs")
    p.add_argument("--nv", type=_positive_int, default=5, help="boxes per polygon edge")
    p.add_argument("--eps", type=_positive_float, default=1e-3, help="projection gap tolerance")
    p.add_argument("--grid", type=lambda t: max(2, _positive_int(t)), default=3,
                   help="quadtree grid points per axis")
    p.add_argument("--iters", type=_positive_int, default=1, help="relax/tighten iterations")


def _config(args, mode, voxelizer_default="projection"):
    return RelaxConfig(
        mode=mode, n_breakpoints=args.nb, voxelizer=args.voxelizer or voxelizer_default,
        iterations=args.iters,
        voxel=VoxelConfig(epsilon=args.eps, n_max=args.nmax, n_v=args.nv, grid=(args.grid, args.grid)),
    )


def build_parser():
    p = _Parser(prog="voxrelax", description="Voxelization-based LP relaxations of factorable programs.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("relax", help="relax a model file and solve the LP")
    r.add_argument("model", help="model file ('-' for stdin)")
    r.add_argument("--mode", choices=("fp", "base", "vr"), default="vr")
    _add_relax_flags(r, nb_default=9)
    r.add_argument("--seed", type=int, default=0, help="seed of the primal local search")
    r.add_argument("--restarts", type=_nonneg_int, default=20, help="primal local-search restarts")
    r.add_argument("--no-primal", action="store_true", help="skip the primal local search")
    r.add_argument("--use-cutoff", action="store_true",
                   help="use the primal value as an OBBT cutoff (bound then only covers better points)")
    r.add_argument("--export-lp", metavar="PATH", help="write the final LP in LP-file format")
    r.add_argument("--dump-geometry", metavar="PATH", help="write voxelization regions and hulls as JSON")
    r.add_argument("--print-bounds", action="store_true", help="include the final bound store in the output")
    r.add_argument("--out", metavar="PATH", help="also write the JSON result here")

    b = sub.add_parser("bench", help="run the polynomial benchmark")
    b.add_argument("--sizes", type=_size, nargs="+", default=[(15, 30, 20)], metavar="N,M,R")
    b.add_argument("--seeds", type=_int_list, default=list(range(1, 21)), metavar="LIST",
                   help="seed list such as 1-20 or 1,3,5 (empty allowed)")
    b.add_argument("--methods", default="fp,vr", help="comma-separated subset of fp,base,vr")
    _add_relax_flags(b, nb_default=5)
    b.add_argument("--restarts", type=_nonneg_int, default=50)
    b.add_argument("--c-sign", type=float, choices=(1.0, -1.0), default=1.0,
                   help="sign of the generated objective gradient")
    b.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    b.add_argument("--out", metavar="DIR", help="write results.csv and report.json here")

    g = sub.add_parser("gen", help="generate a polynomial benchmark instance")
    g.add_argument("--size", type=_size, default=(15, 30, 20), metavar="N,M,R")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--c-sign", type=float, choices=(1.0, -1.0), default=1.0)
    g.add_argument("--json", action="store_true", help="emit instance data as JSON instead of a model")
    g.add_argument("--out", metavar="PATH", help="write here instead of stdout")

    v = sub.add_parser("verify", help="run the golden checks")
    v.add_argument("--perturb", metavar="NAME", choices=sorted(golden.GOLDEN),
                   help="scale one golden constant (negative control)")
    v.add_argument("--out", metavar="PATH", help="also write the JSON report here")
    return p


def _clean(obj):
    """Non-finite floats become strings so the output stays strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit(obj, out=None):
    text = json.dumps(_clean(obj), indent=2, default=str, allow_nan=False)
    print(text)
    if out:
        Path(out).write_text(text + "\n")


def _num(x):
    return x if isinstance(x, (int, float)) and math.isfinite(x) else str(x)


def cmd_relax(args):
    try:
        text = sys.stdin.read() if args.model == "-" else Path(args.model).read_text()
    except OSError as exc:
        logger.error("cannot read model: %s", exc)
        return EXIT_MODEL
    try:
        model = parse_model(text)
        cfg = _config(args, args.mode)
    except (ModelError, ValueError) as exc:
        logger.error("model error: %s", exc)
        return EXIT_MODEL
    primal = math.nan
    if not args.no_primal:
        try:
            primal, _ = primal_bound(model, restarts=args.restarts, seed=args.seed)
        except ValueError as exc:
            logger.warning("no primal bound: %s", exc)
    cutoff = primal if args.use_cutoff and math.isfinite(primal) else None
    geometry = [] if args.dump_geometry else None
    try:
        res = relax(model, cfg, cutoff=cutoff, geometry=geometry)
    except (ModelError, RelaxError, IntervalError) as exc:
        logger.error("cannot build relaxation: %s", exc)
        return EXIT_MODEL
    gap = abs(primal - res.bound) if math.isfinite(primal) and math.isfinite(res.bound) else math.nan
    out = {"mode": res.mode, "voxelizer": cfg.voxelizer if res.mode == "vr" else None,
           "status": res.status, "sense": model.sense, "bound": _num(res.bound), "primal": _num(primal),
           "gap": _num(gap), "n_constraints": res.n_constraints, "n_aux_vars": res.n_aux_vars,
           "rows_by_tag": res.system.tag_counts() if res.system is not None else {},
           "times": {k: round(t, 6) for k, t in res.times.items()}}
    if args.print_bounds and res.store is not None:
        out["bounds"] = store_to_json(res.dag, res.store)
    if args.export_lp and res.system is not None:
        Path(args.export_lp).write_text(export_lp(res.system))
    if args.dump_geometry:
        Path(args.dump_geometry).write_text(json.dumps(geometry, indent=2, default=str))
    _emit(out, args.out)
    if res.status != "optimal":
        logger.error("relaxation LP status: %s", res.status)
        return EXIT_SOLVE
    return EXIT_OK


def cmd_bench(args):
    methods = [m for m in args.methods.split(",") if m]
    bad = [m for m in methods if m not in ("fp", "base", "vr")]
    if bad or not methods:
        logger.error("unknown methods %s", bad or "(none)")
        return EXIT_USAGE
    if args.voxelizer is None and args.nb == 5:
        configs = {m: bench_config(m) for m in methods}
    else:
        configs = {m: _config(args, m, voxelizer_default="box") for m in methods}
    rep = run_experiment(args.sizes, args.seeds, configs, jobs=args.jobs, restarts=args.restarts,
                         c_sign=args.c_sign)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        rep.write_csv(d / "results.csv")
        rep.write_json(d / "report.json")
    logger.info("timings\n%s", rep.timing_table())
    summary = {
        "n_instances": len({row["instance_id"] for row in rep.rows}),
        "mean_remaining_gap": {m: _num(rep.mean_gap(m)) for m in methods},
        "mu_at": {m: {str(a): float(c[i]) for i, a in enumerate(ALPHA_GRID) if i % 25 == 0}
                  for m, c in rep.mu.items()},
        "timings": rep.timings,
        "failures": rep.failures,
    }
    _emit(summary)
    return EXIT_SOLVE if rep.failures else EXIT_OK


def cmd_gen(args):
    inst = gen_poly_instance(*args.size, args.seed, args.c_sign)
    text = json.dumps(inst.to_json(), indent=2) if args.json else inst.to_text()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_verify(args):
    overrides = golden.perturbed(args.perturb) if args.perturb else None
    checks = golden.run_all(overrides)
    for c in checks:
        print(c.line(), file=sys.stderr)
    ok = all(c.passed for c in checks)
    _emit({"passed": ok, "perturbed": args.perturb,
           "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail, "seconds": round(c.seconds, 4)}
                      for c in checks]}, args.out)
    if not ok:
        logger.error("failed checks: %s", ", ".join(c.name for c in checks if not c.passed))
    return EXIT_OK if ok else EXIT_SOLVE


COMMANDS = {"relax": cmd_relax, "bench": cmd_bench, "gen": cmd_gen, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())

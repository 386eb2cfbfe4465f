"""Command-line front end: ``tsdyn analyze|rescale|lift|solve|manifold|probe``.

CSV outputs (``--out``) carry a header row and 17 significant digits:

  rescale   t,s
  lift      s,A_11,A_12,...        (working real matrix, row-major)
  solve     t,s,x_1..x_n,residual  (residual = |x^Delta - A x - f|; nan where undefined)
  manifold  y0_1..y0_n,h_1..h_n,decay_exponent

A report (config echo, library version, results) goes to stdout in the
``--format`` chosen.  Failures print ``ERROR <CODE>: <message>`` and exit 1.
Set ``TSDYN_LOG=DEBUG|INFO|WARNING`` for diagnostics on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from . import io as tio
from .dichotomy import (
    bounded_solution_ts,
    ts_residual,
    classify_stable_directions,
    detect_dichotomy,
    pliss_maizel_probe,
)
from .errors import InputError, NonPeriodicUnsupported, NotHyperbolic, TsdynError
from .lift import lift_coefficient, rescale
from .matlog import regressivity_report
from .nonlinear import solve_almost_linear, stable_manifold, verify_manifold_point

log = logging.getLogger("tsdyn")

COMMANDS = ("analyze", "rescale", "lift", "solve", "manifold", "probe")


def parse_grid(text):
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise InputError(f"--grid: expected 'lo:hi:step', got {text!r}", field="grid") from None
    if step <= 0 or hi < lo:
        raise InputError("--grid: need step > 0 and hi >= lo", field="grid")
    m = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(m + 1)


def build_parser():
    p = argparse.ArgumentParser(prog="tsdyn", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"tsdyn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scale", required=True, help="time-scale JSON file")
        if name != "rescale":
            s.add_argument("--system", required=True, help="system JSON file")
        s.add_argument("--rhs", help="forcing JSON file (overrides the system's rhs)")
        s.add_argument("--perturbation", help="perturbation JSON file")
        s.add_argument("--out", help="CSV output path")
        s.add_argument("--tol", type=float, default=1e-9)
        s.add_argument("--horizon", type=float, help="output horizon in scale time")
        s.add_argument("--lambda", dest="lam", type=float, help="weight exponent")
        s.add_argument("--grid", help="sample grid 'lo:hi:step'")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--trials", type=int, default=20)
        s.add_argument("--h-grid", type=float, default=1e-3, help="dense sample spacing")
        s.add_argument("--h-ode", type=float, default=1e-3, help="RK4 step for variable coefficients")
        s.add_argument("--format", choices=("text", "json"), default="text")
        s.add_argument("--nonlinear", action="store_true", help="solve with the perturbation (solve only)")
        s.add_argument("--relaxed", action="store_true",
                       help="record violated contraction hypotheses instead of failing")
    return p


def _config(args):
    keys = ("command", "scale", "system", "rhs", "perturbation", "out", "tol", "horizon", "lam",
            "grid", "seed", "trials", "h_grid", "h_ode", "nonlinear", "relaxed")
    return {k: getattr(args, k, None) for k in keys}


def _positive(args):
    for k in ("tol", "h_grid", "h_ode"):
        if getattr(args, k) <= 0:
            raise InputError(f"--{k.replace('_', '-')} must be positive", field=k)
    if args.horizon is not None and args.horizon <= 0:
        raise InputError("--horizon must be positive", field="horizon")


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _emit(report, fmt, stream):
    report = _json_safe(report)
    if fmt == "json":
        stream.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
        return

    def walk(d, indent=0):
        for k, v in d.items():
            if isinstance(v, dict):
                stream.write(" " * indent + f"{k}:\n")
                walk(v, indent + 2)
            else:
                stream.write(" " * indent + f"{k}: {v}\n")

    walk(report)


def _horizon(args, ts):
    if args.horizon is not None:
        if ts.periodic and args.horizon < ts.period:
            raise InputError("--horizon must cover at least one pattern period", field="horizon")
        return args.horizon
    return 20 * ts.period if ts.periodic else ts.end


def cmd_rescale(args, ts):
    r = rescale(ts)
    t = parse_grid(args.grid) if args.grid else np.linspace(0, 2 * (ts.period or ts.end), 21)
    s = r(t)
    tio.write_csv(args.out, ["t", "s"], zip(t, s))
    return {"rows": int(t.size), "S_P": r.S_P}


def cmd_lift(args, ts, A):
    sys_ = lift_coefficient(A)
    S = sys_.period if sys_.periodic else float(sys_.rescaling.s_break[-1])
    s = parse_grid(args.grid) if args.grid else np.linspace(0, S, 21)
    d = sys_.dim
    head = ["s"] + [f"A_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    rows = [[x, *sys_.A(x).ravel()] for x in s]
    tio.write_csv(args.out, head, rows)
    return {"rows": len(rows), "doubled": sys_.doubled, "dim": d, "S_P": sys_.period, "sup_norm": sys_.sup_norm()}


def cmd_analyze(args, ts, A):
    rep = {}
    rep["regressivity"] = regressivity_report(ts, A).to_dict()
    syn = ts.is_syndetic()
    rep["syndetic"] = {"syndetic": syn.syndetic, "sup_gap": syn.sup_gap}
    if not rep["regressivity"]["regressive"]:
        rep["hyperbolicity"] = {"status": "not lifted (not regressive)"}
        return rep
    sys_ = lift_coefficient(A)
    rep["lift"] = {"doubled": sys_.doubled, "dim": sys_.dim, "S_P": sys_.period, "sup_norm": sys_.sup_norm()}
    try:
        d = detect_dichotomy(sys_)
        rep["hyperbolicity"] = {"status": "hyperbolic", **d.to_dict()}
    except NotHyperbolic as e:
        rep["hyperbolicity"] = {"status": "not hyperbolic", "witness": e.witness, "message": str(e)}
    except NonPeriodicUnsupported as e:
        rep["hyperbolicity"] = {"status": "unsupported", "message": str(e)}
    rep["stable_directions"] = classify_stable_directions(sys_).to_dict()
    return rep


def cmd_solve(args, ts, A, rhs):
    horizon = _horizon(args, ts)
    if args.nonlinear:
        if not args.perturbation:
            raise InputError("--nonlinear needs --perturbation", field="perturbation")
        g = tio.load_perturbation(args.perturbation, A.n)
        sol = solve_almost_linear(A, g, tol=args.tol, horizon=horizon, h_grid=args.h_grid,
                                  check_hypotheses=not args.relaxed, seed=args.seed)
        x = sol.x
        fvals = g(x.t, x.values)
        summary = {"certificate": sol.certificate.to_dict(), "residual_ts": sol.residual_ts}
    else:
        if rhs is None:
            raise InputError("solve needs a forcing: 'rhs' in the system file or --rhs", field="rhs")
        sol = bounded_solution_ts(A, rhs, tol=args.tol, horizon=horizon, h_grid=args.h_grid)
        x = sol.x
        fvals = rhs(x.t)
        summary = {"residual": sol.residual, "K_ts": sol.K, "s_trunc": sol.s_trunc,
                   "dichotomy": sol.dichotomy.to_dict()}
    res = ts_residual(A, x, fvals)
    s = rescale(ts)(x.t)
    n = A.n
    head = ["t", "s"] + [f"x_{i + 1}" for i in range(n)] + ["residual"]
    rows = (list([x.t[k], s[k], *x.values[k], res[k]]) for k in range(x.t.size))
    tio.write_csv(args.out, head, rows)
    summary["rows"] = int(x.t.size)
    return summary


def cmd_manifold(args, ts, A):
    if not args.perturbation:
        raise InputError("manifold needs --perturbation", field="perturbation")
    g = tio.load_perturbation(args.perturbation, A.n)
    sys_ = lift_coefficient(A)
    d = detect_dichotomy(sys_)
    y = parse_grid(args.grid) if args.grid else np.linspace(-1, 1, 9) * g.r0 / (2 * d.C) * 0.9
    mm = stable_manifold(A, g, 0.0, args.lam, y, dich=d, tol=args.tol, h_grid=args.h_grid,
                         check_hypotheses=not args.relaxed, seed=args.seed)
    horizon = args.horizon or 10.0
    n = A.n
    rows = []
    for y0, h in zip(mm.y0, mm.h):
        rep = verify_manifold_point(A, g, 0.0, y0 + h, horizon, mm.lam, mm.a, d, args.h_ode)
        rows.append([*y0, *h, rep.exponent if np.linalg.norm(y0) > 0 else float("nan")])
    head = [f"y0_{i + 1}" for i in range(n)] + [f"h_{i + 1}" for i in range(n)] + ["decay_exponent"]
    tio.write_csv(args.out, head, rows)
    return {"rows": len(rows), "lipschitz": mm.lipschitz, "lipschitz_bound": mm.lipschitz_bound,
            "a": mm.a, "lambda": mm.lam, "K": mm.K, "l": mm.l,
            "violations": sorted({v for c in mm.certificates for v in c.violations})}


def cmd_probe(args, ts, A):
    rep = pliss_maizel_probe(A, trials=args.trials, seed=args.seed, horizon=args.horizon)
    return rep.to_dict()


def run(args, stdout=None):
    stdout = stdout or sys.stdout
    _positive(args)
    ts = tio.load_scale(args.scale)
    A = rhs = None
    if args.command != "rescale":
        A, rhs = tio.load_system(args.system, ts)
        if args.rhs:
            rhs = tio.load_rhs(args.rhs, ts, A.n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if args.command == "rescale":
            result = cmd_rescale(args, ts)
        elif args.command == "lift":
            result = cmd_lift(args, ts, A)
        elif args.command == "analyze":
            result = cmd_analyze(args, ts, A)
        elif args.command == "solve":
            result = cmd_solve(args, ts, A, rhs)
        elif args.command == "manifold":
            result = cmd_manifold(args, ts, A)
        else:
            result = cmd_probe(args, ts, A)
    _emit({"tsdyn_version": __version__, "config": _config(args), "result": result}, args.format, stdout)
    return 0


def main(argv=None):
    level = os.environ.get("TSDYN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except TsdynError as e:
        msg = str(e).replace("\n", " ")
        sys.stdout.flush()
        sys.stderr.write(f"ERROR {e.code}: {msg}\n")
        return 1
    except (OSError, ValueError) as e:
        sys.stderr.write(f"ERROR INPUT_ERROR: {str(e).splitlines()[0] if str(e) else type(e).__name__}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())

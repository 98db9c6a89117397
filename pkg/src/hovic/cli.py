"""Batch command line driver: every experiment as a subcommand.

Output contract shared by all subcommands: tabular results as CSV (schema v1,
documented per subcommand in --help), plus a JSON summary. With --out PATH the
CSV goes to PATH and the summary to PATH plus a .json suffix; without it both
go to stdout, CSV first. Diagnostics go to stderr only, at the level chosen by
the HOVIC_LOG environment variable (quiet, info or debug).

Exit codes: 0 success, 1 usage or internal error, 2 expected failure of a
non-coercive optimal control discretization (singular KKT system or the
control divergence flag), so shell scripts can assert both outcomes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import quadrature as quad
from .adjoint import commutation_check
from .errors import HovicError, SingularKkt, UsageError
from .integrators import (SchemeKind, StepperConfig, measure_order, sg_step,
                          sprk_step, verlet_reference_step)
from .mechanics import builtin_models
from .ocp import (OcpDefinition, hager_exact, hager_ocp, solve_kkt,
                  transcribe)

log = logging.getLogger("hovic")

CSV_SCHEMA_VERSION = 1


def _setup_logging():
    level = {"quiet": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("HOVIC_LOG", "quiet"))
    if level is None:
        level = logging.ERROR
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _parse_int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"bad integer list {text!r}") from exc
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError(f"list must be strictly increasing: {text!r}")
    return values


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.16e}"
    return str(x)


def _emit(rows, fieldnames, summary, out_path):
    summary = dict(summary)
    summary["schema_version"] = CSV_SCHEMA_VERSION
    summary["artifact_version"] = __version__
    buf = io.StringIO()
    if rows is not None:
        writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    text = buf.getvalue()
    js = json.dumps(summary, indent=2, sort_keys=True)
    if out_path:
        if rows is not None:
            with open(out_path, "w") as f:
                f.write(text)
        with open(out_path + ".json", "w") as f:
            f.write(js + "\n")
        log.info("wrote %s and %s.json", out_path, out_path)
    else:
        if text:
            sys.stdout.write(text)
        sys.stdout.write(js + "\n")


def _parallel_map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# -- subcommands -------------------------------------------------------------

def cmd_coefficients(args):
    scheme = quad.make_scheme(args.family, args.stages)
    data = {"family": scheme.family.value, "s": scheme.s,
            "c": scheme.c.tolist(), "b": scheme.b.tolist()}
    if args.kind == "sprk":
        co = quad.sprk_coefficients(scheme)
        data.update(kind="sprk", a=co.a.tolist(), a_bar=co.a_bar.tolist(),
                    b_bar=co.b_bar.tolist())
    else:
        co = quad.sg_coefficients(scheme)
        data.update(kind="sg", a=co.a.tolist(), a_bar=co.a_bar.tolist(),
                    b_bar=co.b_bar.tolist(), alpha=co.alpha.tolist(),
                    beta=co.beta.tolist(), gamma=co.gamma)
    if not args.out:
        # aligned text table ahead of the JSON dump
        def table(name, M):
            M = np.atleast_2d(M)
            lines = [f"{name}:"]
            for row in M:
                lines.append("  " + "  ".join(f"{v: .12f}" for v in row))
            return "\n".join(lines)
        for name in ("c", "b", "a", "a_bar", "b_bar", "alpha", "beta"):
            if name in data:
                print(table(name, np.array(data[name])))
    _emit(None, None, data, args.out)
    return 0


def cmd_order_study(args):
    bundle = builtin_models().get(args.model)
    if bundle is None:
        raise UsageError(f"unknown model {args.model!r}")
    scheme = quad.make_scheme(args.family, args.stages)
    cfg = StepperConfig(kind=SchemeKind(args.scheme), scheme=scheme)
    h_list = np.geomspace(args.hmax, args.hmin, args.points)
    h_list = [args.T / round(args.T / h) for h in h_list]  # integer step counts
    slope, errs = measure_order(bundle, cfg, h_list, args.T)
    rows = [{"h": h, "error": e} for h, e in
            sorted(zip(sorted(h_list, reverse=True), errs))]
    summary = {"model": args.model, "scheme": args.scheme,
               "family": args.family, "stages": args.stages,
               "T": args.T, "slope": slope}
    log.info("order-study slope %.3f", slope)
    _emit(rows, ["h", "error"], summary, args.out)
    return 0


def cmd_verlet_check(args):
    system = builtin_models()["harmonic"].system
    scheme = quad.make_scheme(quad.Family.GAUSS_LOBATTO, 2)
    rng = np.random.default_rng(args.seed)
    h = 0.1
    max_dev = 0.0
    for _ in range(args.samples):
        q0 = rng.uniform(-1.0, 1.0, system.dim_q)
        p0 = rng.uniform(-1.0, 1.0, system.dim_q)
        qv, pv = verlet_reference_step(system, q0, p0, h)
        U = np.zeros((2, system.dim_u))
        for kind, step in ((SchemeKind.SPRK, sprk_step), (SchemeKind.SG, sg_step)):
            cfg = StepperConfig(kind=kind, scheme=scheme)
            q1, p1, _ = step(system, cfg, q0, p0, U, h)
            max_dev = max(max_dev, float(np.max(np.abs(q1 - qv))),
                          float(np.max(np.abs(p1 - pv))))
    summary = {"samples": args.samples, "seed": args.seed, "h": h,
               "max_dev": max_dev, "pass": bool(max_dev <= 1e-10)}
    _emit(None, None, summary, args.out)
    return 0 if summary["pass"] else 1


def _hager_case(variant, T, N):
    qx, ux, _ = hager_exact(T)
    try:
        sol = solve_kkt(transcribe(hager_ocp(T=T, N=N, variant=variant)))
    except SingularKkt:
        return {"N": N, "q_error": "nan", "u_error": "nan",
                "status": "singular"}
    if sol.diverged:
        return {"N": N, "q_error": "nan", "u_error": "nan",
                "status": "diverged"}
    tt = np.linspace(0.0, T, N + 1)
    q_err = float(np.max(np.abs(sol.q[:, 0] - qx(tt))))
    c = sol.trans.ocp.scheme.c
    h = T / N
    u_err = 0.0
    for k in range(N):
        for i, ci in enumerate(c):
            u_err = max(u_err, abs(float(sol.U_stage[k, i, 0])
                                   - ux(k * h + ci * h)))
    return {"N": N, "q_error": q_err, "u_error": u_err, "status": "ok"}


def cmd_hager_experiment(args):
    n_list = _parse_int_list(args.N_list)
    rows = _parallel_map(lambda N: _hager_case(args.variant, args.T, N),
                         n_list, args.jobs)
    rows.sort(key=lambda r: r["N"])
    statuses = {r["status"] for r in rows}
    ok_rows = [r for r in rows if r["status"] == "ok"]
    summary = {"variant": args.variant, "T": args.T, "N_list": n_list,
               "statuses": sorted(statuses)}
    if len(ok_rows) >= 3:
        lN = np.log([r["N"] for r in ok_rows])
        summary["q_slope"] = float(-np.polyfit(lN, np.log([r["q_error"] for r in ok_rows]), 1)[0])
        summary["u_slope"] = float(-np.polyfit(lN, np.log([r["u_error"] for r in ok_rows]), 1)[0])
    _emit(rows, ["N", "q_error", "u_error", "status"], summary, args.out)
    return 0 if statuses == {"ok"} else 2


def _read_config(path):
    opts = {}
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"bad config line {raw.rstrip()!r}")
            key, val = line.split("=", 1)
            opts[key.strip()] = val.strip()
    return opts


def cmd_solve_ocp(args):
    opts = _read_config(args.config) if args.config else {}
    # flags override file values
    for key in ("model", "scheme", "family", "stages", "T", "N", "variant"):
        val = getattr(args, key)
        if val is not None:
            opts[key] = val
    model = opts.get("model", "hager")
    if model == "hager":
        ocp = hager_ocp(T=float(opts.get("T", 1.0)), N=int(opts.get("N", 16)),
                        variant=opts.get("variant", "c3t3"))
    else:
        bundle = builtin_models().get(model)
        if bundle is None or bundle.cost is None:
            raise UsageError(f"model {model!r} has no optimal control setup")
        scheme = quad.make_scheme(opts.get("family", "lobatto"),
                                  int(opts.get("stages", 3)))
        ocp = OcpDefinition(system=bundle.system, cost=bundle.cost,
                            q0=bundle.q0, p0=bundle.p0,
                            T=float(opts.get("T", 1.0)), N=int(opts.get("N", 16)),
                            kind=SchemeKind(opts.get("scheme", "sg")),
                            scheme=scheme)
    trans = transcribe(ocp)
    try:
        sol = solve_kkt(trans, init_strategy=opts.get("init", "forward-sim"))
    except SingularKkt as exc:
        log.info("singular KKT: %s", exc)
        _emit(None, None, {"model": model, "status": "singular",
                           "detail": str(exc)}, args.out)
        return 2
    rows = []
    h = ocp.h
    for k in range(ocp.N + 1):
        row = {"k": k, "t": k * h}
        for j in range(trans.layout.n):
            row[f"q{j}"] = float(sol.q[k, j])
            row[f"p{j}"] = float(sol.p[k, j])
        rows.append(row)
    fields = list(rows[0].keys())
    status = "diverged" if sol.diverged else "ok"
    summary = {"model": model, "variant": ocp.variant, "N": ocp.N, "T": ocp.T,
               "status": status, "cost": trans.cost(sol.z),
               "iterations": sol.iterations, "kkt_residual": sol.residual,
               "max_control": sol.max_control}
    _emit(rows, fields, summary, args.out)
    return 2 if sol.diverged else 0


def cmd_commutation_check(args):
    n_list = _parse_int_list(args.N_list)
    if args.family != "lobatto" or args.stages != 3:
        # generic path: build the OCP on the requested scheme with stage-node
        # controls and costs, Hager dynamics
        scheme = quad.make_scheme(args.family, args.stages)
        bundle = builtin_models()["hager"]

        def make(N):
            return OcpDefinition(system=bundle.system, cost=bundle.cost,
                                 q0=bundle.q0, p0=bundle.p0, T=args.T, N=N,
                                 kind=SchemeKind.SG, scheme=scheme)
    else:
        def make(N):
            return hager_ocp(T=args.T, N=N, variant=args.variant)

    reports = _parallel_map(lambda N: commutation_check(make(N)), n_list,
                            args.jobs)
    rows = [{"N": r.N, "adjoint_residual": r.adjoint_residual,
             "deviation_lam": r.deviation_lam, "deviation_psi": r.deviation_psi,
             "roundtrip": r.roundtrip, "tolerance": r.tolerance,
             "pass": r.passed} for r in sorted(reports, key=lambda r: r.N)]
    all_pass = all(r.passed for r in reports)
    summary = {"family": args.family, "stages": args.stages, "T": args.T,
               "N_list": n_list, "pass": all_pass,
               "result": "PASS" if all_pass else "FAIL"}
    _emit(rows, ["N", "adjoint_residual", "deviation_lam", "deviation_psi",
                 "roundtrip", "tolerance", "pass"], summary, args.out)
    return 0 if all_pass else 1


# -- parser ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="hovic",
        description="Variational integrators and optimal control experiments.")
    p.add_argument("--out", help="CSV output path; JSON summary lands beside it")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel workers for sweep subcommands")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("coefficients",
                       help="dump nodes, weights and coefficient tables "
                            "(JSON; aligned table on stdout)")
    c.add_argument("--family", required=True,
                   choices=[f.value for f in quad.Family])
    c.add_argument("--stages", type=int, required=True)
    c.add_argument("--kind", choices=["sprk", "sg"], default="sg")
    c.set_defaults(fn=cmd_coefficients)

    o = sub.add_parser("order-study",
                       help="empirical convergence order; CSV schema v1: h,error")
    o.add_argument("--model", required=True)
    o.add_argument("--scheme", choices=["sprk", "sg"], required=True)
    o.add_argument("--family", required=True,
                   choices=[f.value for f in quad.Family])
    o.add_argument("--stages", type=int, required=True)
    o.add_argument("--hmin", type=float, default=0.025)
    o.add_argument("--hmax", type=float, default=0.2)
    o.add_argument("--points", type=int, default=4)
    o.add_argument("--T", type=float, default=2.0)
    o.set_defaults(fn=cmd_order_study)

    v = sub.add_parser("verlet-check",
                       help="both schemes at two Lobatto stages reduce to "
                            "velocity Verlet (JSON: max_dev, pass)")
    v.add_argument("--samples", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(fn=cmd_verlet_check)

    hg = sub.add_parser("hager-experiment",
                        help="benchmark convergence per cost variant; CSV "
                             "schema v1: N,q_error,u_error,status")
    hg.add_argument("--variant", default="c3t3")
    hg.add_argument("--N-list", dest="N_list", default="8,16,32,64")
    hg.add_argument("--T", type=float, default=1.0)
    hg.set_defaults(fn=cmd_hager_experiment)

    so = sub.add_parser("solve-ocp",
                        help="solve one optimal control problem; CSV schema "
                             "v1: k,t,q*,p*")
    so.add_argument("--config", help="key=value file; flags override")
    so.add_argument("--model")
    so.add_argument("--scheme", choices=["sprk", "sg"])
    so.add_argument("--family", choices=[f.value for f in quad.Family])
    so.add_argument("--stages", type=int)
    so.add_argument("--T", type=float)
    so.add_argument("--N", type=int)
    so.add_argument("--variant")
    so.set_defaults(fn=cmd_solve_ocp)

    cc = sub.add_parser("commutation-check",
                        help="KKT multipliers vs discretized adjoint system; "
                             "CSV schema v1: N,adjoint_residual,deviation_lam,"
                             "deviation_psi,roundtrip,tolerance,pass")
    cc.add_argument("--N-list", dest="N_list", default="8,16,32")
    cc.add_argument("--stages", type=int, default=3)
    cc.add_argument("--family", default="lobatto",
                    choices=[f.value for f in quad.Family])
    cc.add_argument("--variant", default="c3t3")
    cc.add_argument("--T", type=float, default=1.0)
    cc.set_defaults(fn=cmd_commutation_check)
    return p


def run(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SingularKkt as exc:
        log.info("singular KKT: %s", exc)
        print(json.dumps({"status": "singular", "detail": str(exc)}))
        return 2
    except HovicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

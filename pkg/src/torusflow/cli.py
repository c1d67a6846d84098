"""Batch front end for complex Hessian flows on flat tori.

Exit codes: 0 success/converged, 1 bad input, 2 cone exit, 3 t_max reached,
4 not a subsolution, 5 oracle failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, flow, oracle, report, torus
from .config import ConfigError, parse
from .ops import Case, DomainError, Kind, classify

log = logging.getLogger("torusflow")

EXIT_OK, EXIT_INPUT, EXIT_CONE, EXIT_TMAX, EXIT_NOT_SUBSOL, EXIT_ORACLE = range(6)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _finite(x):
    return float(x) if x is not None and np.isfinite(x) else None


def _dump(path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def cmd_run(args):
    exp = parse(args.config)
    out = Path(args.out) if args.out else exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    problem = exp.problem()
    geom = exp.geom

    def snap(state):
        torus.write_field(out / f"snapshot_{state.step_count:06d}.hfld", geom, state.u)

    summary = {"config": exp.resolved}
    try:
        res = flow.run(problem, exp.u0, exp.params, u_under=exp.u_under, on_snapshot=snap)
    except flow.ConeExitError as exc:
        flow.write_csv(out / "diagnostics.csv", exc.records)
        summary.update(converged=False, reason="cone_exit", message=str(exc))
        _dump(out / "summary.json", summary)
        print(f"cone exit: {exc}", file=sys.stderr)
        return EXIT_CONE
    except DomainError as exc:
        print(f"initial data u0 not admissible: {exc}", file=sys.stderr)
        return EXIT_INPUT
    flow.write_csv(out / "diagnostics.csv", res.records)
    torus.write_field(out / "final_u.hfld", geom, res.u_tilde)
    last = res.records[-1]
    try:
        eta, r2 = flow.fit_decay(res.records)
    except flow.AlreadyConverged:
        eta = r2 = None
    mp = flow.monitor_max_principle(res.records) if len(res.records) > 1 else True
    summary.update(converged=res.converged, reason=res.reason, c=last.c_t, eta=eta, r2=r2,
                   residual=last.residual, osc_dtu=last.osc_dtu, t=res.state.t,
                   steps=res.state.step_count, rejected_steps=res.state.rejected,
                   max_principle=mp, warnings=res.warnings)
    _dump(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("converged", "reason", "c", "eta", "r2", "residual")},
                     default=_json_default))
    return EXIT_OK if res.converged else EXIT_TMAX


def cmd_check(args):
    exp = parse(args.config)
    geom, op = exp.geom, exp.op
    u_under = exp.u_under if exp.u_under is not None else geom.zeros()
    try:
        rep = analysis.check_subsolution(geom, exp.chi, op, exp.psi, u_under)
        body = rep.to_json()
        if classify(op) is Case.BOUNDED:
            chi_prime = exp.chi.field(geom) + torus.complex_hessian(geom, u_under)
            pos = analysis.check_positivity_condition(geom, chi_prime, op, exp.psi)
            body["positivity"] = pos.to_json()
    except DomainError as exc:
        print(f"subsolution candidate not admissible: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out) if args.out else exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "check.json", body)
    print(json.dumps(body, default=_json_default))
    return EXIT_OK if rep.is_subsolution else EXIT_NOT_SUBSOL


def cmd_oracle(args):
    exp = parse(args.config)
    out = Path(args.out) if args.out else exp.out_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = oracle.newton_oracle(exp.geom, exp.chi, exp.op, exp.psi, exp.u0)
    except oracle.OracleFailure as exc:
        _dump(out / "oracle.json", {"success": False, "message": str(exc)})
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    torus.write_field(out / "oracle_u.hfld", exp.geom, res.u)
    body = {"success": True, "c_star": res.c, "residual": res.residual,
            "iterations": res.iterations, "krylov_iterations": res.krylov_iterations}
    flow_file = out / "final_u.hfld"
    if flow_file.exists():
        _, uf = torus.read_field(flow_file)
        body["flow_diff_sup"] = float(np.max(np.abs(flow.normalize(exp.geom, uf) - res.u)))
    _dump(out / "oracle.json", body)
    print(json.dumps(body, default=_json_default))
    return EXIT_OK


def constants_report(exp):
    geom, op, chi = exp.geom, exp.op, exp.chi
    ints = torus.class_integrals(geom, chi.field(geom))
    stripped = torus.class_integrals(geom, chi.stripped().field(geom))
    body = {"operator": op.to_dict(), "volume": geom.volume,
            "class_integrals": ints.tolist(), "class_integrals_stripped": stripped.tolist()}
    k = op.cone(geom.n)
    if op.kind in (Kind.J_QUOTIENT, Kind.MIXED_HESSIAN):
        body["c"] = torus.cohomology_constant(geom, chi, op)
        body["meaning"] = "operator constant for which psi = 0 is compatible"
    elif op.kind in (Kind.LOG_QUOTIENT, Kind.INV_QUOTIENT):
        body["class_ratio"] = torus.cohomology_constant(geom, chi, op)
        body["meaning"] = "class ratio entering the hypothesis on psi"
    elif op.kind in (Kind.LOG_MA, Kind.LOG_HESSIAN):
        body["c"] = float(np.log(ints[k] / torus.integrate(geom, np.exp(exp.psi))))
        body["meaning"] = "stationary constant c in sigma_k = exp(psi + c)"
    else:
        body["c"] = float((ints[1] - torus.integrate(geom, exp.psi)) / geom.volume)
        body["meaning"] = "stationary constant c in sigma_1 = psi + c"
    return body


def cmd_constants(args):
    exp = parse(args.config)
    try:
        body = constants_report(exp)
    except torus.ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(json.dumps(body, indent=2, default=_json_default))
    return EXIT_OK


def cmd_plotdata(args):
    try:
        paths = report.write_plotdata(args.run_dir, args.out, figures=not args.no_figures)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="torusflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("run", cmd_run, "integrate the flow"),
                            ("check", cmd_check, "check the subsolution / positivity hypotheses"),
                            ("oracle", cmd_oracle, "solve the stationary equation by Newton"),
                            ("constants", cmd_constants, "print cohomological constants")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config")
        if name != "constants":
            s.add_argument("--out", help="output directory (overrides outputs.dir)")
        s.set_defaults(func=fn)
    s = sub.add_parser("plotdata", help="export time series and figures from a run directory")
    s.add_argument("run_dir")
    s.add_argument("--out", help="destination (default RUN_DIR/plotdata)")
    s.add_argument("--no-figures", action="store_true", help="skip the PNG figures")
    s.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

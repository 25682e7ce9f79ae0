"""Command line front end for designs, set suites, simulations and verification.

Exit codes: 0 success, 1 verification failure, 2 usage or input error,
3 computation error (infeasible design, set recursion failure, ...).
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from .invariant_sets import SetSuite, build_set_suite
from .lyapunov_design import AssumptionViolation, DesignResult, solve_design
from .model import example_model
from .simulator import (
    Artifacts,
    ScenarioConfig,
    Trace,
    build_artifacts,
    model_from_config,
    run_scenario,
    sweep_filter_gain,
    verify_trace,
)

log = logging.getLogger("iampc")


def _load_model(path):
    """``example`` or a JSON model file (``X``/``U`` as polytopes or lower/upper boxes)."""
    if path in (None, "example"):
        return example_model()
    with open(path) as fh:
        return model_from_config(json.load(fh))


def _matrix(text, name):
    if text is None:
        return None
    try:
        return np.atleast_2d(np.array(json.loads(text), dtype=float))
    except (ValueError, TypeError) as exc:
        raise SystemExit(f"--{name}: expected a JSON matrix, got {text!r} ({exc})")


def cmd_design(args) -> int:
    model = _load_model(args.model)
    design = solve_design(model, _matrix(args.Q, "Q"), _matrix(args.R, "R"), args.eps,
                          objective=args.objective, gain=_matrix(args.gain, "gain"))
    design.save(args.out)
    print(f"design written to {args.out}: slack {design.slack:.3e}, "
          f"block min eigenvalue {design.block_min_eig:.3e}")
    return 0


def cmd_sets(args) -> int:
    model = _load_model(args.model)
    design = DesignResult.load(args.design)
    suite = build_set_suite(model, design, max_iter=args.max_iter, h_max=args.h_max,
                            horizon=args.horizon)
    suite.save(args.out)
    print(f"N = {suite.N}")
    print(f"C: {suite.C.n_rows} rows, X_N: {suite.X_N.n_rows} rows, written to {args.out}")
    return 0


def _artifacts(cfg, args):
    if args.design and args.sets:
        model = model_from_config(cfg.model)
        return Artifacts(model, DesignResult.load(args.design), SetSuite.load(args.sets))
    return build_artifacts(cfg)


def cmd_simulate(args) -> int:
    cfg = ScenarioConfig.load(args.config)
    cfg.output_dir = args.out
    art = _artifacts(cfg, args)
    traces = run_scenario(cfg, art)
    art.design.save(os.path.join(args.out, "design.json"))
    art.suite.save(os.path.join(args.out, "sets"))
    cfg.save(os.path.join(args.out, "config.json"))
    print(f"{len(traces)} traces written to {args.out} (N = {art.suite.N})")
    return 0


def cmd_verify(args) -> int:
    cfg = ScenarioConfig.load(os.path.join(args.traces, "config.json"))
    model = model_from_config(cfg.model)
    art = Artifacts(model, DesignResult.load(os.path.join(args.traces, "design.json")),
                    SetSuite.load(os.path.join(args.traces, "sets")))
    stems = sorted(p[:-4] for p in glob.glob(os.path.join(args.traces, "trace_*.csv")))
    if not stems:
        print("no traces found", file=sys.stderr)
        return 2
    reports = {}
    for stem in stems:
        reports[os.path.basename(stem)] = verify_trace(Trace.load(stem), art).to_dict()
    passed = all(r["passed"] for r in reports.values())
    out = {"passed": passed, "n_traces": len(reports),
           "gamma_hat": max(r["gamma_hat"] for r in reports.values()),
           "traces": reports}
    text = json.dumps(out, indent=1, default=float)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(f"verification {'PASSED' if passed else 'FAILED'} on {len(reports)} traces")
    for name, r in reports.items():
        for f in r["failures"]:
            print(f"  {name}: {f}")
    return 0 if passed else 1


def cmd_sweep(args) -> int:
    cfg = ScenarioConfig.load(args.config)
    art = _artifacts(cfg, args)
    res = sweep_filter_gain(cfg, args.gains, art)
    res.to_csv(args.out)
    for g, steps in res.settling_by_gain().items():
        vals = [s for s in steps if s is not None]
        print(f"gain {g:g}: mean settling step "
              f"{np.mean(vals) if vals else float('nan'):.2f} over {len(steps)} runs")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iampc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="solve the terminal cost/gain LMI")
    d.add_argument("--model", default="example", help="model JSON or 'example'")
    d.add_argument("--Q", help="state weight as JSON, default identity")
    d.add_argument("--R", help="input weight as JSON, default identity")
    d.add_argument("--eps", type=float, default=None, help="LMI margin")
    d.add_argument("--objective", choices=["margin", "cost"], default="margin")
    d.add_argument("--gain", help="fixed terminal gain as JSON, e.g. '[[1.0, 0.8]]'")
    d.add_argument("--out", default="design.json")
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("sets", help="invariant sets and minimal horizon")
    s.add_argument("--model", default="example")
    s.add_argument("--design", required=True)
    s.add_argument("--out", default="sets")
    s.add_argument("--horizon", type=int, default=None)
    s.add_argument("--max-iter", type=int, default=200)
    s.add_argument("--h-max", type=int, default=50)
    s.set_defaults(func=cmd_sets)

    for name, fn, hlp in (("simulate", cmd_simulate, "closed-loop runs"),
                          ("sweep", cmd_sweep, "compare estimator filter gains")):
        q = sub.add_parser(name, help=hlp)
        q.add_argument("--config", required=True, help="scenario JSON")
        q.add_argument("--design", help="reuse a design file")
        q.add_argument("--sets", help="reuse a set-suite directory")
        q.set_defaults(func=fn)
        if name == "simulate":
            q.add_argument("--out", default="run")
        else:
            q.add_argument("--gains", type=float, nargs="+", default=[0.5, 0.05])
            q.add_argument("--out", default="sweep.csv")

    v = sub.add_parser("verify", help="check traces written by simulate")
    v.add_argument("--traces", required=True, help="output directory of simulate")
    v.add_argument("--out", help="report JSON path")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except AssumptionViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Minimal horizon of the example model for several terminal designs.

The design LMI at ``Q = I``, ``R = 1`` has many solutions; the terminal gain
it returns shapes the terminal set and hence the minimal horizon.  This
script prints the horizon for the two built-in objectives and for a grid of
common gains ``K = [k1, k2]`` that the LMI certifies.

    python demos/horizon_sensitivity.py --k1 0.75 1.25 0.25 --k2 0.6 1.0 0.2
"""

import argparse
import itertools
import time

import numpy as np

from iampc import AssumptionViolation, build_set_suite, example_model, solve_design
from iampc.invariant_sets import SetSuiteError


def horizon(model, design):
    try:
        return build_set_suite(model, design).N
    except SetSuiteError as exc:
        return f"none ({exc.stage})"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k1", type=float, nargs=3, default=[0.75, 1.25, 0.25],
                   metavar=("START", "STOP", "STEP"))
    p.add_argument("--k2", type=float, nargs=3, default=[0.6, 1.0, 0.2],
                   metavar=("START", "STOP", "STEP"))
    args = p.parse_args()
    model = example_model()
    for objective in ("margin", "cost"):
        d = solve_design(model, objective=objective)
        print(f"objective={objective:6s}  K_1={np.round(d.K[0], 3).tolist()}  "
              f"N={horizon(model, d)}")

    k1 = np.arange(args.k1[0], args.k1[1] + 1e-9, args.k1[2])
    k2 = np.arange(args.k2[0], args.k2[1] + 1e-9, args.k2[2])
    print(f"\n{'k1':>6} {'k2':>6} {'slack':>11} {'N':>4}  time")
    for a, b in itertools.product(k1, k2):
        t0 = time.perf_counter()
        try:
            d = solve_design(model, gain=[[a, b]])
        except AssumptionViolation:
            print(f"{a:6.2f} {b:6.2f} {'infeasible':>11}")
            continue
        print(f"{a:6.2f} {b:6.2f} {d.slack:11.2e} {horizon(model, d)!s:>4}  "
              f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()

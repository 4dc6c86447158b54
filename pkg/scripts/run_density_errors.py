#!/usr/bin/env python3
"""Density-approximation error grids for the benchmark models.

Writes one CSV per model with the max absolute error of the order-J
expansion against the exact transition density, over Delta in
{1/12, 1/52, 1/252} and J = 1..6 (plus the Lamperti variant for the
square-root model).  Equivalent to `difflik bench density --kind ...`
for each model.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from difflik.benchmarks import error_experiment, write_error_csv
from difflik.models import PRESET_THETA


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument(
        "--kinds", default="mrou,sqr,dmrou", help="comma-separated model kinds"
    )
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    deltas = [1 / 12, 1 / 52, 1 / 252]
    Js = [1, 2, 3, 4, 5, 6]
    for kind in args.kinds.split(","):
        theta = PRESET_THETA[kind]
        grids = error_experiment(kind, theta, deltas, Js)
        path = os.path.join(args.out, f"density_errors_{kind}.csv")
        write_error_csv(grids, path)
        print(f"wrote {path}")
        if kind == "sqr":
            grids = error_experiment(kind, theta, deltas, Js, lamperti=True)
            path = os.path.join(args.out, f"density_errors_{kind}_lamperti.csv")
            write_error_csv(grids, path)
            print(f"wrote {path}")


if __name__ == "__main__":
    main()

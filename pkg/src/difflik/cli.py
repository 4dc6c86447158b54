"""Command-line interface: expand / fit / simulate / bench / pcond.

All numeric results are written to files (JSON or CSV) in the output
directory, together with a manifest recording the inputs, seed, tool
version, and wall time.  Exit codes: 0 success, 1 user error (one-line
diagnostic on stderr), 2 internal error (context trace on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import traceback
import warnings

import numpy as np

from . import __version__
from .benchmarks import (
    DEFAULT_X0,
    error_experiment,
    mle_experiment,
    simulate,
    summary_for_json,
    write_error_csv,
    write_mle_csv,
)
from .expansion import (
    ExpansionContext,
    build_expansion,
    build_lamperti_expansion,
)
from .ito import conditional_product_expectation
from .likelihood import FitOptions, ObservationSeries, fit
from .models import PRESET_THETA, builtin_model, load_model

__all__ = ["main"]


class UserError(Exception):
    """Invalid input; reported as a one-line diagnostic, exit code 1."""


def _parse_floats(text, name):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UserError(f"--{name} must be a comma-separated list of numbers, got {text!r}")


def _get_model(args):
    if getattr(args, "model", None):
        try:
            return load_model(args.model)
        except FileNotFoundError:
            raise UserError(f"model file not found: {args.model}")
        except (ValueError, KeyError) as e:
            raise UserError(f"bad model file {args.model}: {e}")
    if getattr(args, "kind", None):
        return builtin_model(args.kind)
    raise UserError("give either --model FILE or --kind mrou|sqr|dmrou")


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("DIFFLIK_THREADS")
    return int(env) if env else 1


def _outdir(args):
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(outdir, args, t0, outputs, extra=None):
    manifest = {
        "tool": "difflik",
        "version": __version__,
        "argv": sys.argv[1:],
        "subcommand": args.cmd,
        "seed": getattr(args, "seed", None),
        "wall_time_s": round(time.time() - t0, 3),
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _read_series(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise UserError(f"{path}: empty data file")
            if not header or header[0].strip() != "t":
                raise UserError(f"{path}:1: header must start with 't', got {header!r}")
            m = len(header) - 1
            if m < 1 or [h.strip() for h in header[1:]] != [f"x{i+1}" for i in range(m)]:
                raise UserError(f"{path}:1: header must be t,x1..x{max(m,1)}")
            ts, xs = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != m + 1:
                    raise UserError(f"{path}:{lineno}: expected {m + 1} columns, got {len(row)}")
                try:
                    ts.append(float(row[0]))
                    xs.append([float(v) for v in row[1:]])
                except ValueError as e:
                    raise UserError(f"{path}:{lineno}: {e}")
    except OSError as e:
        raise UserError(f"cannot read {path}: {e}")
    if len(ts) < 2:
        raise UserError(f"{path}: need at least two observations")
    ts = np.asarray(ts)
    dt = np.diff(ts)
    if np.any(dt <= 0):
        raise UserError(f"{path}: time column must be strictly increasing")
    delta = float(dt[0])
    if np.any(np.abs(dt - delta) > 1e-9 * max(abs(delta), 1.0)):
        raise UserError(f"{path}: sampling interval is not uniform (need 1e-9 relative)")
    return ObservationSeries(delta, np.asarray(xs))


def _write_series(series, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i+1}" for i in range(series.m)])
        for i, row in enumerate(series.x):
            w.writerow([repr(float(i * series.delta))] + [repr(float(v)) for v in row])


def _poly_json(poly):
    return {
        ",".join(str(k) for k in e): (float(c) if not isinstance(c, np.ndarray) else float(c.reshape(-1)[0]))
        for e, c in sorted(poly.terms.items())
    }


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def _cmd_expand(args):
    t0 = time.time()
    model = _get_model(args)
    theta = _parse_floats(args.theta, "theta")
    x0 = _parse_floats(args.x0, "x0")
    if len(x0) != model.m:
        raise UserError(f"--x0 needs {model.m} coordinates for this model")
    outdir = _outdir(args)
    outputs = []
    if args.lamperti:
        wrapper = build_lamperti_expansion(model, theta, x0[0], args.order, threads=_threads(args))
        expn = wrapper.z_expansion
        evaluator = wrapper
    else:
        ctx = ExpansionContext(model, model.theta_map(theta), np.asarray(x0))
        expn = build_expansion(ctx, args.order, threads=_threads(args))
        evaluator = expn
    doc = {
        "model": model.name,
        "theta": dict(zip(model.params, theta)),
        "x0": list(x0),
        "order": args.order,
        "lamperti": bool(args.lamperti),
        "Sigma": expn.context.Sigma[0].tolist(),
        "detD": float(expn.context.detD[0]),
        "omega": {str(t.k): _poly_json(t.q) for t in expn.terms},
        "note": "omega[k] maps monomial exponents of y to the coefficient of "
        "q_k; the full correction is q_k(y) * gaussian(y; Sigma)",
    }
    path = os.path.join(outdir, "expansion.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    outputs.append(path)
    if args.emit_grid:
        if model.m != 1 and args.lamperti:
            raise UserError("--emit-grid with --lamperti needs a 1-D model")
        delta = args.delta
        mean = np.asarray(x0, dtype=float)
        sd = np.sqrt(np.diag(expn.context.Sigma[0])) / expn.context.D[0] * np.sqrt(delta)
        axes = [np.linspace(mean[d] - 4 * sd[d], mean[d] + 4 * sd[d], 201) for d in range(model.m)]
        lo = model.state_space
        axes = [np.clip(a, lo[d][0] + 1e-12, lo[d][1] - 1e-12) for d, a in enumerate(axes)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        vals = np.asarray(
            evaluator.evaluate(delta, pts[:, 0] if args.lamperti else pts)
        ).reshape(-1)
        gpath = os.path.join(outdir, "density_grid.csv")
        with open(gpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i+1}" for i in range(model.m)] + ["density"])
            for row, v in zip(pts, vals):
                w.writerow([repr(float(c)) for c in row] + [repr(float(v))])
        outputs.append(gpath)
    outputs.append(_write_manifest(outdir, args, t0, outputs))
    return 0


def _cmd_fit(args):
    t0 = time.time()
    model = _get_model(args)
    series = _read_series(args.data)
    if series.m != model.m:
        raise UserError(f"data has {series.m} state columns but the model has m={model.m}")
    start = _parse_floats(args.start, "start")
    if len(start) != len(model.params):
        raise UserError(f"--start needs {len(model.params)} values ({','.join(model.params)})")
    box = None
    if args.box:
        vals = _parse_floats(args.box.replace("inf", "1e400").replace("-inf", "-1e400"), "box")
        if len(vals) != 2 * len(model.params):
            raise UserError("--box needs lo,hi per parameter")
        box = tuple((vals[2 * i], vals[2 * i + 1]) for i in range(len(model.params)))
    options = FitOptions(lamperti=args.lamperti, threads=_threads(args))
    best = None
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    starts = [np.asarray(start, float)]
    for _ in range(args.restarts):
        starts.append(starts[0] * np.exp(rng.normal(0, 0.3, len(start))))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in starts:
            report = fit(model, series, args.order, s, box=box, options=options)
            if best is None or report.loglik > best.loglik:
                best = report
    outdir = _outdir(args)
    path = os.path.join(outdir, "estimate.json")
    doc = best.as_dict()
    doc.update({"order": args.order, "model": model.name, "n": series.n, "delta": series.delta})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
    _write_manifest(outdir, args, t0, [path])
    print(json.dumps(doc))
    return 0


def _cmd_simulate(args):
    t0 = time.time()
    theta = _parse_floats(args.theta, "theta") if args.theta else PRESET_THETA[args.kind]
    x0 = (
        np.asarray(_parse_floats(args.x0, "x0"))
        if args.x0
        else DEFAULT_X0[args.kind]
    )
    if args.seed is None:
        raise UserError("--seed is required for reproducible simulation")
    try:
        series = simulate(args.kind, theta, args.delta, args.n, x0, args.seed)
    except ValueError as e:
        raise UserError(str(e))
    outdir = _outdir(args)
    path = os.path.join(outdir, "series.csv")
    _write_series(series, path)
    _write_manifest(outdir, args, t0, [path], extra={"theta": list(theta), "x0": list(map(float, x0))})
    return 0


def _cmd_bench(args):
    t0 = time.time()
    theta = _parse_floats(args.theta, "theta") if args.theta else PRESET_THETA[args.kind]
    outdir = _outdir(args)
    outputs = []
    if args.what == "density":
        deltas = [1 / 12, 1 / 52, 1 / 252]
        Js = [1, 2, 3, 4, 5, 6]
        grids = error_experiment(args.kind, theta, deltas, Js)
        path = os.path.join(outdir, "density_errors.csv")
        write_error_csv(grids, path)
        outputs.append(path)
        if args.kind == "sqr":
            lgrids = error_experiment(args.kind, theta, deltas, Js, lamperti=True)
            lpath = os.path.join(outdir, "density_errors_lamperti.csv")
            write_error_csv(lgrids, lpath)
            outputs.append(lpath)
    else:  # mle
        N = 5000 if args.full_n else 500
        seed = args.seed if args.seed is not None else 20240
        Js = [int(j) for j in args.orders.split(",")] if args.orders else [6]
        summary = mle_experiment(args.kind, theta, args.delta, args.n, N, Js, seed)
        cpath = os.path.join(outdir, "estimates.csv")
        write_mle_csv(summary, cpath)
        jpath = os.path.join(outdir, "mle_summary.json")
        with open(jpath, "w") as fh:
            json.dump(summary_for_json(summary), fh, indent=2)
        outputs += [cpath, jpath]
    outputs.append(_write_manifest(outdir, args, t0, outputs))
    return 0


def _cmd_pcond(args):
    """Debug helper: canonical text of the conditional-moment polynomial
    P(z) = E(prod J_i(1) | W(1) = z) for ';'-separated comma-index lists."""
    indices = []
    for part in args.indices.split(";"):
        part = part.strip()
        if not part:
            raise UserError("empty index in --indices")
        try:
            indices.append(tuple(int(v) for v in part.split(",")))
        except ValueError:
            raise UserError(f"bad index {part!r}; expected comma-separated entries like 0,1,1")
    m = args.m or max((max(i, default=1) for i in indices), default=1)
    m = max(m, 1)
    for i in indices:
        if any(not 0 <= e <= m for e in i):
            raise UserError(f"index {i} has entries outside 0..{m}")
    p = conditional_product_expectation(indices, m)
    print(p.canonical_str("z"))
    return 0


# ---------------------------------------------------------------------------


def _build_parser():
    p = argparse.ArgumentParser(
        prog="difflik",
        description="Closed-form transition-density expansions and approximate "
        "MLE for diffusion processes.",
    )
    p.add_argument("--version", action="version", version=f"difflik {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, kind_default=None):
        sp.add_argument("--out", help="output directory (default: current)")
        sp.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads (default: DIFFLIK_THREADS or 1)",
        )

    sp = sub.add_parser("expand", help="emit the correction polynomials Omega_0..Omega_J")
    sp.add_argument("--model", help="TOML model file")
    sp.add_argument("--kind", choices=["mrou", "sqr", "dmrou"], help="builtin model")
    sp.add_argument("--theta", required=True, help="comma-separated parameter values")
    sp.add_argument("--x0", required=True, help="comma-separated backward state")
    sp.add_argument("--order", type=int, required=True)
    sp.add_argument("--lamperti", action="store_true")
    sp.add_argument("--emit-grid", action="store_true", help="also write a density grid CSV")
    sp.add_argument("--delta", type=float, default=1 / 52, help="interval for --emit-grid")
    common(sp)
    sp.set_defaults(func=_cmd_expand)

    sp = sub.add_parser("fit", help="approximate MLE from a CSV observation series")
    sp.add_argument("--model", help="TOML model file")
    sp.add_argument("--kind", choices=["mrou", "sqr", "dmrou"], help="builtin model")
    sp.add_argument("--data", required=True, help="CSV with header t,x1..xm")
    sp.add_argument("--order", type=int, required=True)
    sp.add_argument("--start", required=True, help="comma-separated start values")
    sp.add_argument("--box", help="comma-separated lo,hi per parameter (inf allowed)")
    sp.add_argument("--lamperti", action="store_true")
    sp.add_argument("--restarts", type=int, default=0)
    sp.add_argument("--seed", type=int, default=None, help="seed for restart jitter")
    common(sp)
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("simulate", help="exact-law benchmark path to CSV")
    sp.add_argument("--kind", choices=["mrou", "sqr", "dmrou"], required=True)
    sp.add_argument("--theta", help="comma-separated values (default: preset)")
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--x0", help="comma-separated start state (default: preset)")
    sp.add_argument("--seed", type=int, required=True)
    common(sp)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("bench", help="standard experiments (density errors / MLE table)")
    sp.add_argument("what", choices=["density", "mle"])
    sp.add_argument("--kind", choices=["mrou", "sqr", "dmrou"], required=True)
    sp.add_argument("--preset", choices=["standard"], default="standard", help="parameter preset")
    sp.add_argument("--theta", help="override preset parameters")
    sp.add_argument("--delta", type=float, default=1 / 52)
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--orders", help="comma-separated J list for bench mle (default 6)")
    sp.add_argument("--full-n", action="store_true", help="N=5000 replications instead of 500")
    sp.add_argument("--seed", type=int, default=None)
    common(sp)
    sp.set_defaults(func=_cmd_bench)

    sp = sub.add_parser(
        "pcond", help="print the conditional-moment polynomial for given indices"
    )
    sp.add_argument(
        "--indices",
        required=True,
        help="';'-separated indices, each a comma list over 0..m, e.g. '1,1;0,2'",
    )
    sp.add_argument("--m", type=int, default=None, help="Brownian dimension")
    sp.set_defaults(func=_cmd_pcond)
    return p


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UserError as e:
        print(f"difflik: error: {e}", file=sys.stderr)
        return 1
    except Exception:
        print("difflik: internal error:", file=sys.stderr)
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())

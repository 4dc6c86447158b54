"""Benchmark models with exact transition laws, plus the two standard
experiment harnesses: density-error grids and the Monte Carlo MLE protocol.

Three kinds are supported:
  * mrou  — mean-reverting Ornstein-Uhlenbeck (Gaussian transitions),
  * sqr   — square-root process (noncentral-chi-square transitions),
  * dmrou — planar double mean-reverting model (bivariate Gaussian).

All sampling uses the counter-based Philox generator so streams are
reproducible across platforms; replications draw independent substreams
spawned from the experiment seed.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov
from scipy.special import gammaln, ive

from .expansion import ExpansionContext, build_expansion, build_lamperti_expansion
from .likelihood import (
    EstimateReport,
    FitOptions,
    ObservationSeries,
    fisher_information_dmrou,
    fisher_information_mrou,
    fit,
    maximize_loglik,
)
from .models import PRESET_THETA, builtin_model

__all__ = [
    "BenchmarkModel",
    "ErrorGrid",
    "benchmark",
    "exact_density",
    "exact_loglik",
    "simulate",
    "euler_simulate",
    "error_experiment",
    "mle_experiment",
    "DEFAULT_X0",
]

# Backward states for the error grids: generic interior points, about one
# stationary standard deviation away from the long-run mean so that
# first-order corrections are active.
DEFAULT_X0 = {
    "mrou": np.array([0.09]),
    "sqr": np.array([0.06]),
    "dmrou": np.array([0.3, -0.2]),
}


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# Exact transition laws.
# ---------------------------------------------------------------------------


def _mrou_moments(theta, delta, x0):
    kappa, alpha, sigma = theta
    e1 = np.exp(-kappa * delta)
    mean = alpha + (np.asarray(x0) - alpha) * e1
    var = sigma**2 * (1 - np.exp(-2 * kappa * delta)) / (2 * kappa)
    return mean, var


def _mrou_density(theta, delta, x, x0):
    mean, var = _mrou_moments(theta, delta, x0)
    return np.exp(-((np.asarray(x) - mean) ** 2) / (2 * var)) / np.sqrt(2 * math.pi * var)


def _sqr_cq(theta, delta):
    kappa, alpha, sigma = theta
    if 2 * kappa * alpha <= sigma**2:
        raise ValueError("Feller condition 2*kappa*alpha > sigma^2 violated")
    c = 2 * kappa / (sigma**2 * (1 - math.exp(-kappa * delta)))
    q = 2 * kappa * alpha / sigma**2 - 1
    return c, q


def _sqr_logdensity(theta, delta, x, x0):
    kappa, _, _ = theta
    c, q = _sqr_cq(theta, delta)
    u = c * np.asarray(x0) * math.exp(-kappa * delta)
    v = c * np.asarray(x)
    z = 2 * np.sqrt(u * v)
    # log p = log c - u - v + (q/2) log(v/u) + log I_q(z); ive = I_q(z) e^{-z}
    return np.log(c) - u - v + z + 0.5 * q * (np.log(v) - np.log(u)) + np.log(ive(q, z))


def _dmrou_K_alpha(theta):
    k11, k21, k22, alpha = theta
    # drift (k11 (a - x1), k21 (a - x1) - k22 x2) = K (m - x) with m = (a, 0)
    return np.array([[k11, 0.0], [k21, k22]]), np.array([alpha, 0.0])


def _dmrou_moments(theta, delta):
    K, a = _dmrou_K_alpha(theta)
    E = expm(-K * delta)
    S = solve_continuous_lyapunov(K, np.eye(2))
    V = S - E @ S @ E.T
    return E, a, V, S


def _dmrou_density(theta, delta, x, x0):
    E, a, V, _ = _dmrou_moments(theta, delta)
    mean = a + (np.asarray(x0) - a) @ E.T
    dx = np.asarray(x) - mean
    Vi = np.linalg.inv(V)
    quad = np.einsum("...i,ij,...j->...", dx, Vi, dx)
    return np.exp(-0.5 * quad) / (2 * math.pi * math.sqrt(np.linalg.det(V)))


def exact_density(kind, theta, delta, x, x0):
    """Exact transition density p(delta, x | x0) for a benchmark kind."""
    if kind == "mrou":
        return _mrou_density(theta, delta, np.asarray(x).reshape(-1), np.asarray(x0).reshape(-1))
    if kind == "sqr":
        return np.exp(
            _sqr_logdensity(theta, delta, np.asarray(x).reshape(-1), np.asarray(x0).reshape(-1))
        )
    if kind == "dmrou":
        return _dmrou_density(theta, delta, x, x0)
    raise ValueError(f"unknown benchmark kind {kind!r}")


def exact_loglik(kind, theta, series: ObservationSeries):
    """Exact log-likelihood of an observation series."""
    x0, x1 = series.x[:-1], series.x[1:]
    if kind == "mrou":
        mean, var = _mrou_moments(theta, series.delta, x0[:, 0])
        r = x1[:, 0] - mean
        return float(np.sum(-0.5 * np.log(2 * math.pi * var) - r**2 / (2 * var)))
    if kind == "sqr":
        return float(np.sum(_sqr_logdensity(theta, series.delta, x1[:, 0], x0[:, 0])))
    if kind == "dmrou":
        E, a, V, _ = _dmrou_moments(theta, series.delta)
        mean = a + (x0 - a) @ E.T
        dx = x1 - mean
        Vi = np.linalg.inv(V)
        quad = np.einsum("ni,ij,nj->n", dx, Vi, dx)
        return float(np.sum(-0.5 * quad) - series.n * (math.log(2 * math.pi) + 0.5 * math.log(np.linalg.det(V))))
    raise ValueError(f"unknown benchmark kind {kind!r}")


def conditional_moments(kind, theta, delta, x0):
    """(mean vector, per-coordinate conditional stddev) of X(delta) | x0."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if kind == "mrou":
        mean, var = _mrou_moments(theta, delta, x0)
        return mean, np.array([math.sqrt(var)])
    if kind == "sqr":
        kappa, alpha, sigma = theta
        e1 = math.exp(-kappa * delta)
        mean = alpha + (x0 - alpha) * e1
        var = (
            x0 * sigma**2 / kappa * (e1 - e1**2)
            + alpha * sigma**2 / (2 * kappa) * (1 - e1) ** 2
        )
        return mean, np.sqrt(var)
    if kind == "dmrou":
        E, a, V, _ = _dmrou_moments(theta, delta)
        mean = a + E @ (x0 - a)
        return mean, np.sqrt(np.diag(V))
    raise ValueError(f"unknown benchmark kind {kind!r}")


def stationary_draw(kind, theta, rng):
    """One draw from the stationary law (used to start simulated paths)."""
    if kind == "mrou":
        kappa, alpha, sigma = theta
        return np.array([alpha + math.sqrt(sigma**2 / (2 * kappa)) * rng.standard_normal()])
    if kind == "sqr":
        kappa, alpha, sigma = theta
        # stationary law is Gamma(shape = 2 k a / s^2, scale = s^2 / (2 k))
        shape = 2 * kappa * alpha / sigma**2
        return np.array([rng.gamma(shape, sigma**2 / (2 * kappa))])
    if kind == "dmrou":
        K, a = _dmrou_K_alpha(theta)
        S = solve_continuous_lyapunov(K, np.eye(2))
        return a + np.linalg.cholesky(S) @ rng.standard_normal(2)
    raise ValueError(f"unknown benchmark kind {kind!r}")


# ---------------------------------------------------------------------------
# Exact and Euler samplers.
# ---------------------------------------------------------------------------


def _step(kind, theta, delta, x, rng):
    if kind == "mrou":
        mean, var = _mrou_moments(theta, delta, x)
        return mean + math.sqrt(var) * rng.standard_normal(x.shape)
    if kind == "sqr":
        kappa, alpha, sigma = theta
        c, q = _sqr_cq(theta, delta)
        df = 2 * (q + 1)  # = 4 kappa alpha / sigma^2
        nc = 2 * c * x * math.exp(-kappa * delta)
        return rng.noncentral_chisquare(df, nc) / (2 * c)
    if kind == "dmrou":
        E, a, V, _ = _dmrou_moments(theta, delta)
        mean = a + E @ (x - a)
        return mean + np.linalg.cholesky(V) @ rng.standard_normal(2)
    raise ValueError(f"unknown benchmark kind {kind!r}")


def simulate(kind, theta, delta, n, x0, seed):
    """Exact-law path of n transitions from x0; Philox stream from seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(seed)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    m = x0.shape[0]
    out = np.empty((n + 1, m))
    out[0] = x0
    if kind == "dmrou":
        # hoist the per-step constants
        E, a, V, _ = _dmrou_moments(theta, delta)
        L = np.linalg.cholesky(V)
        for t in range(n):
            out[t + 1] = a + E @ (out[t] - a) + L @ rng.standard_normal(2)
        return ObservationSeries(delta, out)
    for t in range(n):
        out[t + 1] = _step(kind, theta, delta, out[t], rng)
    return ObservationSeries(delta, out)


def euler_simulate(model, theta, delta, n, substeps, x0, seed):
    """Euler-Maruyama path for an arbitrary symbolic model (substeps
    internal steps per observation interval)."""
    rng = _rng(seed)
    theta_map = theta if isinstance(theta, dict) else model.theta_map(theta)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    m = model.m
    h = delta / substeps
    sq = math.sqrt(h)
    out = np.empty((n + 1, m))
    out[0] = x0
    x = x0.copy()
    for t in range(n):
        for _ in range(substeps):
            xl = [np.asarray(v) for v in x]
            mu = np.array([float(model.mu[i].eval(xl, theta_map)) for i in range(m)])
            sig = np.array(
                [
                    [float(model.sigma[i][j].eval(xl, theta_map)) for j in range(m)]
                    for i in range(m)
                ]
            )
            x = x + mu * h + sq * sig @ rng.standard_normal(m)
        out[t + 1] = x
    return ObservationSeries(delta, out)


# ---------------------------------------------------------------------------
# BenchmarkModel facade.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkModel:
    kind: str
    theta: tuple

    def __post_init__(self):
        if self.kind not in ("mrou", "sqr", "dmrou"):
            raise ValueError(f"unknown benchmark kind {self.kind!r}")
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))

    @property
    def model(self):
        return builtin_model(self.kind)

    def exact_density(self, delta, x, x0):
        return exact_density(self.kind, self.theta, delta, x, x0)

    def exact_sampler(self, delta, x0, rng_or_seed):
        seed = rng_or_seed if isinstance(rng_or_seed, (int, np.random.SeedSequence)) else None
        if seed is not None:
            return simulate(self.kind, self.theta, delta, 1, x0, seed).x[1]
        return _step(self.kind, self.theta, delta, np.asarray(x0, dtype=float).reshape(-1), rng_or_seed)


def benchmark(kind, theta=None):
    return BenchmarkModel(kind, PRESET_THETA[kind] if theta is None else theta)


# ---------------------------------------------------------------------------
# Experiment harnesses.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorGrid:
    """Pointwise approximation errors on the standard evaluation region
    (conditional mean +- 4 conditional stddevs, 201 points per dimension)."""

    kind: str
    delta: float
    J: int
    lamperti: bool
    grid: np.ndarray  # (npts, m)
    errors: np.ndarray  # (npts,)
    max_abs_error: float = field(default=0.0)

    def __post_init__(self):
        object.__setattr__(self, "max_abs_error", float(np.abs(self.errors).max()))


def _make_grid(kind, theta, delta, x0, points=201):
    mean, sd = conditional_moments(kind, theta, delta, x0)
    m = mean.shape[0]
    axes = []
    for d in range(m):
        lo, hi = mean[d] - 4 * sd[d], mean[d] + 4 * sd[d]
        if kind == "sqr":
            lo = max(lo, 1e-12)
        axes.append(np.linspace(lo, hi, points))
    if m == 1:
        return axes[0].reshape(-1, 1)
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def error_experiment(kind, theta, deltas, Js, lamperti=False, x0=None, points=201):
    """Max-abs density approximation error on the standard grid, per
    (delta, J); with lamperti=True the transformed variant is used (1-D)."""
    theta = tuple(theta)
    x0 = DEFAULT_X0[kind] if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    model = builtin_model(kind)
    out = []
    for delta in deltas:
        grid = _make_grid(kind, theta, delta, x0, points)
        exact = np.asarray(exact_density(kind, theta, delta, grid if model.m > 1 else grid[:, 0], x0))
        for J in Js:
            if lamperti:
                approx = build_lamperti_expansion(model, theta, float(x0[0]), J).evaluate(
                    delta, grid[:, 0]
                )
            else:
                ctx = ExpansionContext(model, theta, x0)
                approx = build_expansion(ctx, J).evaluate(delta, grid)
            approx = np.asarray(approx).reshape(-1)
            out.append(
                ErrorGrid(
                    kind=kind,
                    delta=float(delta),
                    J=J,
                    lamperti=lamperti,
                    grid=grid,
                    errors=approx - exact,
                )
            )
    return out


def write_error_csv(grids, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "delta", "J", "lamperti", "max_abs_error"])
        for g in grids:
            w.writerow([g.kind, g.delta, g.J, int(g.lamperti), repr(float(g.max_abs_error))])


_FISHER = {"mrou": fisher_information_mrou, "dmrou": fisher_information_dmrou}


def _one_replication(kind, theta_true, delta, n, Js, sub_seed, fit_options):
    """Simulate one path; exact MLE plus approximate MLE per order J.

    The approximate fits start at the exact MLE: both maximize objectives
    that agree to o(1), so this saves most simplex steps without biasing
    theta_hat^(J) - theta_hat, which is measured at much looser scale than
    the optimizer tolerance."""
    model = builtin_model(kind)
    rng = _rng(sub_seed)
    x0 = stationary_draw(kind, theta_true, rng)
    series = simulate(kind, theta_true, delta, n, x0, sub_seed.spawn(1)[0])

    box = model.default_box()

    def exact_obj(tv):
        return exact_loglik(kind, tuple(tv), series)

    exact_hat, _, _, exact_ok, _ = maximize_loglik(exact_obj, np.asarray(theta_true, float), box, fit_options)
    row = {"exact": (tuple(exact_hat), exact_ok)}
    for J in Js:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = fit(model, series, J, exact_hat, options=fit_options)
        row[J] = (rep.theta, rep.converged)
    return row


def mle_experiment(kind, theta_true, delta, n, N, Js, seed, fit_options=None, progress=None):
    """Monte Carlo MLE protocol: N replications of length-n paths.

    Returns a summary dict with, per parameter: mean/stddev of
    theta_hat - theta_true (exact MLE) and of theta_hat^(J) - theta_hat,
    plus the asymptotic stddevs from the Fisher information where available.
    Deterministic given seed; replications use spawned Philox substreams.
    """
    if kind not in ("mrou", "sqr", "dmrou"):
        raise ValueError(f"unknown benchmark kind {kind!r}")
    theta_true = tuple(float(t) for t in theta_true)
    fit_options = fit_options or FitOptions(
        xatol=1e-6, fatol=1e-8, compute_stderr=False
    )
    model = builtin_model(kind)
    p = len(model.params)
    ss = np.random.SeedSequence(seed)
    subs = ss.spawn(N)
    exact_err = np.full((N, p), np.nan)
    approx_diff = {J: np.full((N, p), np.nan) for J in Js}
    failures = 0
    for i in range(N):
        try:
            row = _one_replication(kind, theta_true, delta, n, Js, subs[i], fit_options)
        except Exception:
            failures += 1
            continue
        ex, _ = row["exact"]
        exact_err[i] = np.asarray(ex) - np.asarray(theta_true)
        for J in Js:
            approx_diff[J][i] = np.asarray(row[J][0]) - np.asarray(ex)
        if progress is not None:
            progress(i)
    ok = ~np.isnan(exact_err[:, 0])
    summary = {
        "kind": kind,
        "theta_true": theta_true,
        "delta": delta,
        "n": n,
        "N": N,
        "seed": seed,
        "failures": failures,
        "params": list(model.params),
        "exact_mle": {
            "mean_error": np.nanmean(exact_err, axis=0).tolist(),
            "stddev_error": np.nanstd(exact_err, axis=0, ddof=1).tolist(),
        },
        "orders": {},
    }
    for J in Js:
        d = approx_diff[J]
        summary["orders"][str(J)] = {
            "mean_diff_vs_exact_mle": np.nanmean(d, axis=0).tolist(),
            "stddev_diff_vs_exact_mle": np.nanstd(d, axis=0, ddof=1).tolist(),
        }
    fisher = _FISHER.get(kind)
    if fisher is not None:
        info = fisher(theta_true, delta)
        summary["asymptotic_stddev"] = np.sqrt(np.diag(np.linalg.inv(info)) / n).tolist()
    summary["_raw"] = {"exact_err": exact_err, "approx_diff": approx_diff, "ok": ok}
    return summary


def write_mle_csv(summary, path):
    params = summary["params"]
    raw = summary["_raw"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["replication"]
        header += [f"exact_err_{p}" for p in params]
        for J in sorted(summary["orders"], key=int):
            header += [f"diff_J{J}_{p}" for p in params]
        w.writerow(header)
        N = raw["exact_err"].shape[0]
        for i in range(N):
            row = [i] + [repr(float(v)) for v in raw["exact_err"][i]]
            for J in sorted(summary["orders"], key=int):
                row += [repr(float(v)) for v in raw["approx_diff"][int(J)][i]]
            w.writerow(row)


def summary_for_json(summary):
    out = {k: v for k, v in summary.items() if k != "_raw"}
    return out

"""Log-density expansion, approximate log-likelihood, and approximate MLE.

The density expansion can be negative far in the tails (truncated series),
so the likelihood works in log form: with a_k(y) = q_k(y) the k-th density
polynomial, the log-density expansion keeps

    l^(J) = -(m/2) log Delta + log det D(x0) + log phi_Sigma(y)
            + sum_{k=1..J} g_k(y) eps^k,

where g_k are the formal-series coefficients of log(1 + sum_k a_k eps^k),
computed by the standard recursion g_k = a_k - (1/k) sum_{j<k} j g_j a_{k-j}.
This is always finite and agrees with log of the density expansion to
O(eps^{J+1}).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm, expm_frechet, solve_continuous_lyapunov
from scipy.optimize import minimize

from . import exprs
from .exprs import DomainError
from .expansion import (
    DensityExpansion,
    ExpansionContext,
    LampertiDensity,
    build_expansion,
)
from .models import lamperti_transformed

__all__ = [
    "ObservationSeries",
    "LogDensityExpansion",
    "EstimateReport",
    "FitOptions",
    "NotConverged",
    "DegenerateSimplex",
    "log_density",
    "approx_loglik",
    "fit",
    "maximize_loglik",
    "fisher_information_mrou",
    "fisher_information_dmrou",
]


class NotConverged(RuntimeError):
    """Optimizer hit the iteration cap (a report is still returned)."""


class DegenerateSimplex(RuntimeError):
    """Objective not finite at the start point; the simplex cannot move."""


@dataclass(frozen=True)
class ObservationSeries:
    """Equally spaced observations x(0), x(Delta), ..., x(n Delta)."""

    delta: float
    x: np.ndarray  # (n+1, m)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        object.__setattr__(self, "x", x)
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if x.shape[0] < 2:
            raise ValueError("a series needs at least one transition")

    @property
    def n(self):
        return self.x.shape[0] - 1

    @property
    def m(self):
        return self.x.shape[1]

    def concat(self, other):
        """A followed by B; B must start where A ends."""
        if abs(other.delta - self.delta) > 1e-12 * self.delta:
            raise ValueError("sampling intervals differ")
        if not np.allclose(self.x[-1], other.x[0]):
            raise ValueError("second series does not start where the first ends")
        return ObservationSeries(self.delta, np.vstack([self.x, other.x[1:]]))


class LogDensityExpansion:
    """Log-form view of a DensityExpansion (see module docstring)."""

    def __init__(self, expansion: DensityExpansion):
        self.expansion = expansion
        self.J = expansion.J

    def lambda_terms(self, y):
        """(Lambda_0 values, [g_1..g_J] values) at standardized points y."""
        lam0 = self.expansion.log_phi(y)
        qs = self.expansion.q_values(y)  # (J+1, n); qs[0] == 1
        gs = []
        for k in range(1, self.J + 1):
            g = qs[k].astype(float).copy()
            for j in range(1, k):
                g -= (j / k) * gs[j - 1] * qs[k - j]
            gs.append(g)
        return lam0, gs

    def value(self, delta, x):
        ctx = self.expansion.context
        m = ctx.model.m
        y = ctx.standardize(delta, x)
        lam0, gs = self.lambda_terms(y)
        eps = math.sqrt(delta)
        out = -0.5 * m * math.log(delta) + np.log(ctx.detD) + lam0
        for k, g in enumerate(gs, start=1):
            out = out + g * eps**k
        return out


def log_density(expansion, delta, x, x0=None):
    """Order-J log transition density; finite by construction.

    ``expansion`` is a DensityExpansion (or a LampertiDensity wrapper, for
    which the Jacobian term -log sigma(x) is added).  ``x0`` is implied by
    the expansion's context; when passed it is validated against it.
    """
    if isinstance(expansion, LampertiDensity):
        theta = expansion.theta
        xr = np.reshape(np.asarray(x, dtype=float), (-1,))
        z = np.asarray(expansion.gamma.eval([xr], theta), dtype=float)
        z = np.broadcast_to(z, xr.shape)
        sig = np.abs(
            np.broadcast_to(
                np.asarray(expansion.model.sigma[0][0].eval([xr], theta), dtype=float),
                xr.shape,
            )
        )
        inner = log_density(expansion.z_expansion, delta, z.reshape(-1, 1))
        val = -np.log(sig) + inner
        return float(val[0]) if np.ndim(x) == 0 else val
    ctx = expansion.context
    if x0 is not None:
        given = np.asarray(x0, dtype=float).reshape(-1, ctx.model.m)
        if given.shape != ctx.x0.shape or not np.array_equal(given, ctx.x0):
            raise ValueError("x0 does not match the expansion's context")
    val = LogDensityExpansion(expansion).value(delta, x)
    if not ctx.batch and val.size == 1:
        return float(val[0])
    return val


def _loglik_terms(model, theta, series, J, lamperti=False, threads=1):
    """Per-transition log-density values, shape (n,)."""
    x0 = series.x[:-1]
    x1 = series.x[1:]
    if lamperti:
        if model.m != 1 or model.lamperti is None:
            raise ValueError("transform-based likelihood needs a 1-D model with a transform")
        theta_map = theta if isinstance(theta, dict) else model.theta_map(theta)
        gamma = model.lamperti[0]
        z_all = np.asarray(
            gamma.eval([series.x.reshape(-1)], theta_map), dtype=float
        ).reshape(-1, 1)
        zmodel = lamperti_transformed(model)
        ctx = ExpansionContext(zmodel, theta_map, z_all[:-1])
        expn = build_expansion(ctx, J, threads=threads)
        inner = log_density(expn, series.delta, z_all[1:])
        sig = np.abs(
            np.broadcast_to(
                np.asarray(
                    model.sigma[0][0].eval([x1.reshape(-1)], theta_map), dtype=float
                ),
                (series.n,),
            )
        )
        return -np.log(sig) + inner
    ctx = ExpansionContext(model, theta, x0)
    expn = build_expansion(ctx, J, threads=threads)
    return np.asarray(log_density(expn, series.delta, x1))


def approx_loglik(model, theta, series, J, lamperti=False, threads=1):
    """Order-J approximate log-likelihood of the series under theta."""
    if J < model.m:
        warnings.warn(
            f"order J={J} below the state dimension m={model.m}; "
            "the stated convergence rate needs J >= m",
            stacklevel=2,
        )
    try:
        terms = _loglik_terms(model, theta, series, J, lamperti=lamperti, threads=threads)
    except DomainError as e:
        raise DomainError(f"{e.args[0]} (while evaluating the series)", *e.args[1:]) from e
    return float(np.sum(terms))


# ---------------------------------------------------------------------------
# Box reparameterization and the derivative-free fit.
# ---------------------------------------------------------------------------


def _make_transform(box):
    """Componentwise smooth bijection R^p -> box and its inverse."""

    def fwd(u):
        out = np.empty_like(u)
        for i, (lo, hi) in enumerate(box):
            # clamp the exponent: simplex expansion steps can wander far into
            # u-space, and exp must saturate rather than overflow (the huge
            # theta then hits the objective's non-finite penalty)
            ui = min(max(u[i], -700.0), 700.0)
            if math.isinf(lo) and math.isinf(hi):
                out[i] = u[i]
            elif math.isinf(hi):
                out[i] = lo + math.exp(ui)
            elif math.isinf(lo):
                out[i] = hi - math.exp(ui)
            else:
                out[i] = lo + (hi - lo) / (1.0 + math.exp(-ui))
        return out

    def inv(t):
        out = np.empty(len(box))
        for i, (lo, hi) in enumerate(box):
            v = t[i]
            if math.isinf(lo) and math.isinf(hi):
                out[i] = v
            elif math.isinf(hi):
                if v <= lo:
                    raise ValueError(f"start value {v} at or below bound {lo}")
                out[i] = math.log(v - lo)
            elif math.isinf(lo):
                if v >= hi:
                    raise ValueError(f"start value {v} at or above bound {hi}")
                out[i] = math.log(hi - v)
            else:
                if not lo < v < hi:
                    raise ValueError(f"start value {v} outside ({lo}, {hi})")
                out[i] = math.log((v - lo) / (hi - v))
        return out

    return fwd, inv


@dataclass(frozen=True)
class FitOptions:
    xatol: float = 1e-8
    fatol: float = 1e-10
    maxiter: int = 10_000
    lamperti: bool = False
    threads: int = 1
    compute_stderr: bool = True
    stderr_step: float = 1e-4  # relative finite-difference step
    penalty: float = 1e8


@dataclass(frozen=True)
class EstimateReport:
    theta: tuple
    loglik: float
    iterations: int
    converged: bool
    stderr: tuple | None = None
    n_evals: int = 0
    params: tuple = ()

    def as_dict(self):
        return {
            "theta": dict(zip(self.params, self.theta)) if self.params else list(self.theta),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "stderr": None
            if self.stderr is None
            else (dict(zip(self.params, self.stderr)) if self.params else list(self.stderr)),
            "n_evals": self.n_evals,
        }


def _feller_violation(model, theta_map):
    if not model.feller:
        return 0.0
    kn, an, sn = model.feller_names
    return max(0.0, theta_map[sn] ** 2 - 2 * theta_map[kn] * theta_map[an])


def maximize_loglik(objective, theta0, box, options: FitOptions, params=()):
    """Derivative-free simplex ascent of ``objective`` over a box.

    objective(theta: ndarray) -> float (to maximize); non-finite values are
    treated as hard rejections via a large penalty.
    """
    theta0 = np.asarray(theta0, dtype=float)
    fwd, inv = _make_transform(box)
    u0 = inv(theta0)

    def neg(u):
        t = fwd(u)
        try:
            v = objective(t)
        except (DomainError, FloatingPointError, ValueError):
            return options.penalty * (1.0 + float(np.sum(u * u)))
        if not math.isfinite(v):
            return options.penalty * (1.0 + float(np.sum(u * u)))
        return -v

    f0 = neg(u0)
    if f0 >= options.penalty:
        raise DegenerateSimplex("objective is not finite at the start point")
    res = minimize(
        neg,
        u0,
        method="Nelder-Mead",
        options={
            "xatol": options.xatol,
            "fatol": options.fatol,
            "maxiter": options.maxiter,
            "maxfev": 4 * options.maxiter,
        },
    )
    theta_hat = fwd(res.x)
    return theta_hat, -float(res.fun), int(res.nit), bool(res.success), int(res.nfev)


def _fd_stderr(objective, theta_hat, rel_step):
    """Asymptotic standard errors from a finite-difference Hessian of the
    log-likelihood at the optimum (observed information)."""
    p = len(theta_hat)
    h = np.array([rel_step * max(abs(t), 1e-8) for t in theta_hat])
    H = np.empty((p, p))
    f0 = objective(theta_hat)

    def f(offsets):
        t = np.array(theta_hat, dtype=float)
        for i, d in offsets:
            t[i] += d
        return objective(t)

    for i in range(p):
        H[i, i] = (f([(i, h[i])]) - 2 * f0 + f([(i, -h[i])])) / h[i] ** 2
        for j in range(i + 1, p):
            v = (
                f([(i, h[i]), (j, h[j])])
                - f([(i, h[i]), (j, -h[j])])
                - f([(i, -h[i]), (j, h[j])])
                + f([(i, -h[i]), (j, -h[j])])
            ) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    info = -H
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return None
    d = np.diag(cov)
    if np.any(d <= 0):
        return None
    return tuple(float(s) for s in np.sqrt(d))


def fit(model, series, J, theta0, box=None, options: FitOptions | None = None):
    """Approximate MLE of order J: maximize approx_loglik over the box.

    Deterministic given (theta0, options).  The Feller constraint, when the
    model declares it, is enforced as a penalty barrier.
    """
    options = options or FitOptions()
    box = tuple(box) if box is not None else model.default_box()
    if len(box) != len(model.params):
        raise ValueError("box must give one (lo, hi) per parameter")

    def objective(theta_vec):
        tm = model.theta_map(theta_vec)
        viol = _feller_violation(model, tm)
        if viol > 0:
            return -options.penalty * (1.0 + viol)
        return approx_loglik(
            model, tm, series, J, lamperti=options.lamperti, threads=options.threads
        )

    theta_hat, loglik, nit, ok, nfev = maximize_loglik(
        objective, theta0, box, options, params=model.params
    )
    stderr = None
    if options.compute_stderr:
        stderr = _fd_stderr(objective, theta_hat, options.stderr_step)
    return EstimateReport(
        theta=tuple(float(t) for t in theta_hat),
        loglik=loglik,
        iterations=nit,
        converged=ok,
        stderr=stderr,
        n_evals=nfev,
        params=tuple(model.params),
    )


# ---------------------------------------------------------------------------
# Fisher information for the benchmark models (exact Gaussian transitions,
# expectation over the stationary law).
# ---------------------------------------------------------------------------


def fisher_information_mrou(theta, delta):
    """Per-observation Fisher information, parameters (kappa, alpha, sigma).

    Transition: Gaussian, mean alpha + (x0-alpha)e^{-kappa delta}, variance
    v = sigma^2 (1-e^{-2 kappa delta})/(2 kappa); x0 averaged over the
    stationary law N(alpha, sigma^2/(2 kappa))."""
    kappa, alpha, sigma = theta
    if kappa <= 0 or sigma <= 0:
        raise ValueError("stationarity requires kappa > 0 and sigma > 0")
    e1 = math.exp(-kappa * delta)
    e2 = math.exp(-2 * kappa * delta)
    v = sigma**2 * (1 - e2) / (2 * kappa)
    dv_dk = sigma**2 * (delta * e2 / kappa - (1 - e2) / (2 * kappa**2))
    dv_ds = 2 * v / sigma
    stat_var = sigma**2 / (2 * kappa)
    i = np.zeros((3, 3))
    i[0, 0] = delta**2 * e2 * stat_var / v + 0.5 * dv_dk**2 / v**2
    i[1, 1] = (1 - e1) ** 2 / v
    i[2, 2] = 0.5 * dv_ds**2 / v**2  # = 2/sigma^2
    i[0, 2] = i[2, 0] = 0.5 * dv_dk * dv_ds / v**2
    return i


def _dmrou_K(theta):
    k11, k21, k22, _ = theta
    return np.array([[k11, 0.0], [k21, k22]])


def fisher_information_dmrou(theta, delta):
    """Per-observation Fisher information for the planar model, parameters
    (k11, k21, k22, alpha); exact Gaussian transition, stationary x0."""
    k11, k21, k22, alpha = theta
    if k11 <= 0 or k22 <= 0:
        raise ValueError("stationarity requires k11 > 0 and k22 > 0")
    K = _dmrou_K(theta)
    # stationary mean is (alpha, 0): the second drift row is k21(alpha-x1)-k22 x2
    e1 = np.array([1.0, 0.0])
    # stationary covariance solves K S + S K^T = I (unit dispersion)
    S = solve_continuous_lyapunov(K, np.eye(2))
    E = expm(-K * delta)
    V = S - E @ S @ E.T
    Vi = np.linalg.inv(V)

    # parameter directions in K
    dirs = {
        0: np.array([[1.0, 0.0], [0.0, 0.0]]),
        1: np.array([[0.0, 0.0], [1.0, 0.0]]),
        2: np.array([[0.0, 0.0], [0.0, 1.0]]),
    }
    p = 4
    dE = {}
    dS = {}
    dV = {}
    for a, dK in dirs.items():
        dE[a] = expm_frechet(-K * delta, -dK * delta, compute_expm=False)
        # differentiate K S + S K^T = I:  K dS + dS K^T = -(dK S + S dK^T)
        dS[a] = solve_continuous_lyapunov(K, -(dK @ S + S @ dK.T))
        dV[a] = dS[a] - dE[a] @ S @ E.T - E @ dS[a] @ E.T - E @ S @ dE[a].T
    # mean(x0) = m + E (x0 - m) with m = (alpha, 0)
    # d mean / d k_a = dE[a] (x0 - m); d mean / d alpha = (I - E) e1
    info = np.zeros((p, p))
    IminusE1 = (np.eye(2) - E) @ e1
    for a in range(3):
        for b in range(a, 3):
            mean_term = np.trace(dE[a].T @ Vi @ dE[b] @ S)
            var_term = 0.5 * np.trace(Vi @ dV[a] @ Vi @ dV[b])
            info[a, b] = info[b, a] = mean_term + var_term
        # cross with alpha: E[(dE[a](x0-alpha 1))] = 0 under stationarity
        info[a, 3] = info[3, a] = 0.0
    info[3, 3] = IminusE1 @ Vi @ IminusE1
    return info

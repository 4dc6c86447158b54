"""Closed-form asymptotic expansion of a diffusion transition density.

Writing eps = sqrt(Delta) and standardizing the forward state as
y = D(x0)(x - x0)/eps, the transition density admits the expansion

    p^(J)(Delta, x | x0) = Delta^{-m/2} det D(x0) * sum_{k=0..J} Omega_k(y) eps^k,

where Omega_0 is the m-variate Gaussian with covariance Sigma(x0) and each
correction Omega_k(y) = q_k(y) * phi_Sigma(y) has a polynomial q_k assembled
from (a) exact conditional moments of iterated Stratonovich integrals (the
P polynomials from the ito module) and (b) model coefficients C_i(x0)
obtained by iterated application of first-order differential operators to
the dispersion columns.

Contexts support batched x0 (one row per transition) so a whole observation
series is expanded with array-valued polynomial coefficients in one pass.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import exprs
from .exprs import DomainError
from .ito import conditional_product_expectation, norm
from .models import ModelSpec, lamperti_transformed
from .poly import Poly

__all__ = [
    "DegenerateCovariance",
    "ExpansionContext",
    "CorrectionTerm",
    "DensityExpansion",
    "drift_correction_b",
    "apply_operator",
    "coefficient_C",
    "enumerate_Sk",
    "indices_with_norm",
    "correction_Q",
    "build_expansion",
    "evaluate_density",
    "lamperti_wrap",
    "build_lamperti_expansion",
    "LampertiDensity",
    "gauss_hermite_points",
    "MAX_ORDER",
]

MAX_ORDER = 8  # tested envelope; raise explicitly at your own risk


class DegenerateCovariance(ValueError):
    """Sigma(x0) numerically singular; the standardization is undefined."""


# ---------------------------------------------------------------------------
# Symbolic layer: drift correction, operators, C coefficients (cached per
# model since they do not depend on theta or x0).
# ---------------------------------------------------------------------------

_b_cache = {}
_c_expr_cache = {}
_sk_cache = {}
_norm_index_cache = {}
_table_cache = {}


def drift_correction_b(model, theta=None):
    """b_i = mu_i - (1/2) sum_k sum_j sigma_kj d(sigma_ij)/dx_k, symbolically."""
    cached = _b_cache.get(model)
    if cached is not None:
        return cached
    m = model.m
    out = []
    for i in range(m):
        e = model.mu[i]
        for k in range(m):
            for j in range(m):
                d = exprs.differentiate(model.sigma[i][j], k + 1)
                if not d.is_zero:
                    e = e - model.sigma[k][j] * d / 2
        out.append(e)
    out = tuple(out)
    _b_cache[model] = out
    return out


def apply_operator(j, phi, model, theta=None):
    """The first-order operator A_j applied componentwise to a vector of
    expressions: A_0 = sum_i b_i d/dx_i, A_j = sum_i sigma_ij d/dx_i (j>=1)."""
    coeffs = drift_correction_b(model) if j == 0 else tuple(
        model.sigma[i][j - 1] for i in range(model.m)
    )
    out = []
    for f in phi:
        acc = exprs.const(0)
        for i in range(model.m):
            d = exprs.differentiate(f, i + 1)
            if not d.is_zero:
                acc = acc + coeffs[i] * d
        out.append(acc)
    return tuple(out)


def _c_expr(model, i, r):
    """Symbolic C_{i,r} = A_{i_n}(...A_{i_2}(sigma_{r,i_1})...); sigma_{.,0} = b."""
    key = (model, tuple(i), r)
    cached = _c_expr_cache.get(key)
    if cached is not None:
        return cached
    i = tuple(i)
    if not i:
        raise ValueError("C is defined for nonempty indices")
    first = i[0]
    phi = drift_correction_b(model)[r - 1] if first == 0 else model.sigma[r - 1][first - 1]
    for e in i[1:]:
        (phi,) = apply_operator(e, (phi,), model)
    _c_expr_cache[key] = phi
    return phi


def coefficient_C(i, r, ctx):
    """Numeric C_{i,r}(x0); array-valued for batched contexts."""
    val = _c_expr(ctx.model, tuple(i), r).eval(ctx.x_list, ctx.theta)
    return np.broadcast_to(np.asarray(val, dtype=float), (ctx.n,))


def enumerate_Sk(k, m):
    """All triples (l, r, j): l >= 1, composition j of k into l positive
    parts, r in {1..m}^l.  Deterministic: l ascending, then lex in (j, r)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    key = (k, m)
    cached = _sk_cache.get(key)
    if cached is not None:
        return cached
    out = []
    for l in range(1, k + 1):
        for j in _compositions(k, l):
            for r in itertools.product(range(1, m + 1), repeat=l):
                out.append((l, r, j))
    _sk_cache[key] = out
    return out


def _compositions(k, l):
    """Ordered compositions of k into l positive parts, lex order."""
    if l == 1:
        return [(k,)]
    out = []
    for first in range(1, k - l + 2):
        for rest in _compositions(k - first, l - 1):
            out.append((first,) + rest)
    return out


def indices_with_norm(m, nrm):
    """All index tuples over {0..m} with the given norm, deterministic order."""
    key = (m, nrm)
    cached = _norm_index_cache.get(key)
    if cached is not None:
        return cached
    if nrm == 0:
        res = [()]
    elif nrm < 0:
        res = []
    else:
        res = []
        if nrm >= 2:
            res.extend((0,) + t for t in indices_with_norm(m, nrm - 2))
        for e in range(1, m + 1):
            res.extend((e,) + t for t in indices_with_norm(m, nrm - 1))
    _norm_index_cache[key] = res
    return res


def _triple_table(model, k):
    """For every triple in S_k: the admissible index tuples (norm of the
    w-th index equals j_w + 1) whose symbolic C factors are all nonzero,
    together with those C expressions.  Cached per (model, k)."""
    key = (model, k)
    cached = _table_cache.get(key)
    if cached is not None:
        return cached
    m = model.m
    out = []
    for triple in enumerate_Sk(k, m):
        l, r, j = triple
        per_slot = []
        for w in range(l):
            slot = []
            for idx in indices_with_norm(m, j[w] + 1):
                ce = _c_expr(model, idx, r[w])
                if not ce.is_zero:
                    slot.append((idx, ce))
            per_slot.append(slot)
        tuples = []
        for combo in itertools.product(*per_slot):
            idxs = tuple(c[0] for c in combo)
            cexprs = tuple(c[1] for c in combo)
            tuples.append((idxs, cexprs))
        out.append((triple, tuples))
    _table_cache[key] = out
    return out


# ---------------------------------------------------------------------------
# Numeric layer: contexts and assembled expansions.
# ---------------------------------------------------------------------------


class ExpansionContext:
    """Model + parameter values + backward state(s), with the derived
    standardization quantities.

    x0 may be a single m-vector or an (n, m) batch; all derived arrays carry
    a leading batch axis of length n (n = 1 for the scalar case).
    """

    __slots__ = (
        "model",
        "theta",
        "x0",
        "batch",
        "n",
        "x_list",
        "sigma_val",
        "D",
        "detD",
        "Sigma",
        "Sigma_inv",
        "detSigma",
        "M",
        "_lin_rows",
        "_M_is_identity",
    )

    def __init__(self, model: ModelSpec, theta, x0):
        self.model = model
        self.theta = theta if isinstance(theta, dict) else model.theta_map(theta)
        x0 = np.asarray(x0, dtype=float)
        if x0.ndim == 0:
            x0 = x0.reshape(1)
        self.batch = x0.ndim == 2
        if not self.batch:
            if x0.shape != (model.m,):
                raise ValueError(f"x0 must have shape ({model.m},) or (n, {model.m})")
            x0 = x0.reshape(1, model.m)
        elif x0.shape[1] != model.m:
            raise ValueError(f"x0 batch must have {model.m} columns")
        self.x0 = x0
        self.n = x0.shape[0]
        m = model.m
        for d in range(m):
            lo, hi = model.state_space[d]
            if np.any(x0[:, d] <= lo) or np.any(x0[:, d] >= hi):
                raise DomainError(f"x0 outside the state space in coordinate {d + 1}", None)
        self.x_list = [x0[:, d] for d in range(m)]

        sig = np.empty((self.n, m, m))
        for a in range(m):
            for b_ in range(m):
                v = model.sigma[a][b_].eval(self.x_list, self.theta)
                sig[:, a, b_] = np.broadcast_to(np.asarray(v, dtype=float), (self.n,))
        self.sigma_val = sig
        row_ss = np.einsum("nij,nij->ni", sig, sig)
        if np.any(row_ss <= 0):
            raise DegenerateCovariance("a dispersion row vanishes at x0")
        self.D = 1.0 / np.sqrt(row_ss)  # diagonal entries, (n, m)
        self.detD = np.prod(self.D, axis=1)
        A = self.D[:, :, None] * sig  # D sigma, rows normalized
        self.Sigma = A @ np.swapaxes(A, 1, 2)
        self.detSigma = np.linalg.det(self.Sigma)
        if np.any(self.detSigma < 1e-12):
            raise DegenerateCovariance(
                "det Sigma(x0) < 1e-12; dispersion rows are numerically dependent"
            )
        self.Sigma_inv = np.linalg.inv(self.Sigma)
        self.M = np.linalg.inv(A)  # sigma^{-1} D^{-1}
        # (Sigma^{-1} y)_i as polynomials in y, reused by every D-chain
        self._lin_rows = tuple(
            Poly.linear([self.Sigma_inv[:, i, j] for j in range(m)]) for i in range(m)
        )
        self._M_is_identity = bool(np.all(self.M == np.eye(m)))

    def standardize(self, delta, x):
        """y = D(x0)(x - x0)/sqrt(delta), shaped (n, m)."""
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            x = x.reshape(1, self.model.m) if x.ndim == 1 else x.reshape(1, 1)
        return self.D * (x - self.x0) / math.sqrt(delta)


@dataclass(frozen=True)
class CorrectionTerm:
    """Order-k correction: the polynomial q_k with Omega_k = q_k * phi_Sigma."""

    k: int
    q: Poly


_float_P_cache = {}


def _float_P(idxs, m):
    key = (idxs, m)
    cached = _float_P_cache.get(key)
    if cached is None:
        cached = conditional_product_expectation(idxs, m).map_coeffs(float)
        _float_P_cache[key] = cached
    return cached


def _compose_with_M(Pf, ctx):
    """P(sigma^{-1} D^{-1} y) with float coefficients (array per batch row)."""
    if ctx._M_is_identity:
        return Pf
    m = ctx.model.m
    matrix = [[ctx.M[:, i, j] for j in range(m)] for i in range(m)]
    return Pf.substitute_linear(matrix)


def _apply_D_chain(u, r_tuple, ctx):
    """Nested operators D_{r_1}(...D_{r_l}(u)...), innermost first, where
    D_i u = du/dy_i - u * (Sigma^{-1} y)_i."""
    for w in reversed(range(len(r_tuple))):
        i = r_tuple[w]
        u = u.diff(i) - u * ctx._lin_rows[i - 1]
    return u


def correction_Q(triple, ctx, _tuples=None):
    """Q for one S_k triple, as the polynomial in y multiplying phi_Sigma."""
    l, r, j = triple
    m = ctx.model.m
    if _tuples is None:
        for t, tuples in _triple_table(ctx.model, sum(j)):
            if t == triple:
                _tuples = tuples
                break
        else:
            raise ValueError("triple not in its S_k enumeration")
    base = Poly.zero(m)
    for idxs, cexprs in _tuples:
        Pf = _float_P(idxs, m)
        if not Pf:
            continue
        coeff = np.ones(ctx.n)
        for w in range(l):
            cv = cexprs[w].eval(ctx.x_list, ctx.theta)
            coeff = coeff * np.asarray(cv, dtype=float) * ctx.D[:, r[w] - 1]
        if not np.any(coeff):
            continue
        base = base + _compose_with_M(Pf, ctx).scale(coeff)
    if not base:
        return base
    u = _apply_D_chain(base, r, ctx)
    sign = -1.0 if l % 2 else 1.0
    return u.scale(sign / math.factorial(l))


class DensityExpansion:
    """Assembled order-J expansion around a fixed (theta, x0) context.

    Immutable after construction; evaluation at any (Delta, x) reuses it
    because the q_k polynomials do not depend on Delta.
    """

    def __init__(self, terms, context, J):
        self.terms = tuple(terms)
        self.context = context
        self.J = J

    def q_values(self, y):
        """Stack of q_k(y) values, shape (J+1, len(y)).  y may carry more
        rows than the context (many forward points, one x0)."""
        z = [y[:, d] for d in range(self.context.model.m)]
        out = np.empty((self.J + 1, y.shape[0]))
        for k, term in enumerate(self.terms):
            out[k] = np.broadcast_to(np.asarray(term.q.eval(z), dtype=float), (y.shape[0],))
        return out

    def log_phi(self, y):
        """log phi_Sigma(y), shape (n,)."""
        ctx = self.context
        if ctx.n == 1 and y.shape[0] != 1:
            quad = np.einsum("ni,ij,nj->n", y, ctx.Sigma_inv[0], y)
        else:
            quad = np.einsum("ni,nij,nj->n", y, ctx.Sigma_inv, y)
        return -0.5 * quad - 0.5 * ctx.model.m * math.log(2 * math.pi) - 0.5 * np.log(
            ctx.detSigma
        )

    def evaluate(self, delta, x):
        """p^(J)(delta, x | x0); scalar for scalar contexts and single x."""
        if delta <= 0:
            raise ValueError("delta must be positive")
        ctx = self.context
        m = ctx.model.m
        y = ctx.standardize(delta, x)
        phi = np.exp(self.log_phi(y))
        qs = self.q_values(y)
        eps = math.sqrt(delta)
        series = sum(qs[k] * eps**k for k in range(self.J + 1))
        val = delta ** (-m / 2) * ctx.detD * series * phi
        if not ctx.batch and val.size == 1:
            return float(val[0])
        return val


def build_expansion(ctx, J, threads=1):
    """Terms k = 0..J; term 0 is the bare Gaussian (q = 1)."""
    if J < 0:
        raise ValueError("J must be >= 0")
    if J > MAX_ORDER:
        raise ValueError(f"order {J} above the supported cap {MAX_ORDER}")
    m = ctx.model.m
    terms = [CorrectionTerm(0, Poly.constant(m, 1.0))]
    for k in range(1, J + 1):
        table = _triple_table(ctx.model, k)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                qs = list(ex.map(lambda tt: correction_Q(tt[0], ctx, tt[1]), table))
        else:
            qs = [correction_Q(t, ctx, tup) for t, tup in table]
        q = Poly.zero(m)
        for qq in qs:  # ordered reduce: deterministic sums
            q = q + qq
        terms.append(CorrectionTerm(k, q))
    return DensityExpansion(terms, ctx, J)


def evaluate_density(expansion, delta, x):
    return expansion.evaluate(delta, x)


# ---------------------------------------------------------------------------
# Variance-stabilizing (unit-dispersion) wrapper for 1-D models.
# ---------------------------------------------------------------------------


class LampertiDensity:
    """Density over X obtained from an expansion over Z = gamma(X):
    p_X(delta, x | x0) = sigma(x)^{-1} p_Z(delta, gamma(x) | gamma(x0))."""

    def __init__(self, z_expansion, model, theta):
        if model.m != 1:
            raise ValueError("wrapper requires a 1-D model")
        if model.lamperti is None:
            raise ValueError("model declares no transform")
        self.z_expansion = z_expansion
        self.model = model
        self.theta = theta if isinstance(theta, dict) else model.theta_map(theta)
        self.gamma, self.gamma_inv = model.lamperti
        # monotonicity probe on a coarse sample of the state space
        lo, hi = model.state_space[0]
        lo = max(lo, -1e3) + 1e-9
        hi = min(hi, 1e3) - 1e-9
        xs = np.linspace(lo, hi, 101)
        dg = exprs.differentiate(self.gamma, 1).eval([xs], self.theta)
        dg = np.broadcast_to(np.asarray(dg, dtype=float), xs.shape)
        if not (np.all(dg > 0) or np.all(dg < 0)):
            raise ValueError("transform is not strictly monotone on the state space")

    def evaluate(self, delta, x):
        x = np.asarray(x, dtype=float)
        xr = x.reshape(-1)
        z = np.asarray(self.gamma.eval([xr], self.theta), dtype=float)
        sig = np.abs(
            np.broadcast_to(
                np.asarray(self.model.sigma[0][0].eval([xr], self.theta), dtype=float),
                xr.shape,
            )
        )
        pz = np.asarray(self.z_expansion.evaluate(delta, z.reshape(-1, 1)))
        val = pz / sig
        if x.ndim == 0:
            return float(val[0])
        return val.reshape(x.shape)


def lamperti_wrap(z_expansion, model, theta):
    return LampertiDensity(z_expansion, model, theta)


def build_lamperti_expansion(model, theta, x0, J, threads=1):
    """Convenience: transform, expand over Z at gamma(x0), and wrap."""
    theta = theta if isinstance(theta, dict) else model.theta_map(theta)
    if np.size(x0) != 1:
        raise ValueError("batched x0 is not supported by the wrapper builder")
    zmodel = lamperti_transformed(model)
    gamma = model.lamperti[0]
    z0 = float(np.asarray(gamma.eval([np.reshape(x0, (1,))], theta), dtype=float)[0])
    ctx = ExpansionContext(zmodel, theta, np.array([z0]))
    exp_z = build_expansion(ctx, J, threads=threads)
    return lamperti_wrap(exp_z, model, theta)


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature against phi_Sigma.
# ---------------------------------------------------------------------------


def gauss_hermite_points(m, nodes=64, Sigma=None):
    """Points and weights so that sum_w f(y_w) w_w ~= int f(y) phi_Sigma(y) dy."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    w = w / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([x] * m), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w] * m), indexing="ij")
    wts = np.ones(pts.shape[0])
    for g in wgrids:
        wts = wts * g.ravel()
    if Sigma is not None:
        L = np.linalg.cholesky(Sigma)
        pts = pts @ L.T
    return pts, wts

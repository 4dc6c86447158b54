"""Acceptance gate: end-to-end criteria with pinned tolerances.

Several tests here run for minutes (the Monte Carlo oracle for the
conditional-moment polynomials and the 500-replication MLE table); the
whole module stays within about 20 minutes on one CPU.  Run it alone with

    pytest tests/test_acceptance.py -v
"""

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from difflik.benchmarks import error_experiment, mle_experiment, simulate
from difflik.expansion import (
    ExpansionContext,
    build_expansion,
    gauss_hermite_points,
)
from difflik.ito import conditional_product_expectation, expected_product, norm, strat_to_ito
from difflik.likelihood import FitOptions, fisher_information_mrou, fit
from difflik.models import PRESET_THETA, builtin_model
from difflik.poly import Poly

MROU_THETA = PRESET_THETA["mrou"]


# ---------------------------------------------------------------------------
# Criterion 1: Monte Carlo oracle for conditional-moment polynomials.
#
# For every multi-index with norm <= 5 over {0,1,2} (m = 2; m = 1 indices are
# the subset not using letter 2), the polynomial P(z) = E[J_i(1) | W(1) = z]
# must satisfy  int P(z) g(z) phi(z) dz = E[J_i(1) g(W(1))]  against a
# simulation with 10^6 paths at step 2^-10, within 4 standard errors, for
# g in {1, z1, z1^2, z1*z2}.  A few genuine products prod_w J_{i_w} are
# checked the same way.  Iterated Ito integrals are marched with the Euler
# update I[i] += I[tail] dW (one batched numpy op per step, float32) and
# converted to Stratonovich values exactly through strat_to_ito at t = 1.
# ---------------------------------------------------------------------------


def _oracle_indices():
    out = []
    for L in range(1, 6):
        for tup in itertools.product((0, 1, 2), repeat=L):
            if norm(tup) <= 5:
                out.append(tup)
    out.sort(key=lambda i: i[0])  # block rows by first letter
    return out


PRODUCT_CASES = [
    ((1,), (1,)),
    ((1,), (2,)),
    ((0,), (1,)),
    ((1, 1), (2,)),
    ((1,), (1,), (2,)),
]

MC_PATHS = 1_000_000
MC_CHUNK = 100_000
MC_STEPS = 1024  # step 2^-10


def _march_chunk(seed, rows, tails, bounds, R):
    """One chunk of Euler-marched iterated Ito integrals; returns the
    (R, chunk) float64 state at t = 1 (row 0 is the empty index = 1)."""
    rng = np.random.Generator(np.random.Philox(seed))
    h = np.float32(1.0 / MC_STEPS)
    sqh = np.float32(math.sqrt(1.0 / MC_STEPS))
    A = np.zeros((R, MC_CHUNK), np.float32)
    A[0] = 1.0
    B = np.empty_like(A)
    T = np.empty_like(A)
    for _ in range(MC_STEPS):
        z = rng.standard_normal((2, MC_CHUNK), dtype=np.float32)
        z *= sqh
        np.take(A, tails, axis=0, out=T)
        T[bounds[0]:bounds[1]] *= h
        T[bounds[1]:bounds[2]] *= z[0]
        T[bounds[2]:bounds[3]] *= z[1]
        np.add(A, T, out=B)
        B[0] = 1.0
        A, B = B, A
    return A.astype(np.float64)


def test_criterion_1_conditional_moment_oracle():
    idxs = _oracle_indices()
    assert len(idxs) == 118
    rows = {(): 0}
    for i in idxs:
        rows[i] = len(rows)
    R = len(rows)
    tails = np.array([0] + [rows[i[1:]] for i in idxs])
    bounds = [1]
    for k in (0, 1, 2):
        bounds.append(bounds[-1] + sum(1 for i in idxs if i[0] == k))

    # exact Stratonovich values are linear in the Ito rows
    Cmat = np.zeros((len(idxs), R))
    for r, i in enumerate(idxs):
        for j, c in strat_to_ito(i).terms.items():
            Cmat[r, rows[j]] += float(c)

    n_cases = len(idxs) + len(PRODUCT_CASES)
    n_g = 4
    sums = np.zeros((n_cases, n_g))
    sumsq = np.zeros((n_cases, n_g))
    ss = np.random.SeedSequence(20260801)
    for child in ss.spawn(MC_PATHS // MC_CHUNK):
        A = _march_chunk(child, rows, tails, bounds, R)
        J = Cmat @ A
        w1 = A[rows[(1,)]]
        w2 = A[rows[(2,)]]
        gs = np.stack([np.ones_like(w1), w1, w1**2, w1 * w2])
        vals = np.empty((n_cases, MC_CHUNK))
        vals[: len(idxs)] = J
        for p, case in enumerate(PRODUCT_CASES):
            prod = J[idxs.index(case[0])].copy()
            for extra in case[1:]:
                prod *= J[idxs.index(extra)]
            vals[len(idxs) + p] = prod
        for gi in range(n_g):
            vg = vals * gs[gi]
            sums[:, gi] += vg.sum(axis=1)
            sumsq[:, gi] += (vg**2).sum(axis=1)

    mean = sums / MC_PATHS
    var = sumsq / MC_PATHS - mean**2
    se = np.sqrt(np.maximum(var, 0.0) / MC_PATHS)

    z1 = Poly.variable(2, 1)
    z2 = Poly.variable(2, 2)
    g_polys = [Poly.constant(2, 1), z1, z1 * z1, z1 * z2]
    cases = [(i,) for i in idxs] + list(PRODUCT_CASES)
    for c, case in enumerate(cases):
        P = conditional_product_expectation(list(case), 2)
        for gi, g in enumerate(g_polys):
            exact = float((P * g).gaussian_moment())
            if se[c, gi] == 0.0:
                # pure-time indices are deterministic (zero sample variance);
                # the Euler marching computes them with O(step) quadrature
                # error, e.g. J_(0,0) = h^2 K(K-1)/2 = (1 - h)/2
                tol = 4.0 / MC_STEPS
            else:
                tol = 4 * se[c, gi]
            assert abs(mean[c, gi] - exact) <= tol, (case, gi, mean[c, gi], exact, tol)


# ---------------------------------------------------------------------------
# Criterion 2: closed-form spot checks.
# ---------------------------------------------------------------------------


def test_criterion_2_strat_to_ito_and_time_moments():
    comb = strat_to_ito((1, 1))
    assert comb.flavor == "ito"
    assert comb.terms == {(1, 1): Fraction(1), (0,): Fraction(1, 2)}
    for n in range(1, 9):
        assert expected_product([(0,) * n]) == Fraction(1, math.factorial(n))


# ---------------------------------------------------------------------------
# Criterion 3: normalization of the correction terms.
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind,x0", [
    ("mrou", [0.09]),
    ("sqr", [0.06]),
    ("dmrou", [0.3, -0.2]),
])
def test_criterion_3_normalization(kind, x0):
    model = builtin_model(kind)
    ctx = ExpansionContext(model, PRESET_THETA[kind], x0)
    e = build_expansion(ctx, 6)
    pts, wts = gauss_hermite_points(model.m, 64, ctx.Sigma[0])
    zs = [pts[:, d] for d in range(model.m)]
    mass0 = float(np.sum(np.asarray(e.terms[0].q.eval(zs), dtype=float) * wts))
    assert mass0 == pytest.approx(1.0, abs=1e-12)
    for k in range(1, 7):
        mass = float(np.sum(np.asarray(e.terms[k].q.eval(zs), dtype=float) * wts))
        assert abs(mass) <= 1e-8, (kind, k, mass)


# ---------------------------------------------------------------------------
# Criterion 4: density convergence in the order J (ordinal shape checks).
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["mrou", "dmrou"])
def test_criterion_4_error_decreases_in_J(kind):
    grids = error_experiment(kind, PRESET_THETA[kind], [1 / 52], [1, 2, 3, 4, 5, 6])
    errs = [g.max_abs_error for g in sorted(grids, key=lambda g: g.J)]
    for lo, hi in zip(errs[1:], errs[:-1]):
        assert lo < hi or lo < 1e-12, errs
    assert errs[5] <= errs[0] / 10


def test_criterion_4_sqr_lamperti_beats_direct():
    theta = PRESET_THETA["sqr"]
    direct = error_experiment("sqr", theta, [1 / 52], [2, 4, 6])
    lamp = error_experiment("sqr", theta, [1 / 52], [2, 4, 6], lamperti=True)
    d = {g.J: g.max_abs_error for g in direct}
    l = {g.J: g.max_abs_error for g in lamp}
    for J in (2, 4, 6):
        assert l[J] <= d[J], (J, l[J], d[J])


# ---------------------------------------------------------------------------
# Criterion 5: convergence rate in Delta.
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("J", [2, 3])
def test_criterion_5_rate_in_delta(J):
    deltas = [1 / 12, 1 / 52, 1 / 252]
    grids = error_experiment("mrou", MROU_THETA, deltas, [J])
    errs = {g.delta: g.max_abs_error for g in grids}
    x = np.log([d for d in deltas])
    y = np.log([errs[d] for d in deltas])
    slope = np.polyfit(x, y, 1)[0]
    assert slope >= (J + 1 - 1) / 2 - 0.3, (J, slope)


# ---------------------------------------------------------------------------
# Criterion 6: MLE table at scale (N=500 replications, n=1000, Delta=1/52).
# ---------------------------------------------------------------------------


def test_criterion_6_mle_table():
    summary = mle_experiment(
        "mrou", MROU_THETA, 1 / 52, 1000, 500, [6], seed=20240
    )
    assert summary["failures"] == 0
    mean_diff = summary["orders"]["6"]["mean_diff_vs_exact_mle"]
    for d in mean_diff:
        assert abs(d) <= 0.001, mean_diff
    sd_kappa = summary["exact_mle"]["stddev_error"][0]
    assert 0.26 <= sd_kappa <= 0.40, sd_kappa
    info = fisher_information_mrou(MROU_THETA, 1 / 52)
    asym_kappa = math.sqrt(np.linalg.inv(info)[0, 0] / 1000)
    assert asym_kappa == pytest.approx(0.229136, abs=1e-4)
    assert summary["asymptotic_stddev"][0] == pytest.approx(asym_kappa, rel=1e-12)


# ---------------------------------------------------------------------------
# Criterion 7: coarse-sampling signature at Delta = 1/12, J = 3.
# ---------------------------------------------------------------------------


def test_criterion_7_coarse_delta_bias_signature():
    summary = mle_experiment(
        "mrou", MROU_THETA, 1 / 12, 1000, 100, [3], seed=31415
    )
    mean_kappa_diff = summary["orders"]["3"]["mean_diff_vs_exact_mle"][0]
    target = 0.0289
    assert target / 2 <= abs(mean_kappa_diff) <= target * 2, mean_kappa_diff
    assert mean_kappa_diff > 0  # order-3 fit overshoots kappa at coarse Delta


# ---------------------------------------------------------------------------
# Criterion 8: bit-determinism of fit and bench under fixed seeds.  (The
# property suites for Expr/Poly/ito_product/tower live in the module tests
# and run as part of the same pytest invocation.)
# ---------------------------------------------------------------------------


def test_criterion_8_fit_bit_determinism():
    series = simulate("mrou", MROU_THETA, 1 / 52, 400, [0.09], 2024)
    model = builtin_model("mrou")
    opts = FitOptions(compute_stderr=False)
    r1 = fit(model, series, 2, (0.4, 0.05, 0.04), options=opts)
    r2 = fit(model, series, 2, (0.4, 0.05, 0.04), options=opts)
    assert r1.theta == r2.theta
    assert r1.loglik == r2.loglik


def test_criterion_8_bench_bit_determinism():
    kwargs = dict(
        kind="mrou",
        theta_true=MROU_THETA,
        delta=1 / 52,
        n=200,
        N=2,
        Js=[2],
        seed=77,
    )
    a = mle_experiment(**kwargs)
    b = mle_experiment(**kwargs)
    assert a["exact_mle"] == b["exact_mle"]
    assert a["orders"] == b["orders"]
    g1 = error_experiment("mrou", MROU_THETA, [1 / 52], [2], points=41)
    g2 = error_experiment("mrou", MROU_THETA, [1 / 52], [2], points=41)
    assert g1[0].max_abs_error == g2[0].max_abs_error

import math

import numpy as np
import pytest
from scipy import integrate, linalg

from difflik.benchmarks import (
    DEFAULT_X0,
    conditional_moments,
    error_experiment,
    euler_simulate,
    exact_density,
    exact_loglik,
    mle_experiment,
    simulate,
    stationary_draw,
)
from difflik.likelihood import ObservationSeries
from difflik.models import PRESET_THETA, builtin_model

DELTA = 1 / 52


# -- exact densities ---------------------------------------------------------


@pytest.mark.parametrize("kind,x0,lo,hi", [
    ("mrou", [0.09], -0.3, 0.5),
    ("sqr", [0.06], 1e-10, 0.6),
])
def test_exact_density_integrates_to_one(kind, x0, lo, hi):
    theta = PRESET_THETA[kind]

    def f(x):
        return float(np.asarray(exact_density(kind, theta, DELTA, [x], x0)).reshape(-1)[0])

    total, err = integrate.quad(f, lo, hi, limit=200)
    assert total == pytest.approx(1.0, abs=max(1e-6, 10 * err))


def test_dmrou_density_integrates_to_one():
    theta = PRESET_THETA["dmrou"]
    x0 = [0.3, -0.2]
    mean, sd = conditional_moments("dmrou", theta, DELTA, x0)
    g1 = mean[0] + np.linspace(-6, 6, 161) * sd[0]
    g2 = mean[1] + np.linspace(-6, 6, 161) * sd[1]
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    pts = np.column_stack([X1.ravel(), X2.ravel()])
    vals = np.array([exact_density("dmrou", theta, DELTA, p, x0) for p in pts])
    total = np.trapezoid(np.trapezoid(vals.reshape(161, 161), g2, axis=1), g1)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_mrou_small_kappa_limit():
    """As kappa -> 0 the MROU transition tends to Brownian motion N(x0, sigma^2 delta)."""
    sigma = 0.03
    x0 = [0.09]
    x = [0.095]
    p_bm = math.exp(-(0.005**2) / (2 * sigma**2 * DELTA)) / math.sqrt(
        2 * math.pi * sigma**2 * DELTA
    )
    p = exact_density("mrou", (1e-10, 0.06, sigma), DELTA, x, x0)
    assert p == pytest.approx(p_bm, rel=1e-6)


def test_sqr_density_matches_noncentral_chi2_moments():
    """Mean and variance of the CIR transition against the known formulas."""
    kind = "sqr"
    theta = PRESET_THETA[kind]
    kappa, alpha, sigma = theta
    x0 = [0.06]
    mean, sd = conditional_moments(kind, theta, DELTA, x0)
    e = math.exp(-kappa * DELTA)
    want_mean = x0[0] * e + alpha * (1 - e)
    want_var = (
        x0[0] * sigma**2 / kappa * (e - e**2)
        + alpha * sigma**2 / (2 * kappa) * (1 - e) ** 2
    )
    assert mean[0] == pytest.approx(want_mean, rel=1e-12)
    assert sd[0] ** 2 == pytest.approx(want_var, rel=1e-12)
    # density-integrated moments agree too
    grid = np.linspace(1e-9, 0.6, 20001)
    dens = exact_density(kind, theta, DELTA, grid.reshape(-1, 1), x0)
    m1 = np.trapezoid(grid * dens, grid)
    m2 = np.trapezoid((grid - m1) ** 2 * dens, grid)
    assert m1 == pytest.approx(want_mean, rel=1e-6)
    assert m2 == pytest.approx(want_var, rel=1e-5)


def test_sqr_feller_violation_raises():
    with pytest.raises(ValueError):
        exact_density("sqr", (0.1, 0.01, 0.5), DELTA, [0.06], [0.06])


def test_dmrou_k21_zero_factorizes():
    """With k21 = 0 the two components are independent unit-dispersion MROUs."""
    theta = (5.0, 0.0, 10.0, 0.3)
    k11, _, k22, alpha = theta
    x0 = [0.5, -0.4]
    x = [0.55, -0.3]
    p = exact_density("dmrou", theta, DELTA, x, x0)

    def mrou1(x1, x01, kap, al):
        mean = al + (x01 - al) * math.exp(-kap * DELTA)
        var = (1 - math.exp(-2 * kap * DELTA)) / (2 * kap)
        return math.exp(-((x1 - mean) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)

    want = mrou1(x[0], x0[0], k11, alpha) * mrou1(x[1], x0[1], k22, 0.0)
    assert p == pytest.approx(want, rel=1e-12)


# -- Chapman-Kolmogorov ---------------------------------------------------------


def test_chapman_kolmogorov_mrou():
    """Two half-steps compose to one full step for the linear Gaussian model."""
    theta = PRESET_THETA["mrou"]
    kappa = theta[0]
    x0 = [0.09]
    half = DELTA / 2
    mean_full, sd_full = conditional_moments("mrou", theta, DELTA, x0)
    mean_h, sd_h = conditional_moments("mrou", theta, half, x0)
    mean_hh, sd_hh = conditional_moments("mrou", theta, half, mean_h)
    e = math.exp(-kappa * half)
    np.testing.assert_allclose(mean_hh, mean_full, atol=1e-12)
    assert e**2 * sd_h[0] ** 2 + sd_hh[0] ** 2 == pytest.approx(
        sd_full[0] ** 2, rel=1e-12
    )


def test_chapman_kolmogorov_dmrou():
    from difflik.benchmarks import _dmrou_moments

    theta = PRESET_THETA["dmrou"]
    half = DELTA / 2
    E_f, a, V_f, _ = _dmrou_moments(theta, DELTA)
    E_h, _, V_h, _ = _dmrou_moments(theta, half)
    np.testing.assert_allclose(E_h @ E_h, E_f, atol=1e-12)
    np.testing.assert_allclose(E_h @ V_h @ E_h.T + V_h, V_f, atol=1e-12)


def test_exact_loglik_sums_log_densities():
    theta = PRESET_THETA["mrou"]
    s = simulate("mrou", theta, DELTA, 20, [0.09], 7)
    want = sum(
        math.log(float(np.asarray(exact_density("mrou", theta, DELTA, s.x[i + 1], s.x[i])).reshape(-1)[0]))
        for i in range(s.n)
    )
    assert exact_loglik("mrou", theta, s) == pytest.approx(want, rel=1e-12)


# -- samplers --------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["mrou", "sqr", "dmrou"])
def test_simulate_deterministic(kind):
    theta = PRESET_THETA[kind]
    x0 = DEFAULT_X0[kind]
    a = simulate(kind, theta, DELTA, 50, x0, 42)
    b = simulate(kind, theta, DELTA, 50, x0, 42)
    c = simulate(kind, theta, DELTA, 50, x0, 43)
    np.testing.assert_array_equal(a.x, b.x)
    assert not np.array_equal(a.x, c.x)


def test_sqr_paths_positive():
    s = simulate("sqr", PRESET_THETA["sqr"], DELTA, 5000, [0.06], 5)
    assert np.all(s.x > 0)


@pytest.mark.parametrize("kind", ["mrou", "sqr", "dmrou"])
def test_simulate_matches_conditional_moments(kind):
    """One-step draws from the public sampler match the exact conditional
    mean/variance within 4 Monte Carlo standard errors."""
    theta = PRESET_THETA[kind]
    x0 = DEFAULT_X0[kind]
    n_draws = 4000
    samples = np.stack(
        [simulate(kind, theta, DELTA, 1, x0, 10_000 + i).x[1] for i in range(n_draws)]
    )
    m = samples.shape[1]
    mean, sd = conditional_moments(kind, theta, DELTA, x0)
    emp_mean = samples.mean(axis=0)
    emp_cov = np.cov(samples.T).reshape(m, m)
    for i in range(m):
        se_mean = sd[i] / math.sqrt(n_draws)
        assert emp_mean[i] == pytest.approx(mean[i], abs=4 * se_mean)
        var = sd[i] ** 2
        se_var = var * math.sqrt(2 / n_draws)
        assert emp_cov[i, i] == pytest.approx(var, abs=4 * se_var)


@pytest.mark.parametrize("kind", ["mrou", "sqr", "dmrou"])
def test_stationary_draw_moments(kind):
    theta = PRESET_THETA[kind]
    rng = np.random.default_rng(9)
    n = 100_000
    draws = np.stack([stationary_draw(kind, theta, rng) for _ in range(n)])
    if kind == "mrou":
        kappa, alpha, sigma = theta
        want_mean = np.array([alpha])
        want_var = np.array([sigma**2 / (2 * kappa)])
    elif kind == "sqr":
        kappa, alpha, sigma = theta
        want_mean = np.array([alpha])
        want_var = np.array([alpha * sigma**2 / (2 * kappa)])
    else:
        k11, k21, k22, alpha = theta
        K = np.array([[k11, 0.0], [k21, k22]])
        S = linalg.solve_continuous_lyapunov(K, np.eye(2))
        # drift (k11(a - x1), k21(a - x1) - k22 x2) has fixed point (a, 0)
        want_mean = np.array([alpha, 0.0])
        want_var = np.diag(S)
    emp_mean = draws.mean(axis=0)
    emp_var = draws.var(axis=0)
    for i in range(draws.shape[1]):
        se = math.sqrt(want_var[i] / n)
        assert emp_mean[i] == pytest.approx(want_mean[i], abs=4 * se)
        assert emp_var[i] == pytest.approx(
            want_var[i], rel=4 * math.sqrt(2 / n) + 0.01
        )


def test_long_run_mean_near_alpha():
    theta = PRESET_THETA["mrou"]
    kappa, alpha, sigma = theta
    n = 50_000
    s = simulate("mrou", theta, DELTA, n, [alpha], 77)  # start at the mean
    stat_var = sigma**2 / (2 * kappa)
    # effective sample size for an AR(1) with rho = exp(-kappa delta)
    rho = math.exp(-kappa * DELTA)
    ess = n * (1 - rho) / (1 + rho)
    se = math.sqrt(stat_var / ess)
    assert abs(float(s.x.mean()) - alpha) < 4 * se


def test_euler_simulate_smoke():
    model = builtin_model("mrou")
    s = euler_simulate(model, PRESET_THETA["mrou"], DELTA, 100, 16, [0.09], 3)
    assert isinstance(s, ObservationSeries)
    assert s.n == 100 and s.m == 1
    # with many substeps the sample variance of increments is near sigma^2 delta
    inc = np.diff(s.x[:, 0])
    assert float(np.var(inc)) == pytest.approx(0.03**2 * DELTA, rel=0.2)


# -- experiment drivers -----------------------------------------------------------


def test_error_experiment_small():
    res = error_experiment("mrou", PRESET_THETA["mrou"], [DELTA], [1, 2], points=41)
    errs = {(g.delta, g.J): g.max_abs_error for g in res}
    assert errs[(DELTA, 2)] < errs[(DELTA, 1)]
    # determinism
    res2 = error_experiment("mrou", PRESET_THETA["mrou"], [DELTA], [1, 2], points=41)
    assert [g.max_abs_error for g in res2] == [g.max_abs_error for g in res]


def test_mle_experiment_small_deterministic():
    kwargs = dict(
        kind="mrou",
        theta_true=PRESET_THETA["mrou"],
        delta=DELTA,
        n=200,
        N=3,
        Js=[2],
        seed=555,
    )
    a = mle_experiment(**kwargs)
    b = mle_experiment(**kwargs)
    assert np.array_equal(a["_raw"]["exact_err"], b["_raw"]["exact_err"])
    assert np.array_equal(a["_raw"]["approx_diff"][2], b["_raw"]["approx_diff"][2])
    assert a["failures"] == 0
    # exact MLE errors should be small-ish at n=200
    assert abs(a["exact_mle"]["mean_error"][2]) < 0.01  # sigma coordinate

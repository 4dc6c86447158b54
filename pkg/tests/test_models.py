import math

import numpy as np
import pytest

from difflik import exprs
from difflik.models import (
    PRESET_THETA,
    ModelSpec,
    builtin_model,
    dmrou_model,
    lamperti_transformed,
    load_model,
    mrou_model,
    sqr_model,
)

MROU_TOML = """
name = "mrou"
m = 1
params = ["kappa", "alpha", "sigma"]
mu = ["kappa*(alpha - x1)"]
sigma = [["sigma"]]
positive = ["kappa", "sigma"]

[lamperti]
gamma = "x1/sigma"
gamma_inv = "x1*sigma"
"""


def test_builtin_models_validate():
    for kind in ("mrou", "sqr", "dmrou"):
        m = builtin_model(kind)
        assert len(m.params) == len(PRESET_THETA[kind])
    with pytest.raises(ValueError):
        builtin_model("nope")


def test_load_model_roundtrip(tmp_path):
    p = tmp_path / "mrou.toml"
    p.write_text(MROU_TOML)
    loaded = load_model(p)
    built = mrou_model()
    th = built.theta_map(PRESET_THETA["mrou"])
    x = np.linspace(-0.1, 0.2, 7)
    np.testing.assert_allclose(
        loaded.mu[0].eval([x], th), built.mu[0].eval([x], th)
    )
    assert loaded.positive == ("kappa", "sigma")
    assert loaded.lamperti is not None


def test_load_model_missing_key(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('m = 1\nparams = ["a"]\nmu = ["a*x1"]\n')
    with pytest.raises(ValueError, match="missing required key"):
        load_model(p)


def test_validation_errors():
    k = exprs.param("kappa")
    x1, x3 = exprs.var(1), exprs.var(3)
    with pytest.raises(ValueError, match="undeclared"):
        ModelSpec("m", 1, (k * x1,), ((exprs.const(1),),), params=())
    with pytest.raises(ValueError, match="x3"):
        ModelSpec("m", 1, (x3,), ((exprs.const(1),),), params=())
    with pytest.raises(ValueError, match="sigma must be"):
        ModelSpec("m", 2, (x1, x1), ((exprs.const(1),),), params=())


def test_theta_map():
    m = mrou_model()
    assert m.theta_map((1, 2, 3)) == {"kappa": 1, "alpha": 2, "sigma": 3}
    with pytest.raises(ValueError):
        m.theta_map((1, 2))


def test_state_space():
    s = sqr_model()
    assert s.in_state_space([0.5])
    assert not s.in_state_space([-0.5])
    assert not s.in_state_space([0.0])


def test_lamperti_transform_sqr_drift():
    """Z = 2 sqrt(X)/sigma has drift (2 k a / s^2 - 1/2)/z - k z / 2."""
    s = sqr_model()
    z = lamperti_transformed(s)
    th = s.theta_map(PRESET_THETA["sqr"])
    kappa, alpha, sigma = PRESET_THETA["sqr"]
    for zz in (0.4, 1.0, 2.7):
        want = (2 * kappa * alpha / sigma**2 - 0.5) / zz - kappa * zz / 2
        assert z.mu[0].eval([zz], th) == pytest.approx(want, rel=1e-12)
    assert z.sigma[0][0].is_one
    assert z.state_space == ((0.0, math.inf),)


def test_lamperti_transform_mrou_drift():
    m = mrou_model()
    z = lamperti_transformed(m)
    th = m.theta_map(PRESET_THETA["mrou"])
    kappa, alpha, sigma = PRESET_THETA["mrou"]
    for zz in (-1.0, 0.0, 2.0):
        assert z.mu[0].eval([zz], th) == pytest.approx(kappa * (alpha / sigma - zz))


def test_lamperti_requires_transform():
    with pytest.raises(ValueError, match="transform"):
        lamperti_transformed(dmrou_model())


def test_default_box():
    m = sqr_model()
    box = m.default_box()
    assert all(b[0] > 0 for b in box)  # all three parameters positive
    d = dmrou_model()
    assert d.default_box()[3] == (-math.inf, math.inf)  # alpha unconstrained

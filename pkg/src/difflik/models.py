"""Diffusion model specifications: dX = mu(X; theta) dt + sigma(X; theta) dW.

A model is symbolic: drift and dispersion entries are expression trees over
state variables x1..xm and named parameters.  Models can be loaded from TOML
files or taken from the built-in benchmark catalogue (mean-reverting
Ornstein-Uhlenbeck, square-root, and a planar double mean-reverting model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import exprs
from .exprs import parse_expr

__all__ = [
    "ModelSpec",
    "load_model",
    "mrou_model",
    "sqr_model",
    "dmrou_model",
    "builtin_model",
    "lamperti_transformed",
    "PRESET_THETA",
]

_INF = math.inf


@dataclass(frozen=True)
class ModelSpec:
    """Symbolic diffusion model.

    mu is an m-tuple of expressions, sigma an m x m tuple-of-tuples.
    state_space holds per-coordinate open intervals (lo, hi).
    lamperti, when given, is a pair (gamma, gamma_inv) of 1-D expressions in
    x1 / z1 respectively with unit-dispersion transformed dynamics.
    positive lists parameter names constrained to (0, inf); feller marks the
    2*kappa*alpha - sigma^2 > 0 constraint for square-root-type models.
    """

    name: str
    m: int
    mu: tuple
    sigma: tuple
    params: tuple
    state_space: tuple = ()
    lamperti: tuple | None = None
    positive: tuple = ()
    feller: bool = False
    feller_names: tuple = ("kappa", "alpha", "sigma")

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(self.mu))
        object.__setattr__(self, "sigma", tuple(tuple(r) for r in self.sigma))
        object.__setattr__(self, "params", tuple(self.params))
        ss = tuple(tuple(b) for b in self.state_space) or tuple(
            (-_INF, _INF) for _ in range(self.m)
        )
        object.__setattr__(self, "state_space", ss)
        object.__setattr__(self, "positive", tuple(self.positive))
        self._validate()

    def _validate(self):
        if len(self.mu) != self.m:
            raise ValueError(f"mu must have {self.m} entries")
        if len(self.sigma) != self.m or any(len(r) != self.m for r in self.sigma):
            raise ValueError(f"sigma must be {self.m}x{self.m}")
        if len(self.state_space) != self.m:
            raise ValueError(f"state_space needs {self.m} intervals")
        declared = set(self.params)
        used = set()
        for e in list(self.mu) + [s for r in self.sigma for s in r]:
            for v in e.variables():
                if not 1 <= v <= self.m:
                    raise ValueError(f"expression uses x{v} but m={self.m}")
            used |= e.parameters()
        undeclared = used - declared
        if undeclared:
            raise ValueError(f"undeclared parameters: {sorted(undeclared)}")
        for p in self.positive:
            if p not in declared:
                raise ValueError(f"positive constraint on unknown parameter {p}")

    def theta_map(self, theta):
        """Zip an ordered value sequence into a name -> value dict."""
        theta = tuple(theta)
        if len(theta) != len(self.params):
            raise ValueError(
                f"expected {len(self.params)} parameter values, got {len(theta)}"
            )
        return dict(zip(self.params, theta))

    def in_state_space(self, x):
        return all(lo < xi < hi for xi, (lo, hi) in zip(x, self.state_space))

    def default_box(self):
        """Per-parameter (lo, hi) optimizer box derived from constraints."""
        return tuple(
            (1e-12, _INF) if p in self.positive else (-_INF, _INF) for p in self.params
        )


def _parse_interval(pair):
    def side(v):
        if isinstance(v, str):
            s = v.strip().lower()
            if s in ("inf", "+inf", "infinity"):
                return _INF
            if s in ("-inf", "-infinity"):
                return -_INF
            return float(v)
        return float(v)

    lo, hi = side(pair[0]), side(pair[1])
    if not lo < hi:
        raise ValueError(f"empty state-space interval {pair}")
    return (lo, hi)


def load_model(path):
    """Load a ModelSpec from a TOML file.

    Expected layout::

        name = "mymodel"
        m = 1
        params = ["kappa", "alpha", "sigma"]
        mu = ["kappa*(alpha - x1)"]
        sigma = [["sigma"]]
        state_space = [["-inf", "inf"]]      # optional
        positive = ["kappa", "sigma"]        # optional
        feller = false                        # optional
        [lamperti]                            # optional
        gamma = "2*sqrt(x1)/sigma"
        gamma_inv = "(sigma*x1/2)^2"
    """
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    try:
        m = int(doc["m"])
        params = tuple(doc["params"])
        mu = tuple(parse_expr(s) for s in doc["mu"])
        sigma = tuple(tuple(parse_expr(s) for s in row) for row in doc["sigma"])
    except KeyError as e:
        raise ValueError(f"model file missing required key {e}") from None
    state_space = tuple(_parse_interval(p) for p in doc.get("state_space", []))
    lamperti = None
    if "lamperti" in doc:
        lam = doc["lamperti"]
        lamperti = (parse_expr(lam["gamma"]), parse_expr(lam["gamma_inv"]))
    return ModelSpec(
        name=str(doc.get("name", "model")),
        m=m,
        mu=mu,
        sigma=sigma,
        params=params,
        state_space=state_space,
        lamperti=lamperti,
        positive=tuple(doc.get("positive", [])),
        feller=bool(doc.get("feller", False)),
        feller_names=tuple(doc.get("feller_names", ("kappa", "alpha", "sigma"))),
    )


# ---------------------------------------------------------------------------
# Built-in benchmark models and the standard parameter presets.
# ---------------------------------------------------------------------------

PRESET_THETA = {
    "mrou": (0.5, 0.06, 0.03),
    "sqr": (0.5, 0.06, 0.15),
    "dmrou": (5.0, 1.0, 10.0, 0.0),
}


def mrou_model():
    """Mean-reverting Ornstein-Uhlenbeck: dX = kappa(alpha - X)dt + sigma dW."""
    kappa, alpha, sigma = exprs.param("kappa"), exprs.param("alpha"), exprs.param("sigma")
    x1 = exprs.var(1)
    return ModelSpec(
        name="mrou",
        m=1,
        mu=(kappa * (alpha - x1),),
        sigma=((sigma,),),
        params=("kappa", "alpha", "sigma"),
        state_space=((-_INF, _INF),),
        lamperti=(x1 / sigma, x1 * sigma),
        positive=("kappa", "sigma"),
    )


def sqr_model():
    """Square-root process: dX = kappa(alpha - X)dt + sigma sqrt(X) dW."""
    kappa, alpha, sigma = exprs.param("kappa"), exprs.param("alpha"), exprs.param("sigma")
    x1 = exprs.var(1)
    gamma = 2 * exprs.sqrt(x1) / sigma
    gamma_inv = (sigma * x1 / 2) ** 2
    return ModelSpec(
        name="sqr",
        m=1,
        mu=(kappa * (alpha - x1),),
        sigma=((sigma * exprs.sqrt(x1),),),
        params=("kappa", "alpha", "sigma"),
        state_space=((0.0, _INF),),
        lamperti=(gamma, gamma_inv),
        positive=("kappa", "alpha", "sigma"),
        feller=True,
    )


def dmrou_model():
    """Planar double mean-reverting model with unit dispersion:
    dX1 = k11(alpha - X1)dt + dW1, dX2 = k21(alpha - X1)dt - k22 X2 dt + dW2."""
    k11, k21, k22 = exprs.param("k11"), exprs.param("k21"), exprs.param("k22")
    alpha = exprs.param("alpha")
    x1, x2 = exprs.var(1), exprs.var(2)
    one, zero = exprs.const(1), exprs.const(0)
    return ModelSpec(
        name="dmrou",
        m=2,
        mu=(k11 * (alpha - x1), k21 * (alpha - x1) - k22 * x2),
        sigma=((one, zero), (zero, one)),
        params=("k11", "k21", "k22", "alpha"),
        state_space=((-_INF, _INF), (-_INF, _INF)),
        positive=("k11", "k22"),
    )


_BUILTIN = {"mrou": mrou_model, "sqr": sqr_model, "dmrou": dmrou_model}


def builtin_model(kind):
    try:
        return _BUILTIN[kind]()
    except KeyError:
        raise ValueError(f"unknown builtin model {kind!r}; choose from {sorted(_BUILTIN)}")


def lamperti_transformed(model, z_state_space=None):
    """Unit-dispersion model for Z = gamma(X), for 1-D models with a
    declared transform.

    Drift by the change-of-variables formula
    mu_Z(z) = [mu gamma' + (1/2) sigma^2 gamma''](gamma_inv(z)).
    The transformed state space cannot in general be derived without
    parameter values; pass ``z_state_space`` to override the default.  For
    the built-in square-root model gamma(0) = 0 for every admissible
    parameter, so (0, inf) is used automatically.
    """
    if model.m != 1:
        raise ValueError("transform only supported for 1-D models")
    if model.lamperti is None:
        raise ValueError(f"model {model.name!r} declares no variance-stabilizing transform")
    gamma, gamma_inv = model.lamperti
    mu, sig = model.mu[0], model.sigma[0][0]
    g1 = exprs.differentiate(gamma, 1)
    g2 = exprs.differentiate(g1, 1)
    drift_x = mu * g1 + sig * sig * g2 / 2
    drift_z = exprs.substitute(drift_x, 1, gamma_inv)
    if z_state_space is None:
        z_state_space = (0.0, _INF) if model.name == "sqr" else (-_INF, _INF)
    return ModelSpec(
        name=model.name + "_z",
        m=1,
        mu=(drift_z,),
        sigma=((exprs.const(1),),),
        params=model.params,
        state_space=(tuple(z_state_space),),
        lamperti=None,
        positive=model.positive,
        feller=model.feller,
        feller_names=model.feller_names,
    )

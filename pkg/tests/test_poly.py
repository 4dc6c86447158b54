import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difflik.poly import Poly

fractions = st.fractions(
    min_value=-5, max_value=5, max_denominator=6
)
exponents = st.tuples(st.integers(0, 3), st.integers(0, 3))
polys = st.dictionaries(exponents, fractions, max_size=5).map(lambda d: Poly(2, d))
points = st.tuples(
    st.fractions(min_value=-3, max_value=3, max_denominator=4),
    st.fractions(min_value=-3, max_value=3, max_denominator=4),
)


@given(a=polys, b=polys, c=polys)
@settings(max_examples=60, deadline=None)
def test_ring_axioms(a, b, c):
    assert (a + b) + c == a + (b + c)
    assert a + b == b + a
    assert a * b == b * a
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c
    zero = Poly.zero(2)
    one = Poly.constant(2, 1)
    assert a + zero == a
    assert a * one == a
    assert a + (-a) == zero


@given(a=polys, b=polys, z=points)
@settings(max_examples=60, deadline=None)
def test_eval_is_a_homomorphism(a, b, z):
    assert (a + b).eval(z) == a.eval(z) + b.eval(z)
    assert (a * b).eval(z) == a.eval(z) * b.eval(z)


@given(a=polys, b=polys)
@settings(max_examples=60, deadline=None)
def test_product_rule(a, b):
    for i in (1, 2):
        assert (a * b).diff(i) == a.diff(i) * b + a * b.diff(i)


def test_power():
    p = Poly(2, {(1, 0): Fraction(1), (0, 0): Fraction(1)})  # z1 + 1
    q = p**3
    assert q.terms == {
        (3, 0): Fraction(1),
        (2, 0): Fraction(3),
        (1, 0): Fraction(3),
        (0, 0): Fraction(1),
    }
    assert p**0 == Poly.constant(2, 1)


def test_substitute_linear_matches_direct_eval():
    p = Poly(2, {(2, 1): Fraction(3), (0, 2): Fraction(-1), (1, 0): Fraction(2)})
    M = [[0.5, -1.0], [2.0, 0.25]]
    q = p.substitute_linear(M)
    rng = np.random.default_rng(0)
    for _ in range(10):
        y = rng.normal(size=2)
        z = [M[0][0] * y[0] + M[0][1] * y[1], M[1][0] * y[0] + M[1][1] * y[1]]
        assert q.eval(y) == pytest.approx(float(p.eval(z)), rel=1e-12)


def test_gaussian_moment_exact():
    # E[z1^2] = 1, E[z1^4] = 3, E[z1^2 z2^2] = 1, odd moments vanish
    assert Poly(2, {(2, 0): Fraction(1)}).gaussian_moment() == 1
    assert Poly(2, {(4, 0): Fraction(1)}).gaussian_moment() == 3
    assert Poly(2, {(2, 2): Fraction(1)}).gaussian_moment() == 1
    assert Poly(2, {(1, 0): Fraction(7), (3, 1): Fraction(2)}).gaussian_moment() == 0
    assert Poly(1, {(6,): Fraction(1)}).gaussian_moment() == 15


def test_gaussian_moment_against_quadrature():
    p = Poly(2, {(2, 2): Fraction(1, 3), (4, 0): Fraction(-2), (0, 0): Fraction(5)})
    x, w = np.polynomial.hermite_e.hermegauss(32)
    w = w / math.sqrt(2 * math.pi)
    g1, g2 = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w).ravel()
    num = float(np.sum(np.asarray(p.map_coeffs(float).eval([g1.ravel(), g2.ravel()])) * ww))
    assert num == pytest.approx(float(p.gaussian_moment()), rel=1e-10)


def test_array_coefficients():
    c = np.array([1.0, 2.0, 3.0])
    p = Poly(1, {(1,): c, (0,): 2 * c})
    v = p.eval([np.array([2.0, 2.0, 2.0])])
    np.testing.assert_allclose(v, 4 * c)


def test_canonical_str():
    p = Poly(2, {(2, 0): Fraction(1, 2), (0, 0): Fraction(-3), (1, 1): Fraction(2)})
    assert p.canonical_str("z") == "-3 + 1/2*z1^2 + 2*z1*z2"
    assert Poly.zero(2).canonical_str() == "0"


def test_arity_mismatch_raises():
    with pytest.raises(ValueError):
        Poly(1, {(1,): 1}) + Poly(2, {(1, 0): 1})
    with pytest.raises(ValueError):
        Poly(2, {(1,): 1})


def test_diff_of_constant_is_zero():
    assert not Poly.constant(2, Fraction(5)).diff(1)

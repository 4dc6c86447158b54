"""Sparse multivariate polynomials with duck-typed coefficients.

The symbolic layer uses exact ``Fraction``/int coefficients; the density
expansion reuses the same structure with float or numpy-array coefficients
(one array slot per batch element).  Exponent vectors are tuples of
nonnegative ints of length ``arity``; zero coefficients are pruned whenever
that is decidable (exact scalars, plain floats, whole-array zeros).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

__all__ = ["Poly"]


def _is_zero(c):
    # array coefficients are never pruned: the check would cost more than
    # carrying an occasional all-zero slot through the arithmetic
    if isinstance(c, np.ndarray):
        return False
    return c == 0


class Poly:
    __slots__ = ("arity", "terms")

    def __init__(self, arity, terms=None):
        self.arity = arity
        self.terms = {}
        if terms:
            for e, c in terms.items():
                if len(e) != arity:
                    raise ValueError("exponent vector length != arity")
                if not _is_zero(c):
                    self.terms[tuple(e)] = c

    # -- constructors ----------------------------------------------------

    @classmethod
    def constant(cls, arity, c):
        return cls(arity, {(0,) * arity: c})

    @classmethod
    def zero(cls, arity):
        return cls(arity)

    @classmethod
    def variable(cls, arity, i, coeff=1):
        """The monomial coeff * z_i (1-indexed)."""
        e = [0] * arity
        e[i - 1] = 1
        return cls(arity, {tuple(e): coeff})

    @classmethod
    def linear(cls, coeffs):
        """sum_j coeffs[j] * z_{j+1}."""
        arity = len(coeffs)
        terms = {}
        for j, c in enumerate(coeffs):
            if not _is_zero(c):
                e = [0] * arity
                e[j] = 1
                terms[tuple(e)] = c
        return cls(arity, terms)

    # -- ring operations --------------------------------------------------

    def _check(self, other):
        if self.arity != other.arity:
            raise ValueError("polynomial arity mismatch")

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(self.arity, other)
        self._check(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            s = out.get(e, 0) + c
            if _is_zero(s):
                out.pop(e, None)
            else:
                out[e] = s
        p = Poly(self.arity)
        p.terms = out
        return p

    __radd__ = __add__

    def __neg__(self):
        p = Poly(self.arity)
        p.terms = {e: -c for e, c in self.terms.items()}
        return p

    def __sub__(self, other):
        if not isinstance(other, Poly):
            other = Poly.constant(self.arity, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return self.scale(other)
        self._check(other)
        out = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                s = out.get(e, 0) + c1 * c2
                if _is_zero(s):
                    out.pop(e, None)
                else:
                    out[e] = s
        p = Poly(self.arity)
        p.terms = out
        return p

    def __rmul__(self, other):
        return self.scale(other)

    def scale(self, c):
        if _is_zero(c):
            return Poly(self.arity)
        p = Poly(self.arity)
        p.terms = {e: c * v for e, v in self.terms.items()}
        return p

    def __pow__(self, n):
        if n < 0:
            raise ValueError("negative power of a polynomial")
        out = Poly.constant(self.arity, 1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base if n > 1 else base
            n >>= 1
        return out

    def __eq__(self, other):
        return isinstance(other, Poly) and self.arity == other.arity and self.terms == other.terms

    def __hash__(self):
        return hash((self.arity, frozenset(self.terms.items())))

    def __bool__(self):
        return bool(self.terms)

    # -- calculus ----------------------------------------------------------

    def diff(self, i):
        """Partial derivative with respect to z_i (1-indexed)."""
        if not 1 <= i <= self.arity:
            raise ValueError("variable index out of range")
        out = {}
        for e, c in self.terms.items():
            k = e[i - 1]
            if k == 0:
                continue
            e2 = list(e)
            e2[i - 1] = k - 1
            out[tuple(e2)] = c * k
        p = Poly(self.arity)
        p.terms = out
        return p

    def degree(self):
        return max((sum(e) for e in self.terms), default=-1)

    # -- evaluation and substitution ----------------------------------------

    def eval(self, z):
        """Evaluate at point z (sequence of scalars or numpy arrays)."""
        acc = 0
        for e, c in self.terms.items():
            t = c
            for zi, p in zip(z, e):
                if p:
                    t = t * zi**p
            acc = acc + t
        return acc

    def map_coeffs(self, f):
        p = Poly(self.arity)
        p.terms = {e: f(c) for e, c in self.terms.items()}
        return p

    def substitute_linear(self, matrix):
        """Compose with the linear map z_i = sum_j matrix[i][j] * y_j.

        ``matrix`` is arity x arity; entries may be scalars or arrays.
        Returns the polynomial in y.
        """
        m = self.arity
        lin = [Poly.linear([matrix[i][j] for j in range(m)]) for i in range(m)]
        # cache powers of each substituted variable
        powers = [[Poly.constant(m, 1)] for _ in range(m)]
        out = Poly(m)
        for e, c in self.terms.items():
            term = Poly.constant(m, c)
            for i, p in enumerate(e):
                while len(powers[i]) <= p:
                    powers[i].append(powers[i][-1] * lin[i])
                if p:
                    term = term * powers[i][p]
            out = out + term
        return out

    # -- Gaussian integration ------------------------------------------------

    def gaussian_moment(self):
        """Integral against the standard m-variate Gaussian, exact when the
        coefficients are exact (E[z^e] = prod (e_k - 1)!! for even e_k)."""
        acc = 0
        for e, c in self.terms.items():
            if any(k % 2 for k in e):
                continue
            mom = 1
            for k in e:
                for j in range(k - 1, 0, -2):
                    mom *= j
            acc = acc + c * mom
        return acc

    # -- printing --------------------------------------------------------------

    def canonical_str(self, varname="z"):
        """Graded-lex ordered text form with rational coefficients as p/q."""
        if not self.terms:
            return "0"
        keys = sorted(self.terms, key=lambda e: (sum(e), tuple(-k for k in e)))
        parts = []
        for e in keys:
            c = self.terms[e]
            mono = "*".join(
                f"{varname}{i + 1}" + (f"^{p}" if p > 1 else "")
                for i, p in enumerate(e)
                if p
            )
            if isinstance(c, Fraction) and c.denominator != 1:
                cs = f"{c.numerator}/{c.denominator}"
            else:
                cs = str(c)
            parts.append(f"{cs}*{mono}" if mono else cs)
        return " + ".join(parts)

    def __repr__(self):
        return f"Poly({self.canonical_str()})"

"""Symbolic scalar expressions in state variables x1..xm and named parameters.

Nodes are immutable and hash-consed enough for memoization; construction
performs local canonicalization (constant folding, identity elements) but no
global rewriting.  Supported function basis: + - * / pow(rational) exp log
sqrt.  Differentiation is closed on this basis.
"""

from __future__ import annotations

import decimal
import math
from fractions import Fraction

import numpy as np

__all__ = [
    "Expr",
    "DomainError",
    "UnboundParameter",
    "ParseError",
    "const",
    "var",
    "param",
    "exp",
    "log",
    "sqrt",
    "differentiate",
    "substitute",
    "parse_expr",
]


class DomainError(ValueError):
    """Evaluation hit an analytic singularity (div by 0, log<=0, sqrt<0)."""

    def __init__(self, message, expr=None):
        super().__init__(message)
        self.expr = expr


class UnboundParameter(KeyError):
    """Expression references a parameter that is not bound."""


class ParseError(ValueError):
    pass


_CONST, _VAR, _PARAM = "const", "var", "param"
_ADD, _MUL, _DIV, _POW = "add", "mul", "div", "pow"
_EXP, _LOG, _SQRT = "exp", "log", "sqrt"


class Expr:
    __slots__ = ("kind", "payload", "children", "_hash")

    def __init__(self, kind, payload=None, children=()):
        self.kind = kind
        self.payload = payload
        self.children = tuple(children)
        self._hash = hash((kind, payload, self.children))

    # -- construction helpers -------------------------------------------------

    def __add__(self, other):
        return _add(self, _coerce(other))

    def __radd__(self, other):
        return _add(_coerce(other), self)

    def __sub__(self, other):
        return _add(self, _mul(const(-1), _coerce(other)))

    def __rsub__(self, other):
        return _add(_coerce(other), _mul(const(-1), self))

    def __mul__(self, other):
        return _mul(self, _coerce(other))

    def __rmul__(self, other):
        return _mul(_coerce(other), self)

    def __truediv__(self, other):
        return _div(self, _coerce(other))

    def __rtruediv__(self, other):
        return _div(_coerce(other), self)

    def __neg__(self):
        return _mul(const(-1), self)

    def __pow__(self, exponent):
        return _pow(self, exponent)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Expr)
            and self.kind == other.kind
            and self.payload == other.payload
            and self.children == other.children
        )

    # -- queries ---------------------------------------------------------------

    @property
    def is_zero(self):
        return self.kind == _CONST and self.payload == 0

    @property
    def is_one(self):
        return self.kind == _CONST and self.payload == 1

    def variables(self):
        """Set of state-variable indices appearing in the tree."""
        out = set()
        stack = [self]
        while stack:
            e = stack.pop()
            if e.kind == _VAR:
                out.add(e.payload)
            stack.extend(e.children)
        return out

    def parameters(self):
        out = set()
        stack = [self]
        while stack:
            e = stack.pop()
            if e.kind == _PARAM:
                out.add(e.payload)
            stack.extend(e.children)
        return out

    # -- evaluation --------------------------------------------------------

    def eval(self, x, theta):
        """Evaluate at state vector ``x`` (1-indexed vars) and parameter map.

        Entries of ``x`` may be floats or numpy arrays (broadcasting).
        """
        k = self.kind
        if k == _CONST:
            p = self.payload
            return float(p) if isinstance(p, Fraction) else p
        if k == _VAR:
            try:
                return x[self.payload - 1]
            except IndexError:
                raise DomainError(f"state variable x{self.payload} out of range", self)
        if k == _PARAM:
            try:
                return theta[self.payload]
            except KeyError:
                raise UnboundParameter(self.payload)
        vals = [c.eval(x, theta) for c in self.children]
        if k == _ADD:
            acc = vals[0]
            for v in vals[1:]:
                acc = acc + v
            return acc
        if k == _MUL:
            acc = vals[0]
            for v in vals[1:]:
                acc = acc * v
            return acc
        if k == _DIV:
            num, den = vals
            if np.any(den == 0):
                raise DomainError("division by zero", self)
            return num / den
        if k == _POW:
            base = vals[0]
            e = self.payload
            if e.denominator == 1:
                if e < 0 and np.any(base == 0):
                    raise DomainError("zero base with negative exponent", self)
                return base ** int(e)
            if np.any(base < 0):
                raise DomainError("negative base with fractional exponent", self)
            return np.power(base, float(e)) if isinstance(base, np.ndarray) else base ** float(e)
        if k == _EXP:
            return np.exp(vals[0])
        if k == _LOG:
            if np.any(vals[0] <= 0):
                raise DomainError("log of nonpositive value", self)
            return np.log(vals[0])
        if k == _SQRT:
            if np.any(vals[0] < 0):
                raise DomainError("sqrt of negative value", self)
            return np.sqrt(vals[0])
        raise AssertionError(f"unknown node kind {k}")

    # -- printing ------------------------------------------------------------

    def __repr__(self):
        return f"Expr({self})"

    def __str__(self):
        k = self.kind
        if k == _CONST:
            return str(self.payload)
        if k == _VAR:
            return f"x{self.payload}"
        if k == _PARAM:
            return self.payload
        if k == _ADD:
            return "(" + " + ".join(str(c) for c in self.children) + ")"
        if k == _MUL:
            return "(" + "*".join(str(c) for c in self.children) + ")"
        if k == _DIV:
            return f"({self.children[0]}/{self.children[1]})"
        if k == _POW:
            return f"({self.children[0]})^({self.payload})"
        return f"{k}({self.children[0]})"


def _coerce(v):
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, Fraction)):
        return const(v)
    if isinstance(v, float):
        return const(v)
    raise TypeError(f"cannot use {type(v)} in an Expr")


def const(value):
    if isinstance(value, int):
        value = Fraction(value)
    return Expr(_CONST, value)


def var(i):
    if i < 1:
        raise ValueError("state variables are 1-indexed")
    return Expr(_VAR, i)


def param(name):
    return Expr(_PARAM, name)


def _const_value(e):
    return e.payload if e.kind == _CONST else None


def _add(a, b):
    terms = []
    for t in (a, b):
        if t.kind == _ADD:
            terms.extend(t.children)
        else:
            terms.append(t)
    csum = Fraction(0)
    rest = []
    for t in terms:
        if t.kind == _CONST and isinstance(t.payload, (Fraction, int)):
            csum += t.payload
        elif t.is_zero:
            pass
        else:
            rest.append(t)
    if csum != 0:
        rest.append(const(csum))
    if not rest:
        return const(0)
    if len(rest) == 1:
        return rest[0]
    return Expr(_ADD, None, rest)


def _mul(a, b):
    factors = []
    for f in (a, b):
        if f.kind == _MUL:
            factors.extend(f.children)
        else:
            factors.append(f)
    cprod = Fraction(1)
    rest = []
    for f in factors:
        if f.kind == _CONST and isinstance(f.payload, (Fraction, int)):
            cprod *= f.payload
        elif f.is_one:
            pass
        else:
            rest.append(f)
    if cprod == 0:
        return const(0)
    if cprod != 1:
        rest.insert(0, const(cprod))
    if not rest:
        return const(1)
    if len(rest) == 1:
        return rest[0]
    return Expr(_MUL, None, rest)


def _div(a, b):
    if a.is_zero and not b.is_zero:
        return const(0)
    if b.is_one:
        return a
    ca, cb = _const_value(a), _const_value(b)
    if isinstance(ca, Fraction) and isinstance(cb, Fraction):
        if cb == 0:
            raise ZeroDivisionError("constant division by zero in Expr")
        return const(ca / cb)
    return Expr(_DIV, None, (a, b))


def _pow(base, exponent):
    if isinstance(exponent, Expr):
        if exponent.kind == _CONST and isinstance(exponent.payload, Fraction):
            exponent = exponent.payload
        else:
            raise TypeError("exponents must be rational constants")
    exponent = Fraction(exponent)
    if exponent == 0:
        return const(1)
    if exponent == 1:
        return base
    c = _const_value(base)
    if isinstance(c, Fraction) and exponent.denominator == 1:
        if c == 0 and exponent < 0:
            raise ZeroDivisionError("0 to a negative power")
        return const(c ** int(exponent))
    if base.kind == _POW:
        return _pow(base.children[0], base.payload * exponent)
    if base.kind == _SQRT:
        return _pow(base.children[0], exponent / 2)
    return Expr(_POW, exponent, (base,))


def exp(e):
    e = _coerce(e)
    if e.is_zero:
        return const(1)
    return Expr(_EXP, None, (e,))


def log(e):
    e = _coerce(e)
    if e.is_one:
        return const(0)
    return Expr(_LOG, None, (e,))


def sqrt(e):
    e = _coerce(e)
    c = _const_value(e)
    if isinstance(c, Fraction):
        # keep exact perfect squares, otherwise defer to runtime
        num, den = c.numerator, c.denominator
        if num >= 0:
            rn, rd = math.isqrt(num), math.isqrt(den)
            if rn * rn == num and rd * rd == den:
                return const(Fraction(rn, rd))
    return Expr(_SQRT, None, (e,))


def differentiate(e, i):
    """Partial derivative of ``e`` with respect to state variable x_i."""
    k = e.kind
    if k in (_CONST, _PARAM):
        return const(0)
    if k == _VAR:
        return const(1) if e.payload == i else const(0)
    if k == _ADD:
        out = const(0)
        for c in e.children:
            out = out + differentiate(c, i)
        return out
    if k == _MUL:
        out = const(0)
        ch = e.children
        for j, c in enumerate(ch):
            dj = differentiate(c, i)
            if dj.is_zero:
                continue
            term = dj
            for l, o in enumerate(ch):
                if l != j:
                    term = term * o
            out = out + term
        return out
    if k == _DIV:
        num, den = e.children
        dn, dd = differentiate(num, i), differentiate(den, i)
        return (dn * den - num * dd) / (den * den)
    if k == _POW:
        base = e.children[0]
        db = differentiate(base, i)
        if db.is_zero:
            return const(0)
        return const(e.payload) * _pow(base, e.payload - 1) * db
    if k == _EXP:
        return e * differentiate(e.children[0], i)
    if k == _LOG:
        return differentiate(e.children[0], i) / e.children[0]
    if k == _SQRT:
        return differentiate(e.children[0], i) / (const(2) * e)
    raise AssertionError(f"unknown node kind {k}")


def substitute(e, i, replacement):
    """Replace every occurrence of state variable x_i by ``replacement``."""
    k = e.kind
    if k == _VAR:
        return replacement if e.payload == i else e
    if k in (_CONST, _PARAM):
        return e
    ch = [substitute(c, i, replacement) for c in e.children]
    if k == _ADD:
        out = const(0)
        for c in ch:
            out = out + c
        return out
    if k == _MUL:
        out = const(1)
        for c in ch:
            out = out * c
        return out
    if k == _DIV:
        return ch[0] / ch[1]
    if k == _POW:
        return _pow(ch[0], e.payload)
    if k == _EXP:
        return exp(ch[0])
    if k == _LOG:
        return log(ch[0])
    if k == _SQRT:
        return sqrt(ch[0])
    raise AssertionError(f"unknown node kind {k}")


# ---------------------------------------------------------------------------
# Infix parser.  Grammar (documented for model files):
#
#   expr    := term (("+"|"-") term)*
#   term    := unary (("*"|"/") unary)*
#   unary   := "-" unary | power
#   power   := atom (("^"|"**") unary)?        (right associative)
#   atom    := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"
#
# Identifiers x1..x<m> denote state variables; exp/log/sqrt are functions;
# any other identifier is a named parameter.
# ---------------------------------------------------------------------------

import re

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)(?P<sci>[eE][+-]?\d+)?"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[()+\-*/^]))"
)

_FUNCS = {"exp": exp, "log": log, "sqrt": sqrt}


def _tokenize(s):
    pos = 0
    tokens = []
    while pos < len(s):
        m = _TOKEN.match(s, pos)
        if not m or m.end() == pos:
            if s[pos:].strip():
                raise ParseError(f"unexpected character at column {pos + 1}: {s[pos:]!r}")
            break
        if m.group("num") is not None:
            text = m.group("num") + (m.group("sci") or "")
            if "." in text or "e" in text or "E" in text:
                tokens.append(("num", const(Fraction(decimal.Decimal(text)))))
            else:
                tokens.append(("num", const(int(text))))
        elif m.group("ident") is not None:
            tokens.append(("ident", m.group("ident")))
        else:
            op = m.group("op")
            tokens.append(("op", "^" if op == "**" else op))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens, src):
        self.tokens = tokens
        self.pos = 0
        self.src = src

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, val = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r} in {self.src!r}")

    def parse(self):
        e = self.expr()
        if self.pos != len(self.tokens):
            raise ParseError(f"trailing input in {self.src!r}")
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, val = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.term()
                e = e + rhs if val == "+" else e - rhs
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            kind, val = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.unary()
                e = e * rhs if val == "*" else e / rhs
            else:
                return e

    def unary(self):
        kind, val = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return -self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        kind, val = self.peek()
        if kind == "op" and val == "^":
            self.next()
            e = self.unary()
            if e.kind != _CONST or not isinstance(e.payload, Fraction):
                raise ParseError(f"exponent must be a rational constant in {self.src!r}")
            return _pow(base, e.payload)
        return base

    def atom(self):
        kind, val = self.next()
        if kind == "num":
            return val
        if kind == "ident":
            nkind, nval = self.peek()
            if nkind == "op" and nval == "(":
                if val not in _FUNCS:
                    raise ParseError(f"unknown function {val!r} in {self.src!r}")
                self.next()
                arg = self.expr()
                self.expect_op(")")
                return _FUNCS[val](arg)
            m = re.fullmatch(r"x(\d+)", val)
            if m:
                return var(int(m.group(1)))
            return param(val)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token in {self.src!r}")


def parse_expr(s):
    """Parse an infix expression string into an Expr."""
    return _Parser(_tokenize(s), s).parse()

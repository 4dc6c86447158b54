"""Multi-index bookkeeping and exact algebra of iterated stochastic integrals.

Indices are tuples over {0, 1, ..., m}: entry 0 integrates dt, entry j >= 1
integrates dW_j.  The first entry is the outermost integrator.  Everything
here is exact-rational and fixed to terminal time t = 1.

The module provides
  * Stratonovich -> Ito conversion of a single iterated integral,
  * products of iterated Ito integrals as linear combinations,
  * unconditional expectations at t=1,
  * conditional expectations given W(1) = z as exact polynomials in z,
    via the Brownian-bridge substitution dW_k -> dB_k - B_k(1) dt + z_k dt.

All heavy functions are memoized; caches are only ever appended to, so
concurrent readers are safe.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

from .poly import Poly

__all__ = [
    "MultiIndex",
    "IntegralCombination",
    "norm",
    "strat_to_ito",
    "ito_product",
    "ito_product_n",
    "unconditional_expectation",
    "expected_product",
    "bridge_conditional_expectation",
    "conditional_product_expectation",
    "clear_caches",
]


def _entries(i):
    if isinstance(i, MultiIndex):
        return i.entries
    return tuple(i)


def norm(i):
    """Index norm: time integrators count twice, Brownian ones once."""
    return sum(2 if e == 0 else 1 for e in _entries(i))


@dataclass(frozen=True)
class MultiIndex:
    """Finite index over {0..m}; 0 = dt, j >= 1 = dW_j."""

    entries: tuple
    m: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for e in self.entries:
            if not 0 <= e <= self.m:
                raise ValueError(f"index entry {e} outside 0..{self.m}")

    @property
    def length(self):
        return len(self.entries)

    @property
    def norm(self):
        return norm(self.entries)

    def minus(self):
        """Drop the first (outermost) entry."""
        if not self.entries:
            raise ValueError("minus of the empty index")
        return MultiIndex(self.entries[1:], self.m)

    def __iter__(self):
        return iter(self.entries)


class IntegralCombination:
    """Formal linear combination of iterated integrals, exact coefficients."""

    __slots__ = ("terms", "flavor")

    def __init__(self, terms=None, flavor="ito"):
        if flavor not in ("ito", "stratonovich"):
            raise ValueError("flavor must be 'ito' or 'stratonovich'")
        self.flavor = flavor
        self.terms = {}
        if terms:
            for i, c in terms.items():
                c = Fraction(c)
                if c:
                    self.terms[_entries(i)] = c

    def __add__(self, other):
        if self.flavor != other.flavor:
            raise ValueError("cannot mix Ito and Stratonovich combinations")
        out = dict(self.terms)
        for i, c in other.terms.items():
            s = out.get(i, 0) + c
            if s:
                out[i] = s
            else:
                out.pop(i, None)
        r = IntegralCombination(flavor=self.flavor)
        r.terms = out
        return r

    def scale(self, c):
        c = Fraction(c)
        r = IntegralCombination(flavor=self.flavor)
        if c:
            r.terms = {i: c * v for i, v in self.terms.items()}
        return r

    def prepend(self, e):
        """Integrate the whole combination once more: dW_e outermost."""
        r = IntegralCombination(flavor=self.flavor)
        r.terms = {(e,) + i: c for i, c in self.terms.items()}
        return r

    def __eq__(self, other):
        return (
            isinstance(other, IntegralCombination)
            and self.flavor == other.flavor
            and self.terms == other.terms
        )

    def __repr__(self):
        body = ", ".join(f"{i}: {c}" for i, c in sorted(self.terms.items()))
        return f"IntegralCombination({{{body}}}, {self.flavor})"


_strat_cache = {}
_product_cache = {}
_mu_cache = {}
_sub_cache = {}
_factor_cache = {}
_cond_cache = {}


def clear_caches():
    for c in (_strat_cache, _product_cache, _mu_cache, _sub_cache, _factor_cache, _cond_cache):
        c.clear()


def strat_to_ito(i):
    """Express the iterated Stratonovich integral J_i(1) in Ito integrals.

    Recursion: J_i = I_(i1)[J_{-i}] + 1_{i1=i2!=0} I_(0)[J_{-(-i)} / 2].
    """
    i = _entries(i)
    cached = _strat_cache.get(i)
    if cached is not None:
        return cached
    if len(i) <= 1:
        res = IntegralCombination({i: 1})
    else:
        res = strat_to_ito(i[1:]).prepend(i[0])
        if i[0] == i[1] != 0:
            res = res + strat_to_ito(i[2:]).scale(Fraction(1, 2)).prepend(0)
    _strat_cache[i] = res
    return res


def ito_product(a, b):
    """Product of two iterated Ito integrals as an exact linear combination."""
    a, b = _entries(a), _entries(b)
    key = (a, b) if a <= b else (b, a)
    cached = _product_cache.get(key)
    if cached is not None:
        return cached
    a, b = key
    if not a:
        res = IntegralCombination({b: 1})
    elif not b:
        res = IntegralCombination({a: 1})
    else:
        res = _combine_product(ito_product(a, b[1:]), b[0]) + _combine_product(
            ito_product(a[1:], b), a[0]
        )
        if a[0] == b[0] != 0:
            res = res + _combine_product(ito_product(a[1:], b[1:]), 0)
    _product_cache[key] = res
    return res


def _combine_product(comb, outer):
    return comb.prepend(outer)


def ito_product_n(indices):
    """Left fold of ito_product over a nonempty list of indices."""
    indices = [_entries(i) for i in indices]
    if not indices:
        raise ValueError("ito_product_n needs at least one index")
    acc = IntegralCombination({indices[0]: 1})
    for nxt in indices[1:]:
        out = IntegralCombination()
        for i, c in acc.terms.items():
            out = out + ito_product(i, nxt).scale(c)
        acc = out
    return acc


def unconditional_expectation(comb):
    """E at t=1: the all-zero index of length n contributes 1/n!, all other
    indices vanish by the martingale property; the empty index is 1."""
    total = Fraction(0)
    for i, c in comb.terms.items():
        if all(e == 0 for e in i):
            total += c * Fraction(1, math.factorial(len(i)))
    return total


def expected_product(indices):
    """E[prod_k I_{i_k}(1)] for a multiset of Ito indices, exact.

    Computed by a recursion obtained from the Ito formula for the product:
    the time derivative of E[prod I_{i_k}(t)] collects the t-integrators and
    the pairwise quadratic covariations, and self-similarity in t pins the
    constant.  Equivalent to expanding with ito_product_n and taking
    unconditional_expectation, but polynomial-cost.
    """
    ms = tuple(sorted(_entries(i) for i in indices if len(_entries(i))))
    return _mu(ms)


def _mu(ms):
    if not ms:
        return Fraction(1)
    cached = _mu_cache.get(ms)
    if cached is not None:
        return cached
    total_norm = sum(norm(i) for i in ms)
    if total_norm % 2:
        _mu_cache[ms] = Fraction(0)
        return Fraction(0)
    # W_k -> -W_k symmetry: an odd count of any Brownian letter kills the mean
    counts = {}
    for i in ms:
        for e in i:
            if e:
                counts[e] = counts.get(e, 0) + 1
    if any(c % 2 for c in counts.values()):
        _mu_cache[ms] = Fraction(0)
        return Fraction(0)
    total = Fraction(0)
    n = len(ms)
    for k in range(n):
        if ms[k][0] == 0:
            total += _mu(_reduce(ms, (k,)))
    for k in range(n):
        if ms[k][0] == 0:
            continue
        for l in range(k + 1, n):
            if ms[k][0] == ms[l][0]:
                total += _mu(_reduce(ms, (k, l)))
    res = total / Fraction(total_norm, 2) if total else Fraction(0)
    _mu_cache[ms] = res
    return res


def _reduce(ms, positions):
    out = []
    for k, i in enumerate(ms):
        j = i[1:] if k in positions else i
        if j:
            out.append(j)
    return tuple(sorted(out))


# ---------------------------------------------------------------------------
# Brownian-bridge conditional expectations.
#
# Substituting dW_k(t) -> dB_k(t) - B_k(1) dt + z_k dt (with B_0 = 0, z_0 = 1)
# turns I_i(1) into a sum over per-position choices.  A term is encoded as
# (j, bfactors, zfactors): j is the residual Ito index over the bridge
# Brownians, bfactors the multiset of B_e(1) factors (each carries a minus
# sign), zfactors the multiset of z_e monomial factors.
# ---------------------------------------------------------------------------


def _substituted_ito(i):
    """Bridge substitution of a single Ito index -> {(j, bfac, zfac): coeff}."""
    cached = _sub_cache.get(i)
    if cached is not None:
        return cached
    options = []
    for e in i:
        if e == 0:
            options.append((((0,), (), (), 1),))
        else:
            options.append(
                (
                    ((e,), (), (), 1),      # keep dB_e
                    ((0,), (e,), (), -1),   # -B_e(1) dt
                    ((0,), (), (e,), 1),    # z_e dt
                )
            )
    out = {}
    for choice in itertools.product(*options):
        j = tuple(c[0][0] for c in choice)
        bfac = tuple(sorted(x for c in choice for x in c[1]))
        zfac = tuple(sorted(x for c in choice for x in c[2]))
        sign = 1
        for c in choice:
            sign *= c[3]
        key = (j, bfac, zfac)
        out[key] = out.get(key, 0) + sign
    out = {k: v for k, v in out.items() if v}
    _sub_cache[i] = out
    return out


def _term_expectation(j, bfac):
    """E[prod B_e(1) * I_j(1)] with each B_e(1) viewed as the singleton
    integral I_(e)(1)."""
    ms = [(e,) for e in bfac]
    ms.append(j)
    return expected_product(ms)


def _zmono_to_exponents(zfac, m):
    e = [0] * m
    for k in zfac:
        e[k - 1] += 1
    return tuple(e)


def bridge_conditional_expectation(i, m=None):
    """E(I_i(1) | W(1) = z) as an exact polynomial in z = (z_1..z_m)."""
    ent = _entries(i)
    if m is None:
        m = i.m if isinstance(i, MultiIndex) else max(ent, default=1)
        m = max(m, 1)
    poly = Poly(m)
    terms = {}
    for (j, bfac, zfac), c in _substituted_ito(ent).items():
        val = _term_expectation(j, bfac)
        if not val:
            continue
        e = _zmono_to_exponents(zfac, m)
        s = terms.get(e, Fraction(0)) + c * val
        if s:
            terms[e] = s
        else:
            terms.pop(e, None)
    poly.terms = terms
    return poly


def _substituted_strat(i):
    """Bridge substitution of a Stratonovich index: convert to Ito first,
    then substitute each Ito term; merged term dictionary."""
    cached = _factor_cache.get(i)
    if cached is not None:
        return cached
    out = {}
    for a, c in strat_to_ito(i).terms.items():
        for key, s in _substituted_ito(a).items():
            v = out.get(key, Fraction(0)) + c * s
            if v:
                out[key] = v
            else:
                out.pop(key, None)
    out = {k: v for k, v in out.items()}
    _factor_cache[i] = out
    return out


def conditional_product_expectation(indices, m=None):
    """P(z) = E(prod_w J_{i_w}(1) | W(1) = z) as an exact polynomial.

    Pipeline: Stratonovich -> Ito per factor, bridge substitution per factor,
    expansion of the product with multiset merging of identical factors, and
    exact expectations of the residual products.
    """
    ents = [_entries(i) for i in indices]
    if not ents:
        raise ValueError("need at least one index")
    if m is None:
        ms = [i.m for i in indices if isinstance(i, MultiIndex)]
        m = ms[0] if ms else max((max(e, default=1) for e in ents), default=1)
        m = max(m, 1)
    key = (tuple(sorted(ents)), m)
    cached = _cond_cache.get(key)
    if cached is not None:
        return cached

    # group identical factors and expand each group with multiset merging
    groups = []
    for ent, count in sorted(_counter(ents).items()):
        factor = list(_substituted_strat(ent).items())
        expanded = {}
        for combo in itertools.combinations_with_replacement(range(len(factor)), count):
            mult = _multinomial(count, combo)
            coeff = Fraction(mult)
            js, bf, zf = [], [], []
            for idx in combo:
                (j, bfac, zfac), c = factor[idx]
                coeff *= c
                if j:
                    js.append(j)
                bf.extend(bfac)
                zf.extend(zfac)
            if not coeff:
                continue
            k = (tuple(sorted(js)), tuple(sorted(bf)), tuple(sorted(zf)))
            v = expanded.get(k, Fraction(0)) + coeff
            if v:
                expanded[k] = v
            else:
                expanded.pop(k, None)
        groups.append(expanded)

    # cross-product across groups
    acc = {((), (), ()): Fraction(1)}
    for g in groups:
        nxt = {}
        for (js1, bf1, zf1), c1 in acc.items():
            for (js2, bf2, zf2), c2 in g.items():
                k = (
                    tuple(sorted(js1 + js2)),
                    tuple(sorted(bf1 + bf2)),
                    tuple(sorted(zf1 + zf2)),
                )
                v = nxt.get(k, Fraction(0)) + c1 * c2
                if v:
                    nxt[k] = v
                else:
                    nxt.pop(k, None)
        acc = nxt

    poly_terms = {}
    for (js, bf, zf), c in acc.items():
        ms = [(e,) for e in bf] + list(js)
        val = expected_product(ms) if ms else Fraction(1)
        if not val:
            continue
        e = _zmono_to_exponents(zf, m)
        s = poly_terms.get(e, Fraction(0)) + c * val
        if s:
            poly_terms[e] = s
        else:
            poly_terms.pop(e, None)
    poly = Poly(m)
    poly.terms = poly_terms
    _cond_cache[key] = poly
    return poly


def _counter(items):
    out = {}
    for it in items:
        out[it] = out.get(it, 0) + 1
    return out


def _multinomial(count, combo):
    """count! / prod(multiplicities!) for a sorted selection ``combo``."""
    res = math.factorial(count)
    run = 1
    for a, b in zip(combo, combo[1:]):
        if a == b:
            run += 1
        else:
            res //= math.factorial(run)
            run = 1
    res //= math.factorial(run)
    return res

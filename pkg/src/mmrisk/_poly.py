"""Dense univariate polynomials as coefficient lists, lowest degree first.

Works over ``Fraction`` (exact) or ``float``/``complex``; the same code path
serves both, only ``gcd`` is restricted to exact coefficients.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import permutations
from math import gcd as igcd
from typing import Sequence

import sympy

Poly = list
_X = sympy.Symbol("r")


def trim(p: Sequence) -> Poly:
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p or [0]


def degree(p: Sequence) -> int:
    p = trim(p)
    return -1 if p == [0] else len(p) - 1


def add(p: Sequence, q: Sequence) -> Poly:
    n = max(len(p), len(q))
    return trim([(p[i] if i < len(p) else 0) + (q[i] if i < len(q) else 0) for i in range(n)])


def sub(p: Sequence, q: Sequence) -> Poly:
    return add(p, scale(q, -1))


def scale(p: Sequence, a) -> Poly:
    return trim([a * x for x in p])


def mul(p: Sequence, q: Sequence) -> Poly:
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a == 0:
            continue
        for j, b in enumerate(q):
            out[i + j] += a * b
    return trim(out)


def power(p: Sequence, n: int) -> Poly:
    out: Poly = [1]
    for _ in range(n):
        out = mul(out, p)
    return out


def divmod_(p: Sequence, q: Sequence) -> tuple[Poly, Poly]:
    p, q = trim(p), trim(q)
    if q == [0]:
        raise ZeroDivisionError("polynomial division by zero")
    r = list(p)
    dq = len(q) - 1
    if len(r) - 1 < dq:
        return [0], r
    out = [0] * (len(r) - dq)
    lead = q[-1]
    for i in range(len(r) - 1, dq - 1, -1):
        coef = r[i] / lead
        out[i - dq] = coef
        if coef != 0:
            for j in range(dq + 1):
                r[i - dq + j] -= coef * q[j]
    return trim(out), trim(r[:dq] or [0])


def exact_div(p: Sequence, q: Sequence) -> Poly:
    quo, rem = divmod_(p, q)
    if any(x != 0 for x in rem):
        raise ArithmeticError("inexact polynomial division")
    return quo


def gcd(p: Sequence, q: Sequence) -> Poly:
    """Monic gcd over the rationals.

    Delegated to sympy: naive Euclid over Fractions suffers coefficient
    blow-up once inputs are binary rationals of arbitrary doubles.
    """
    a = sympy.Poly([sympy.Rational(Fraction(x).numerator, Fraction(x).denominator) for x in reversed(trim(p))], _X, domain="QQ")
    b = sympy.Poly([sympy.Rational(Fraction(x).numerator, Fraction(x).denominator) for x in reversed(trim(q))], _X, domain="QQ")
    g = a.gcd(b)
    if g.is_zero:
        return [Fraction(0)]
    coeffs = g.monic().all_coeffs()
    return [Fraction(int(c.p), int(c.q)) for c in reversed(coeffs)]


def evaluate(p: Sequence, x):
    acc = 0
    for a in reversed(p):
        acc = acc * x + a
    return acc


def deriv(p: Sequence) -> Poly:
    return trim([i * p[i] for i in range(1, len(p))]) if len(p) > 1 else [0]


def primitive_integer(p: Sequence[Fraction]) -> tuple[Poly, Fraction]:
    """Scale rational p to coprime integers with positive leading term.

    Returns (q, f) with q = f * p.
    """
    p = trim(p)
    den = 1
    for x in p:
        den = den * Fraction(x).denominator // igcd(den, Fraction(x).denominator)
    ints = [int(Fraction(x) * den) for x in p]
    g = 0
    for x in ints:
        g = igcd(g, x)
    g = g or 1
    if ints[-1] < 0:
        g = -g
    return [x // g for x in ints], Fraction(den, g)


def det(mat: list[list[Poly]]) -> Poly:
    """Determinant of a square polynomial matrix (Leibniz expansion)."""
    n = len(mat)
    if n == 0:
        return [1]
    if n == 1:
        return trim(mat[0][0])
    if n <= 3:
        total: Poly = [0]
        for perm in permutations(range(n)):
            sign = _perm_sign(perm)
            term: Poly = [sign]
            for i, j in enumerate(perm):
                term = mul(term, mat[i][j])
                if term == [0]:
                    break
            total = add(total, term)
        return total
    # Laplace expansion along the first row
    total = [0]
    for j in range(n):
        if trim(mat[0][j]) == [0]:
            continue
        minor = [row[:j] + row[j + 1 :] for row in mat[1:]]
        term = mul(mat[0][j], det(minor))
        total = add(total, term) if j % 2 == 0 else sub(total, term)
    return total


def _perm_sign(perm: Sequence[int]) -> int:
    sign = 1
    seen = list(perm)
    for i in range(len(seen)):
        while seen[i] != i:
            j = seen[i]
            seen[i], seen[j] = seen[j], seen[i]
            sign = -sign
    return sign


def adjugate(mat: list[list[Poly]]) -> list[list[Poly]]:
    n = len(mat)
    if n == 1:
        return [[[1]]]
    adj = [[[0] for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            minor = [row[:j] + row[j + 1 :] for k, row in enumerate(mat) if k != i]
            cof = det(minor)
            adj[j][i] = cof if (i + j) % 2 == 0 else scale(cof, -1)
    return adj

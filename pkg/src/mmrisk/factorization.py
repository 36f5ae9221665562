"""Closed-form ruin probabilities through the rational matrix G(r) of the dual.

Pipeline, for a model with negative drift and no switching jumps:

1. ``build_G_rational``: G(r) = r K_dual(r)^-1 (C - rI)^-1 as one polynomial
   matrix over a common denominator D(r), common factors cancelled.
2. ``find_poles``: roots of D (companion eigenvalues, Newton polished).
3. ``partial_fractions`` then ``project_minus``: keep the left-half-plane part.
4. ``ladder_exit_matrix``: R+ = (G^-(0) + (Lam - Q)^-1)^-1 e pi.
5. ``infimum_distribution``: P_i{inf of -xi < x} = sum_k A_ik / rho_k exp(rho_k x).

``ruin_probability`` reads psi_i(u) off step 5 at x = -u.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np
from numpy.typing import NDArray

from . import _poly as P
from .errors import (
    ConsistencyError,
    DriftError,
    ImproperRationalError,
    MultiplicityError,
    PipelineError,
)
from .model import DualSpec, ValidatedModel, dual_spec, rationalize
from .transforms import p0_limit, solve_checked


@dataclass(frozen=True)
class PolynomialMatrix:
    """G(r) = num[i][j](r) / den(r); coefficient lists are lowest degree first."""

    num: list[list[list]]
    den: list
    # True when every parameter is a short rational; den is then a primitive
    # integer polynomial. Otherwise the coefficients are exact binary
    # rationals of the input doubles and den is monic.
    exact: bool

    @property
    def m(self) -> int:
        return len(self.num)

    def __call__(self, r: complex) -> NDArray:
        # double-precision Horner loses digits near clustered roots of high-degree D
        with mpmath.workdps(40):
            x = mpmath.mpmathify(r)
            d = mpmath.polyval(self._mp_den[::-1], x)
            out = [[complex(mpmath.polyval(p[::-1], x) / d) for p in row] for row in self._mp_num]
        arr = np.array(out)
        return arr if isinstance(r, complex) else arr.real

    @functools.cached_property
    def _mp_den(self):
        return _mp_coeffs(self.den)

    @functools.cached_property
    def _mp_num(self):
        return [[_mp_coeffs(p) for p in row] for row in self.num]

    @functools.cached_property
    def den_float(self) -> list[float]:
        return [float(x) for x in self.den]

    @functools.cached_property
    def num_float(self) -> list[list[list[float]]]:
        return [[[float(x) for x in p] for p in row] for row in self.num]

    def degrees(self) -> tuple[int, int]:
        return max(P.degree(p) for row in self.num for p in row), P.degree(self.den)


@dataclass(frozen=True)
class RationalMatrixPF:
    """const + sum_l residues[l] / (r - poles[l])."""

    const: NDArray
    poles: NDArray
    residues: NDArray

    def __call__(self, r: complex) -> NDArray:
        out = self.const.astype(complex)
        for p, R in zip(self.poles, self.residues):
            out = out + R / (r - p)
        return out if np.iscomplexobj(self.poles) and np.any(self.poles.imag) else out.real


@dataclass(frozen=True)
class ScalarExpMixture:
    """Per-state sums coef[i, k] * exp(-rate[k] u); complex rates come in conjugate pairs."""

    coefs: NDArray
    rates: NDArray

    def __call__(self, i: int, u: float | NDArray) -> float | NDArray:
        u = np.asarray(u, float)
        val = np.tensordot(np.exp(-np.multiply.outer(u, self.rates)), self.coefs[i], axes=([-1], [0]))
        val = np.real(val)
        return float(val) if val.ndim == 0 else val

    @property
    def has_complex(self) -> bool:
        return bool(np.iscomplexobj(self.rates) and np.any(np.abs(self.rates.imag) > 0))

    def real_terms(self, i: int) -> list[tuple]:
        """Terms for state i as (a, b, rate, freq): exp(-rate u) (a cos(freq u) + b sin(freq u))."""
        out = []
        for coef, rate in zip(self.coefs[i], self.rates):
            rate = complex(rate)
            coef = complex(coef)
            if rate.imag < 0:
                continue
            if rate.imag == 0:
                out.append((coef.real, 0.0, rate.real, 0.0))
            else:
                # coef e^{-(a+ib)u} + conj
                out.append((2 * coef.real, 2 * coef.imag, rate.real, rate.imag))
        return out


# -- step 1 -----------------------------------------------------------------


def _dual_params(dual: DualSpec):
    """Converter from doubles to Fractions.

    Short rationals (0.25, 1/3 printed to 16 digits) are recovered as such so
    the golden integer D(r) comes out exactly; any other double is used as
    the exact binary rational it already is.
    """
    vals = [dual.Q.ravel().tolist(), dual.up_rate, dual.up_exp, dual.down_rate]
    for law in dual.down_law:
        if law is not None:
            vals.append([x for w, n, d in law.terms for x in (w, d)])
    flat = [float(x) for group in vals for x in group]
    short = all(rationalize(x) is not None for x in flat)
    conv = (lambda x: rationalize(float(x))) if short else (lambda x: Fraction(float(x)))
    return short, conv


def build_G_rational(dual: DualSpec) -> PolynomialMatrix:
    """G(r) = r K_dual(r)^-1 (C - rI)^-1 over a single reduced denominator.

    All polynomial algebra is exact, so common factors of numerators and
    denominator are removed by an exact gcd instead of a root-matching
    tolerance.
    """
    if not isinstance(dual, DualSpec):
        raise TypeError("build_G_rational expects the dual descriptor (see model.dual_spec)")
    short, F = _dual_params(dual)
    m = dual.m
    Q = [[F(dual.Q[k, j]) for j in range(m)] for k in range(m)]
    for k in range(m):
        # exact zero row sums keep the r = 0 root of det exact
        Q[k][k] = -sum((Q[k][j] for j in range(m) if j != k), F(0))
    rows: list[list[list]] = []
    e_polys: list[list] = []
    for k in range(m):
        c = F(dual.up_exp[k])
        lam_up = F(dual.up_rate[k])
        lam_down = F(dual.down_rate[k])
        law = dual.down_law[k]
        terms = []
        if dual.down_rate[k] > 0:
            terms = [(F(w), n, F(d)) for w, n, d in law.terms]
            # weights close to 1 exactly, as they do up to validation tolerance
            w_last = 1 - sum((w for w, _, _ in terms[:-1]), F(0))
            terms[-1] = (w_last, terms[-1][1], terms[-1][2])
        # d_k = (c - r) * prod over distinct down rates of (delta + r)^maxshape
        shapes: dict = {}
        for w, n, d in terms:
            shapes[d] = max(shapes.get(d, 0), n)
        e_k: list = [F(1)]
        for d, n in shapes.items():
            e_k = P.mul(e_k, P.power([d, F(1)], n))
        cm = [c, -F(1)]
        d_k = P.mul(cm, e_k)
        # diagonal: Q_kk + lam_up (c/(c-r) - 1) + lam_down (sum w (d/(d+r))^n - 1)
        diag = P.scale(d_k, Q[k][k] - lam_up - lam_down)
        diag = P.add(diag, P.scale(e_k, lam_up * c))
        for w, n, d in terms:
            part = P.mul(P.exact_div(e_k, P.power([d, F(1)], n)), cm)
            diag = P.add(diag, P.scale(part, lam_down * w * d**n))
        row = [P.scale(d_k, Q[k][j]) if j != k else diag for j in range(m)]
        rows.append(row)
        e_polys.append(e_k)

    den = P.det(rows)
    adj = P.adjugate(rows)
    rpoly = [F(0), F(1)]
    num = [[P.mul(P.mul(rpoly, adj[i][j]), e_polys[j]) for j in range(m)] for i in range(m)]

    if den[0] != 0:
        raise PipelineError("det K_dual(r) does not vanish at r=0; Q is not a generator?")
    g = den
    for row in num:
        for p in row:
            g = P.gcd(g, p)
    if P.degree(g) > 0:
        den = P.exact_div(den, g)
        num = [[P.exact_div(p, g) for p in row] for row in num]
    if short:
        den_int, f = P.primitive_integer(den)
        den = [Fraction(x) for x in den_int]
        num = [[P.scale(p, f) for p in row] for row in num]
    else:
        lead = den[-1]
        den = [x / lead for x in den]
        num = [[[x / lead for x in p] for p in row] for row in num]

    G = PolynomialMatrix(num, den, short)
    dn, dd = G.degrees()
    if dn > dd:
        raise ImproperRationalError(f"numerator degree {dn} exceeds denominator degree {dd}")
    return G


# -- step 2 -----------------------------------------------------------------


@dataclass(frozen=True)
class Poles:
    roots: NDArray  # complex, sorted by real part; real roots have imag == 0

    @property
    def real_roots(self) -> NDArray:
        return np.sort(self.roots[self.roots.imag == 0].real)

    @property
    def has_complex(self) -> bool:
        return bool(np.any(self.roots.imag != 0))

    @property
    def negative(self) -> NDArray:
        return self.roots[self.roots.real < 0]

    @property
    def positive(self) -> NDArray:
        return self.roots[self.roots.real > 0]


def _mp_coeffs(D):
    return [mpmath.mpf(x.numerator) / x.denominator if isinstance(x, Fraction) else mpmath.mpf(x) for x in D]


def find_poles(D: list) -> Poles:
    """Simple roots of D, polished to |D(root)| / max|coeff| < 1e-12.

    Rational coefficients get an exact multiplicity test (gcd with D');
    float coefficients are rejected when two roots nearly coincide.
    """
    D = P.trim(D)
    deg = P.degree(D)
    if deg < 1:
        raise PipelineError("find_poles needs a nonconstant polynomial")
    exact = all(isinstance(x, (int, Fraction)) for x in D)
    if exact and P.degree(P.gcd(D, P.deriv(D))) > 0:
        g = P.gcd(D, P.deriv(D))
        near = np.roots([float(x) for x in g[::-1]])
        raise MultiplicityError(f"D has repeated roots near {np.round(near, 6).tolist()}")
    with mpmath.workdps(60):
        # convert inside the context: rational coefficients must not be rounded to doubles
        coeffs = _mp_coeffs(D)
        cmax = max(abs(x) for x in coeffs)
        try:
            found = mpmath.polyroots(coeffs[::-1], maxsteps=400, extraprec=2 * deg * 60)
        except mpmath.libmp.NoConvergence as exc:
            raise PipelineError(f"root finding did not converge for degree {deg}") from exc
        polished = []
        for x in found:
            x = mpmath.mpc(x)
            resid = abs(mpmath.polyval(coeffs[::-1], x)) / cmax
            if resid > 1e-12:
                raise PipelineError(f"root polish failed at {complex(x):.6g} (residual {float(resid):.3g})")
            polished.append(complex(x))
    roots = np.array(polished, dtype=complex)
    for i in range(len(roots)):
        for j in range(i + 1, len(roots)):
            if not exact and abs(roots[i] - roots[j]) < 1e-7 * (1 + abs(roots[i])):
                raise MultiplicityError(f"repeated root of D near {roots[i]:.6g}")
    clean = []
    for z in roots:
        if abs(z.imag) <= 1e-12 * (1 + abs(z)):
            clean.append(complex(z.real, 0.0))
        elif z.imag > 0:
            clean.append(z)
            clean.append(z.conjugate())
    clean = np.array(sorted(clean, key=lambda z: (z.real, z.imag)), dtype=complex)
    if len(clean) != deg:
        raise PipelineError("complex roots of a real polynomial did not pair up")
    return Poles(clean)


# -- step 3 -----------------------------------------------------------------


def partial_fractions(G: PolynomialMatrix, poles: Poles | NDArray) -> RationalMatrixPF:
    """Entrywise residues num(p)/D'(p) plus the polynomial part's constant."""
    roots = poles.roots if isinstance(poles, Poles) else np.asarray(poles, complex)
    dn, dd = G.degrees()
    if dn > dd:
        raise ImproperRationalError(f"numerator degree {dn} exceeds denominator degree {dd}")
    m = G.m
    const = np.zeros((m, m))
    if dn == dd:
        lead = G.den_float[dd]
        const = np.array(
            [[(p[dd] if len(p) > dd else 0.0) / lead for p in row] for row in G.num_float]
        )
    # evaluate at 50 digits: high-degree numerators cancel heavily near the poles
    res = np.empty((len(roots), m, m), dtype=complex)
    with mpmath.workdps(50):
        dD = _mp_coeffs(P.deriv(G.den))[::-1]
        nums = [[_mp_coeffs(q)[::-1] for q in row] for row in G.num]
        for l, p in enumerate(roots):
            x = mpmath.mpc(p.real, p.imag)
            dp = mpmath.polyval(dD, x)
            res[l] = [[complex(mpmath.polyval(q, x) / dp) for q in row] for row in nums]
    if not np.any(roots.imag):
        return RationalMatrixPF(const, roots.real.copy(), res.real.copy())
    return RationalMatrixPF(const, roots, res)


def project_minus(pf: RationalMatrixPF, tol: float = 1e-12) -> RationalMatrixPF:
    """[G]^-: keep only the terms with poles in the open left half-plane."""
    poles = np.asarray(pf.poles)
    if np.any(np.abs(poles.real) <= tol):
        raise PipelineError("pole on the imaginary axis: projection undefined")
    keep = poles.real < 0
    return RationalMatrixPF(np.zeros_like(pf.const), poles[keep], pf.residues[keep])


def gminus_at_zero(gminus: RationalMatrixPF) -> NDArray:
    out = sum((R / (-p) for p, R in zip(gminus.poles, gminus.residues)), np.zeros_like(gminus.const, dtype=complex))
    return np.real_if_close(out, tol=1e8).real


# -- step 4, 5 --------------------------------------------------------------


def ladder_exit_matrix(model: ValidatedModel, gminus: RationalMatrixPF) -> NDArray:
    """R+ = (G^-(0) + (Lam - Q)^-1)^-1 e pi."""
    P0 = np.outer(np.ones(model.m), model.pi)
    A = gminus_at_zero(gminus) + p0_limit(model)
    return solve_checked(A, P0, what="G^-(0) + (Lam - Q)^-1")


@dataclass(frozen=True)
class RuinFactorization:
    dual: DualSpec
    G: PolynomialMatrix
    poles: Poles
    pf: RationalMatrixPF
    gminus: RationalMatrixPF
    R_plus: NDArray
    A: NDArray  # (m, L) residue weights A_i^k
    rho: NDArray  # (L,) decay rates, Re > 0
    psi: ScalarExpMixture
    atoms: NDArray  # P_i{ inf(-xi) = 0 } = 1 - psi_i(0)


@functools.lru_cache(maxsize=64)
def factorize(model: ValidatedModel) -> RuinFactorization:
    model.require_no_switching("the ruin factorization")
    if model.drift >= 0:
        raise DriftError(f"ruin pipeline needs negative drift, got m1 = {model.drift:.6g}")
    dual = dual_spec(model)
    G = build_G_rational(dual)
    poles = find_poles(G.den)
    pf = partial_fractions(G, poles)
    gm = project_minus(pf)
    Rp = ladder_exit_matrix(model, gm)
    e = np.ones(model.m)
    A = np.stack([R @ Rp @ e for R in gm.residues], axis=1) if len(gm.poles) else np.zeros((model.m, 0))
    rho = -np.asarray(gm.poles)
    coefs = A / rho
    if not np.iscomplexobj(rho) or not np.any(rho.imag):
        rho = np.real(rho)
        coefs = np.real(coefs)
    psi = ScalarExpMixture(coefs, rho)
    atoms = np.array([1.0 - psi(i, 0.0) for i in range(model.m)])
    if np.any(atoms < -1e-6) or np.any(atoms > 1 + 1e-6):
        raise ConsistencyError(f"infimum atoms {atoms} outside [0, 1]")
    return RuinFactorization(dual, G, poles, pf, gm, Rp, A, rho, psi, atoms)


@dataclass(frozen=True)
class InfimumLaw:
    """Law of the all-time infimum of -xi, per initial state.

    ``cdf(i, x)`` = P_i{inf < x} for x < 0; ``atom[i]`` = P_i{inf = 0}.
    """

    A: NDArray
    rho: NDArray
    atom: NDArray
    mixture: ScalarExpMixture

    def cdf(self, i: int, x: float | NDArray) -> float | NDArray:
        x = np.asarray(x, float)
        if np.any(x > 0):
            raise ValueError("infimum CDF is defined for x <= 0")
        return self.mixture(i, -x)


def infimum_distribution(model: ValidatedModel) -> InfimumLaw:
    f = factorize(model)
    return InfimumLaw(f.A, f.rho, f.atoms, f.psi)


def ruin_probability(model: ValidatedModel, i: int, u: float | NDArray) -> float | NDArray:
    """psi_i(u) = P_i{sup xi > u}."""
    if np.any(np.asarray(u) < 0):
        raise ValueError("ruin probability needs u >= 0")
    return factorize(model).psi(i, u)


def ruin_function(model: ValidatedModel) -> ScalarExpMixture:
    return factorize(model).psi

"""Level-zero overshoot laws, the ladder-height measure and the renewal series.

Every quantity here is an s -> 0 limit:

* ``(Lam - Q)^-1`` replaces s^-1 P{xi(theta_s) = 0},
* ``R_c0`` and ``q0`` replace the exponent and the right factor in the
  matrix-exponential law of xi - sup xi at theta_s.

``R_c0`` and ``q0`` come from the descending ladder of the time-reversed
model: ``B[k, j]`` is the probability that, started at level 0 in state k,
the reversed process first goes below 0 through a downward jump made in
state j.  With D = diag(pi)::

    q0   = D^-1 B^T D
    R_c0 = (I - q0) C

Under negative drift B is stochastic, so R_c0 has a simple eigenvalue 0;
the other eigenvalues lie in the open right half-plane.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy.signal import fftconvolve

from .errors import ConsistencyError, DriftError, PipelineError, SingularityError
from .model import ValidatedModel, reverse_chain
from .transforms import p0_limit, solve_checked

Kind = Literal["gamma_plus", "gamma_under", "gamma_total"]
KINDS: tuple[Kind, ...] = ("gamma_plus", "gamma_under", "gamma_total")

_RATE_TOL = 1e-9


@dataclass
class MatrixExpMixture:
    """value(z) = sum over terms of exp(-rate z) * sum_j coefs[j] z**j.

    ``terms`` maps a (possibly complex) rate to an array of shape
    (degree + 1, m, m).  Evaluation returns the real part.
    """

    m: int
    terms: list[tuple[complex, NDArray]] = field(default_factory=list)

    # let ndarray @ mixture dispatch to __rmatmul__
    __array_ufunc__ = None

    @classmethod
    def constant(cls, M: NDArray) -> "MatrixExpMixture":
        M = np.asarray(M, complex)
        return cls(M.shape[0], [(0j, M[None].copy())])

    def copy(self) -> "MatrixExpMixture":
        return MatrixExpMixture(self.m, [(r, c.copy()) for r, c in self.terms])

    def add_term(self, rate: complex, power: int, M: NDArray) -> None:
        coefs = np.zeros((power + 1, self.m, self.m), complex)
        coefs[power] = M
        self.terms.append((complex(rate), coefs))

    def __add__(self, other: "MatrixExpMixture") -> "MatrixExpMixture":
        return MatrixExpMixture(self.m, self.copy().terms + other.copy().terms).simplify()

    def __rmatmul__(self, A: NDArray) -> "MatrixExpMixture":
        return MatrixExpMixture(self.m, [(r, np.einsum("ij,pjk->pik", A, c)) for r, c in self.terms])

    def __matmul__(self, other):
        if isinstance(other, MatrixExpMixture):
            out = []
            for r1, c1 in self.terms:
                for r2, c2 in other.terms:
                    deg = c1.shape[0] + c2.shape[0] - 2
                    coefs = np.zeros((deg + 1, self.m, self.m), complex)
                    for a in range(c1.shape[0]):
                        for b in range(c2.shape[0]):
                            coefs[a + b] += c1[a] @ c2[b]
                    out.append((r1 + r2, coefs))
            return MatrixExpMixture(self.m, out).simplify()
        return MatrixExpMixture(self.m, [(r, np.einsum("pij,jk->pik", c, other)) for r, c in self.terms])

    def scale(self, a: float) -> "MatrixExpMixture":
        return MatrixExpMixture(self.m, [(r, a * c) for r, c in self.terms])

    def simplify(self, tol: float = _RATE_TOL) -> "MatrixExpMixture":
        """Merge terms whose rates agree within ``tol``; drop zero coefficients."""
        merged: list[tuple[complex, NDArray]] = []
        for r, c in self.terms:
            for idx, (r0, c0) in enumerate(merged):
                if abs(r - r0) <= tol * (1 + abs(r0)):
                    deg = max(c.shape[0], c0.shape[0])
                    acc = np.zeros((deg, self.m, self.m), complex)
                    acc[: c0.shape[0]] += c0
                    acc[: c.shape[0]] += c
                    merged[idx] = (r0, acc)
                    break
            else:
                merged.append((r, c.copy()))
        out = []
        for r, c in merged:
            while c.shape[0] > 1 and np.all(np.abs(c[-1]) < 1e-300):
                c = c[:-1]
            if np.any(np.abs(c) > 1e-300):
                out.append((r, c))
        out.sort(key=lambda t: (t[0].real, t[0].imag))
        return MatrixExpMixture(self.m, out)

    def __call__(self, z: float) -> NDArray:
        acc = np.zeros((self.m, self.m), complex)
        for r, c in self.terms:
            poly = np.zeros((self.m, self.m), complex)
            for j in range(c.shape[0] - 1, -1, -1):
                poly = poly * z + c[j]
            acc += np.exp(-r * z) * poly
        return acc.real

    def evaluate(self, zs: NDArray) -> NDArray:
        return np.array([self(float(z)) for z in np.ravel(zs)])

    def derivative(self) -> "MatrixExpMixture":
        out = []
        for r, c in self.terms:
            deg = c.shape[0]
            d = np.zeros_like(c)
            d[: deg] = -r * c
            for j in range(1, deg):
                d[j - 1] += j * c[j]
            out.append((r, d))
        return MatrixExpMixture(self.m, out).simplify()

    def integral_from(self, z: float = 0.0) -> NDArray:
        """int_z^inf value(y) dy (requires Re rate > 0 on every term)."""
        acc = np.zeros((self.m, self.m), complex)
        for r, c in self.terms:
            if r.real <= 0:
                raise PipelineError("tail integral of a non-decaying term")
            # int_z^inf y^j e^{-r y} dy = e^{-r z} sum_{i<=j} j!/i! z^i / r^{j-i+1}
            for j in range(c.shape[0]):
                s = sum(math.factorial(j) / math.factorial(i) * z**i / r ** (j - i + 1) for i in range(j + 1))
                acc += c[j] * np.exp(-r * z) * s
        return acc.real

    def describe(self, i: int, j: int, digits: int = 4) -> str:
        """Human-readable form of entry (i, j), e.g. 'e^{-2z}(0.48 + 0.86z)'."""
        parts = []
        for r, c in self.terms:
            coefs = c[:, i, j]
            if np.all(np.abs(coefs) < 10 ** (-digits - 2)):
                continue
            poly = " + ".join(
                f"{complex(a).real:.{digits}g}" + (f"z^{k}" if k > 1 else "z" if k == 1 else "")
                for k, a in enumerate(coefs)
            )
            rate = f"{r.real:.{digits}g}" if r.imag == 0 else f"({r.real:.{digits}g}{r.imag:+.{digits}g}i)"
            parts.append(f"e^{{-{rate}z}}({poly})")
        return " + ".join(parts) or "0"


# -- xi-bar limit -----------------------------------------------------------


def _erlang_mgf_matrix(law, U: NDArray) -> NDArray:
    """E exp(U X) for X ~ law, U with spectrum in the closed left half-plane."""
    m = U.shape[0]
    out = np.zeros((m, m))
    for w, n, d in law.terms:
        X = d * np.linalg.inv(d * np.eye(m) - U)
        out += w * np.linalg.matrix_power(X, n)
    return out


def descending_ladder(model: ValidatedModel, s: float = 0.0, tol: float = 1e-14, max_iter: int = 200_000) -> NDArray:
    """B[k, j] = P_k{xi first goes below 0 before theta_s, by a jump made in state j}.

    Minimal nonnegative solution of::

        (sI + Lam - Q) B = Lam_neg + sum_k e_k lam_pos_k e_k^T B E[exp(C (B - I) X_k)]

    obtained by monotone fixed-point iteration from B = 0.
    """
    model.require_no_switching("descending_ladder")
    m = model.m
    A = solve_checked(s * np.eye(m) + model.Lam - model.Q, what="sI + Lam - Q")
    C = model.C
    B = np.zeros((m, m))
    rhs0 = np.diag(model.lam_neg)
    for it in range(max_iter):
        U = C @ (B - np.eye(m))
        rhs = rhs0.copy()
        for k, law in enumerate(model.laws):
            if law.pos_rate > 0:
                rhs[k] += law.pos_rate * (B[k] @ _erlang_mgf_matrix(law.pos_law, U))
        Bn = A @ rhs
        if np.abs(Bn - B).max() < tol:
            return Bn
        B = Bn
    raise PipelineError(f"descending ladder iteration did not converge in {max_iter} steps")


@dataclass(frozen=True)
class XiBarLimit:
    """s -> 0 limits of the matrices describing xi - sup xi.

    ``p_minus0`` is the limit of P_s^-1 P{xi - sup xi = 0}, ``q0`` = I - p_minus0,
    ``R_c0`` = p_minus0 C.
    """

    p_minus0: NDArray
    q0: NDArray
    R_c0: NDArray
    ladder: NDArray
    eigenvalues: NDArray


@functools.lru_cache(maxsize=64)
def xi_bar_limit(model: ValidatedModel) -> XiBarLimit:
    model.require_no_switching("xi_bar_limit")
    if model.drift >= 0:
        raise DriftError(f"xi_bar_limit needs negative drift, got m1 = {model.drift:.6g}")
    rev = reverse_chain(model)
    B = descending_ladder(rev)
    if np.abs(B.sum(axis=1) - 1).max() > 1e-8:
        raise ConsistencyError(f"reversed descending ladder is not stochastic: row sums {B.sum(axis=1)}")
    pi = model.pi
    q0 = (B.T * pi[None, :]) / pi[:, None]
    pm = np.eye(model.m) - q0
    R = pm @ model.C
    ev = np.linalg.eigvals(R)
    if np.any(ev.real < -1e-9):
        raise ConsistencyError(f"R_c0 has eigenvalues in the left half-plane: {ev}")
    return XiBarLimit(pm, q0, R, B, ev)


# -- building blocks ----------------------------------------------------------


def _kbar(model: ValidatedModel) -> MatrixExpMixture:
    """Tail of the upward jump measure, Kbar0(y) = diag(lam_pos_k P{J_k > y})."""
    m = model.m
    out = MatrixExpMixture(m)
    for k, law in enumerate(model.laws):
        if law.pos_rate <= 0:
            continue
        for w, n, d in law.pos_law.terms:
            for i in range(n):
                E = np.zeros((m, m))
                E[k, k] = law.pos_rate * w * d**i / math.factorial(i)
                out.add_term(d, i, E)
    return out.simplify()


def _spectral_projectors(R: NDArray) -> tuple[NDArray, list[NDArray]]:
    ev, V = np.linalg.eig(R)
    if np.linalg.cond(V) > 1e10:
        raise SingularityError("R_c0 is not diagonalizable; spectral expansion unavailable")
    W = np.linalg.inv(V)
    projs = [np.outer(V[:, l], W[l]) for l in range(len(ev))]
    ev = np.where(np.abs(ev) < 1e-10, 0.0, ev)
    return ev, projs


def _exp_minus_R(R: NDArray) -> MatrixExpMixture:
    """z -> exp(-z R) as a mixture."""
    ev, projs = _spectral_projectors(R)
    out = MatrixExpMixture(R.shape[0])
    for lam, Pl in zip(ev, projs):
        out.add_term(lam, 0, Pl)
    return out.simplify()


def _int_exp_minus_R(R: NDArray) -> MatrixExpMixture:
    """z -> int_0^z exp(-x R) dx."""
    ev, projs = _spectral_projectors(R)
    out = MatrixExpMixture(R.shape[0])
    for lam, Pl in zip(ev, projs):
        if lam == 0:
            out.add_term(0.0, 1, Pl)
        else:
            out.add_term(0.0, 0, Pl / lam)
            out.add_term(lam, 0, -Pl / lam)
    return out.simplify()


def _shifted_tail_integral(R: NDArray, M: NDArray, kbar: MatrixExpMixture) -> MatrixExpMixture:
    """z -> int_0^inf exp(-t R) M Kbar0(z + t) dt in closed form.

    Uses int_0^inf exp(-t (R + d I)) t^j dt = j! (R + d I)^-(j+1).
    """
    m = R.shape[0]
    out = MatrixExpMixture(m)
    for d, coefs in kbar.terms:
        inv = solve_checked(R + d.real * np.eye(m), what=f"R_c0 + {d.real}I")
        powers = [np.eye(m)]
        for i in range(coefs.shape[0]):
            # (z + t)^i = sum_j C(i, j) z^(i-j) t^j
            for j in range(i + 1):
                while len(powers) <= j + 1:
                    powers.append(powers[-1] @ inv)
                term = math.comb(i, j) * math.factorial(j) * powers[j + 1] @ M @ coefs[i]
                out.add_term(d, i - j, term)
    return out.simplify()


# -- public operations --------------------------------------------------------


@functools.lru_cache(maxsize=64)
def overshoot_tail_mixture(model: ValidatedModel, kind: Kind) -> MatrixExpMixture:
    """z -> P{gamma_kind(0) > z, tau+(0) < inf} as a MatrixExpMixture."""
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    xb = xi_bar_limit(model)
    A = p0_limit(model)
    C = model.C
    R, M = xb.R_c0, xb.q0
    kbar = _kbar(model)
    I1 = _shifted_tail_integral(R, M, kbar)
    if kind == "gamma_plus":
        inner = kbar + (C @ I1)
    elif kind == "gamma_under":
        inner = C @ (_exp_minus_R(R) @ I1)
    else:
        J = _int_exp_minus_R(R)
        inner = kbar + (C @ ((J @ M) @ kbar + _exp_minus_R(R) @ I1))
    return (A @ inner).simplify()


def overshoot_tail_zero(model: ValidatedModel, kind: Kind, z: float) -> NDArray:
    """P{gamma_kind(0) > z, tau+(0) < inf}, entry (i, j) for start i and x(tau) = j."""
    if z < 0:
        raise ValueError("z must be >= 0")
    return overshoot_tail_mixture(model, kind)(z)


@dataclass(frozen=True)
class LadderMeasure:
    """Ladder-height measure G+(dy) = P{gamma+(0) in dy, tau+(0) < inf; x(tau)}."""

    density: MatrixExpMixture
    tail: MatrixExpMixture
    total: NDArray

    def cdf(self, u: float) -> NDArray:
        return self.total - self.tail(u) if u > 0 else np.zeros_like(self.total)

    def tabulate(self, step: float, n: int) -> tuple[NDArray, NDArray]:
        """Grid u_k = k * step, k = 0..n, and G+(u_k) of shape (n + 1, m, m)."""
        us = step * np.arange(n + 1)
        return us, np.array([self.cdf(u) for u in us])


@functools.lru_cache(maxsize=64)
def ladder_measure(model: ValidatedModel) -> LadderMeasure:
    tail = overshoot_tail_mixture(model, "gamma_plus")
    density = tail.derivative().scale(-1.0)
    total = tail(0.0)
    if np.any(total < -1e-12):
        raise ConsistencyError(f"negative ladder mass {total}")
    return LadderMeasure(density, tail, total)


def pk_series(
    model: ValidatedModel,
    i: int,
    u: float,
    tol: float = 1e-6,
    n_grid: int = 2048,
    step: float | None = None,
) -> float:
    """psi_i(u) from the renewal series sum_n G+^{*n}(u) (I - ||G||) e.

    Convolutions use the closed-form ladder density on a uniform grid with
    trapezoid weights; the series stops once the neglected mass bound
    ||G||_inf^(N+1) / (1 - ||G||_inf) drops below ``tol``.
    """
    if u < 0:
        raise ValueError("u must be >= 0")
    lm = ladder_measure(model)
    G = lm.total
    norm = np.abs(G).sum(axis=1).max()
    if max(abs(np.linalg.eigvals(G))) >= 1 or norm >= 1:
        raise DriftError("ladder mass has spectral radius >= 1; the renewal series diverges")
    v = (np.eye(model.m) - G) @ np.ones(model.m)
    if u == 0:
        return float(1.0 - v[i])
    if step is None:
        step = u / n_grid
    n = int(round(u / step))
    ys = step * np.arange(n + 1)
    g = lm.density.evaluate(ys)  # (n+1, m, m)
    # w_0(y) = v for all y; w_k(y) = int_0^y g(t) w_{k-1}(y - t) dt
    w = np.tile(v, (n + 1, 1))
    total = w.copy()
    mass = 1.0
    k = 0
    while mass * norm / (1 - norm) >= tol:
        k += 1
        mass *= norm
        new = np.zeros_like(w)
        for a in range(model.m):
            for b in range(model.m):
                conv = fftconvolve(g[:, a, b], w[:, b])[: n + 1]
                conv -= 0.5 * (g[0, a, b] * w[:, b] + g[:, a, b] * w[0, b])
                new[:, a] += step * conv
        new[0] = 0.0
        w = new
        total += w
        if k > 100_000:
            raise PipelineError("renewal series did not converge")
    return float(1.0 - total[n, i])

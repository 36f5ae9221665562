"""Perron root of K(r), the Lundberg exponent and two-sided exponential bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, NoRootError, SpectralError
from .model import ValidatedModel
from .transforms import cumulant_derivative, cumulant_domain, cumulant_matrix


@dataclass(frozen=True)
class LundbergCertificate:
    gamma: float
    nu: NDArray[np.float64]
    h: NDArray[np.float64]
    c_minus: float
    c_plus: float

    def bounds(self, i: int, u: float) -> tuple[float, float]:
        return lundberg_bounds(self, i, u)


def perron_root(model: ValidatedModel, r: float) -> float:
    """Eigenvalue of K(r) with maximal real part (real by Perron-Frobenius)."""
    ev = np.linalg.eigvals(cumulant_matrix(model, r))
    return float(ev[np.argmax(ev.real)].real)


def _perron_pair(K: NDArray) -> tuple[float, NDArray, NDArray]:
    w, vl, vr = _eig_lr(K)
    idx = int(np.argmax(w.real))
    lam = w[idx]
    h = np.real_if_close(vr[:, idx], tol=1e6)
    nu = np.real_if_close(vl[:, idx], tol=1e6)
    if np.iscomplexobj(h) or np.iscomplexobj(nu):
        raise SpectralError("Perron eigenvector is not real")
    return float(lam.real), np.asarray(h, float), np.asarray(nu, float)


def _eig_lr(K: NDArray):
    from scipy.linalg import eig

    w, vl, vr = eig(K, left=True, right=True)
    return w, vl, vr


def perron_derivative(model: ValidatedModel, r: float) -> float:
    """k'(r) = nu K'(r) h / (nu h)."""
    lam, h, nu = _perron_pair(cumulant_matrix(model, r))
    return float(nu @ cumulant_derivative(model, r) @ h / (nu @ h))


def lundberg_exponent(model: ValidatedModel) -> float:
    """The root gamma > 0 of k(r) = 0, for negative drift."""
    model.require_no_switching("lundberg_exponent")
    if model.drift >= 0:
        raise NoRootError(f"k(r) > 0 for all r > 0 when the drift m1 = {model.drift:.6g} is not negative")
    r_hi = cumulant_domain(model).r_hi
    # walk toward r_hi until k turns positive; k is convex with k(0)=0, k'(0)<0
    hi = None
    if math.isfinite(r_hi):
        for j in range(1, 60):
            r = r_hi * (1.0 - 2.0**-j)
            if perron_root(model, r) > 0:
                hi = r
                break
    else:
        r = 1.0
        for _ in range(200):
            if perron_root(model, r) > 0:
                hi = r
                break
            r *= 2.0
    if hi is None:
        raise NoRootError("k(r) has no sign change on (0, r_hi); the Cramer condition fails")
    # bracket the root away from the trivial zero at r=0
    lo = hi
    while perron_root(model, lo) > 0:
        lo *= 0.5
        if lo < 1e-300:
            raise NoRootError("could not bracket the Lundberg exponent")
    g = brentq(lambda x: perron_root(model, x), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    for _ in range(5):
        val = perron_root(model, g)
        if abs(val) < 1e-14:
            break
        g -= val / perron_derivative(model, g)
    if abs(perron_root(model, g)) > 1e-12:
        raise NoRootError(f"Newton polish failed: k(gamma)={perron_root(model, g):.3g}")
    return float(g)


def lundberg_vectors(model: ValidatedModel, gamma: float) -> tuple[NDArray, NDArray]:
    """Positive left/right null vectors (nu, h) of K(gamma) with max(h) = 1 and nu h = 1."""
    K = cumulant_matrix(model, gamma)
    lam, h, nu = _perron_pair(K)
    if abs(lam) > 1e-10:
        raise SpectralError(f"gamma={gamma} is not a zero of the Perron root (k={lam:.3g})")
    if model.m > 1:
        ev = np.sort(np.linalg.eigvals(K).real)
        if ev[-1] - ev[-2] < 1e-10:
            raise SpectralError("Perron root of K(gamma) is not simple")
    h = h / h[np.argmax(np.abs(h))]
    nu = nu * np.sign(nu[np.argmax(np.abs(nu))])
    if np.any(h <= 0) or np.any(nu <= 0):
        raise SpectralError("Perron eigenvectors are not strictly positive")
    h = h / h.max()
    nu = nu / (nu @ h)
    return nu, h


def _ratio_fn(law, gamma: float):
    """x -> P{J > x} / int_x^inf exp(gamma (y-x)) F(dy) for the positive jump law.

    The common factor exp(-min_rate x) is divided out of both sides.
    """
    dmin = law.min_rate

    def ratio(x):
        x = np.asarray(x, float)
        num = np.zeros_like(x)
        den = np.zeros_like(x)
        for w, n, d in law.terms:
            e = np.exp(-(d - dmin) * x)
            acc = np.zeros_like(x)
            term = np.ones_like(x)
            for i in range(n):
                if i:
                    term = term * d * x / i
                acc += term
            num += w * e * acc
            a = d - gamma
            acc2 = np.zeros_like(x)
            for j in range(n):
                acc2 += math.comb(n - 1, j) * x ** (n - 1 - j) * math.factorial(j) / a ** (j + 1)
            den += w * e * d**n / math.factorial(n - 1) * acc2
        return num / den

    return ratio


def _ratio_extremes(law, gamma: float) -> tuple[float, float]:
    """inf and sup over x >= 0 of the jump-tail ratio."""
    ratio = _ratio_fn(law, gamma)
    dmin = law.min_rate
    step = 0.01 / dmin
    xs = np.arange(0.0, 60.0 / dmin + step, step)
    vals = ratio(xs)
    # x -> inf limit: dominated by the slowest-decaying term
    limit = 1.0 - gamma / dmin
    out = []
    for sign in (1.0, -1.0):
        idx = int(np.argmin(sign * vals))
        best = sign * vals[idx]
        lo, hi = xs[max(idx - 1, 0)], xs[min(idx + 1, len(xs) - 1)]
        if hi > lo:
            res = minimize_scalar(
                lambda x: sign * float(ratio(np.array([x]))[0]),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-12},
            )
            best = min(best, res.fun)
        best = min(best, sign * limit)
        out.append(sign * best)
    return out[0], out[1]


def lundberg_constants(model: ValidatedModel, gamma: float, h: NDArray) -> tuple[float, float]:
    """(C_-, C_+) from the state jump laws; states without upward jumps are skipped."""
    lows, highs = [], []
    for j, law in enumerate(model.laws):
        if law.pos_rate <= 0:
            continue
        if gamma >= law.pos_law.min_rate:
            raise DomainError(
                f"gamma={gamma} >= jump rate {law.pos_law.min_rate} in state {j}; tilted tail diverges"
            )
        lo, hi = _ratio_extremes(law.pos_law, gamma)
        lows.append(lo / h[j])
        highs.append(hi / h[j])
    if not lows:
        raise NoRootError("no state has upward jumps")
    return float(min(lows)), float(max(highs))


def lundberg_certificate(model: ValidatedModel) -> LundbergCertificate:
    gamma = lundberg_exponent(model)
    nu, h = lundberg_vectors(model, gamma)
    cm, cp = lundberg_constants(model, gamma, h)
    return LundbergCertificate(gamma, nu, h, cm, cp)


def lundberg_bounds(cert: LundbergCertificate, i: int, u: float) -> tuple[float, float]:
    """(C_- h_i exp(-gamma u), C_+ h_i exp(-gamma u))."""
    decay = math.exp(-cert.gamma * u)
    return cert.c_minus * cert.h[i] * decay, cert.c_plus * cert.h[i] * decay

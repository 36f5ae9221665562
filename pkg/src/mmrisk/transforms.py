"""Matrix cumulant K(r) = Psi(-i r), killed resolvent and first-jump transforms.

All arguments are real; ``r`` plays the role of ``-i alpha``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError, SingularityError
from .model import DualSpec, ValidatedModel

COND_WARN = 1e12


def solve_checked(A: NDArray, B: NDArray | None = None, what: str = "matrix") -> NDArray:
    """LU solve of A X = B (inverse when B is None) with conditioning checks."""
    A = np.asarray(A)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e15:
        raise SingularityError(f"{what} is singular (condition number {cond:.3g})")
    if cond > COND_WARN:
        warnings.warn(f"{what} is ill-conditioned (condition number {cond:.3g})", stacklevel=2)
    if B is None:
        B = np.eye(A.shape[0], dtype=A.dtype)
    return np.linalg.solve(A, B)


@dataclass(frozen=True)
class CumulantDomain:
    """Open interval (r_lo, r_hi) on which K(r) is finite."""

    r_lo: float
    r_hi: float

    def __contains__(self, r: float) -> bool:
        return self.r_lo < r < self.r_hi


def cumulant_domain(model: ValidatedModel | DualSpec) -> CumulantDomain:
    if isinstance(model, DualSpec):
        # K_dual(r) = K(-r): mirror the primal interval
        up = [c for lam, c in zip(model.up_rate, model.up_exp) if lam > 0]
        down = [law.min_rate for lam, law in zip(model.down_rate, model.down_law) if lam > 0]
        return CumulantDomain(-min(down, default=math.inf), min(up, default=math.inf))
    lo = [law.c for law in model.laws if law.neg_rate > 0]
    hi = [law.pos_law.min_rate for law in model.laws if law.pos_rate > 0]
    if model.has_switching:
        hi += [law.min_rate for row in model.spec.switching for law in row if law is not None]
    return CumulantDomain(-min(lo, default=math.inf), min(hi, default=math.inf))


def _check_domain(model, r: float) -> None:
    dom = cumulant_domain(model)
    if r not in dom:
        raise DomainError(f"r={r!r} outside cumulant domain ({dom.r_lo}, {dom.r_hi})")


def cumulant_matrix(model: ValidatedModel | DualSpec, r: float) -> NDArray[np.float64]:
    """K(r) for the model (or its dual descriptor, where K_dual(r) = K(-r))."""
    _check_domain(model, r)
    if isinstance(model, DualSpec):
        diag = [
            lu * (cu / (cu - r) - 1.0) + (ld * (law.mgf(-r) - 1.0) if ld > 0 else 0.0)
            for lu, cu, ld, law in zip(model.up_rate, model.up_exp, model.down_rate, model.down_law)
        ]
        return model.Q + np.diag(diag)
    diag = np.array(
        [
            law.neg_rate * (law.c / (law.c + r) - 1.0)
            + (law.pos_rate * (law.pos_law.mgf(r) - 1.0) if law.pos_rate > 0 else 0.0)
            for law in model.laws
        ]
    )
    K = model.Q + np.diag(diag)
    if model.has_switching:
        # N dF(x) part: nu_k p_kj (E exp(r chi_kj) - 1)
        for k, row in enumerate(model.spec.switching):
            for j, law in enumerate(row):
                if law is not None and j != k:
                    K[k, j] += model.nu[k] * model.P[k, j] * (law.mgf(r) - 1.0)
    return K


def cumulant_derivative(model: ValidatedModel, r: float) -> NDArray[np.float64]:
    """dK/dr."""
    _check_domain(model, r)
    diag = np.array(
        [
            -law.neg_rate * law.c / (law.c + r) ** 2
            + (law.pos_rate * law.pos_law.mgf_prime(r) if law.pos_rate > 0 else 0.0)
            for law in model.laws
        ]
    )
    D = np.diag(diag)
    if model.has_switching:
        for k, row in enumerate(model.spec.switching):
            for j, law in enumerate(row):
                if law is not None and j != k:
                    D[k, j] += model.nu[k] * model.P[k, j] * law.mgf_prime(r)
    return D


def resolvent(model: ValidatedModel, s: float, r: float) -> NDArray[np.float64]:
    """s (sI - K(r))^-1, the matrix transform of xi at an independent Exp(s) time."""
    if s <= 0:
        raise DomainError(f"s must be > 0, got {s}")
    K = cumulant_matrix(model, r)
    m = K.shape[0]
    try:
        return s * solve_checked(s * np.eye(m) - K, what=f"sI - K(r) at s={s}, r={r}")
    except SingularityError as exc:
        raise SingularityError(f"resolvent singular at s={s}, r={r}: {exc}") from exc


def first_jump_transform(model: ValidatedModel, s: float) -> NDArray[np.float64]:
    """E[exp(-s zeta*); x(zeta*)] = (sI + Lam - Q)^-1 Lam for the first level jump."""
    model.require_no_switching("first_jump_transform")
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    m = model.m
    return solve_checked(s * np.eye(m) + model.Lam - model.Q, model.Lam, what="sI + Lam - Q")


def p0_limit(model: ValidatedModel) -> NDArray[np.float64]:
    """lim s^-1 P{xi(theta_s) = 0} as s -> 0, i.e. (Lam - Q)^-1."""
    model.require_no_switching("p0_limit")
    return solve_checked(model.Lam - model.Q, what="Lam - Q")

"""Process specification, validation and the dual / time-reversed transforms.

A model is a finite irreducible Markov chain with generator ``Q`` and, in each
state ``k``, two independent compound Poisson streams:

* upward jumps at rate ``pos_rate`` with an Erlang-mixture size law,
* downward jumps at rate ``neg_rate`` with exponential size of rate ``c``.

Optionally the level can also jump by a nonnegative amount when the chain
switches state (``switching``).  States are indexed from 0 in the API.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.sparse.csgraph import connected_components

from .errors import ModelError, SchemaError, UnsupportedError

__all__ = [
    "ErlangMixture",
    "StateJumpLaw",
    "MarkovChainSpec",
    "ProcessSpec",
    "ValidatedModel",
    "DualSpec",
    "validate_spec",
    "drift_m1",
    "dual_spec",
    "reverse_chain",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "rationalize",
    "example_model",
    "make_model",
]


def rationalize(x: float, max_den: int = 10**6) -> Fraction | None:
    """Simplest fraction that rounds to the double ``x``, or None."""
    fr = Fraction(x).limit_denominator(max_den)
    return fr if float(fr) == float(x) else None


@dataclass(frozen=True)
class ErlangMixture:
    """Finite mixture of Erlang laws on (0, inf).

    ``terms`` is a sequence of ``(weight, shape, rate)``; the density is
    ``sum w * rate**n * x**(n-1) * exp(-rate*x) / (n-1)!``.
    """

    terms: tuple[tuple[float, int, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "terms", tuple((float(w), int(n), float(d)) for w, n, d in self.terms)
        )

    @classmethod
    def exponential(cls, rate: float) -> "ErlangMixture":
        return cls(((1.0, 1, rate),))

    @classmethod
    def erlang(cls, shape: int, rate: float) -> "ErlangMixture":
        return cls(((1.0, shape, rate),))

    def check(self, path: str = "law") -> None:
        if not self.terms:
            raise SchemaError(path, "mixture needs at least one term")
        for j, (w, n, d) in enumerate(self.terms):
            for name, val in (("w", w), ("delta", d)):
                if not math.isfinite(val):
                    raise SchemaError(f"{path}[{j}].{name}", "must be finite")
            if not 0.0 < w <= 1.0:
                raise SchemaError(f"{path}[{j}].w", f"weight {w} not in (0, 1]")
            if n < 1:
                raise SchemaError(f"{path}[{j}].n", f"shape {n} must be an integer >= 1")
            if d <= 0.0:
                raise SchemaError(f"{path}[{j}].delta", f"rate {d} must be > 0")
        total = sum(w for w, _, _ in self.terms)
        if abs(total - 1.0) > 1e-12:
            raise SchemaError(path, f"weights sum to {total!r}, expected 1")

    @property
    def min_rate(self) -> float:
        return min(d for _, _, d in self.terms)

    def mean(self) -> float:
        return sum(w * n / d for w, n, d in self.terms)

    def mgf(self, r: float | complex) -> float | complex:
        """E exp(r X), finite for Re r < min_rate."""
        return sum(w * (d / (d - r)) ** n for w, n, d in self.terms)

    def mgf_prime(self, r: float) -> float:
        return sum(w * n * (d / (d - r)) ** n / (d - r) for w, n, d in self.terms)

    def pdf(self, x: NDArray | float) -> NDArray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        for w, n, d in self.terms:
            xp = x[pos]
            out[pos] += w * np.exp(n * np.log(d) + (n - 1) * np.log(xp) - d * xp - math.lgamma(n))
        return out

    def sf(self, x: NDArray | float) -> NDArray:
        """P{X > x}; equals 1 for x <= 0."""
        x = np.asarray(x, dtype=float)
        xc = np.maximum(x, 0.0)
        out = np.zeros_like(xc)
        for w, n, d in self.terms:
            acc = np.zeros_like(xc)
            term = np.ones_like(xc)
            for i in range(n):
                if i:
                    term = term * (d * xc) / i
                acc += term
            out += w * np.exp(-d * xc) * acc
        return np.where(x <= 0, 1.0, out)

    def tilted_tail(self, x: NDArray | float, gamma: float) -> NDArray:
        """Integral of exp(gamma*(y - x)) over the law restricted to (x, inf), x >= 0.

        Closed form per Erlang(n, d) term::

            exp(-d x) d**n / (n-1)! * sum_j C(n-1, j) x**(n-1-j) j! / (d - gamma)**(j+1)
        """
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for w, n, d in self.terms:
            a = d - gamma
            acc = np.zeros_like(x)
            for j in range(n):
                acc += math.comb(n - 1, j) * x ** (n - 1 - j) * math.factorial(j) / a ** (j + 1)
            out += w * np.exp(-d * x) * d**n / math.factorial(n - 1) * acc
        return out

    def to_json(self) -> list[dict[str, Any]]:
        return [{"w": w, "n": n, "delta": d} for w, n, d in self.terms]


@dataclass(frozen=True)
class StateJumpLaw:
    pos_rate: float = 0.0
    pos_law: ErlangMixture | None = None
    neg_rate: float = 0.0
    c: float = 1.0

    def check(self, path: str) -> None:
        for name in ("pos_rate", "neg_rate", "c"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise SchemaError(f"{path}.{name}", "must be finite")
        if self.pos_rate < 0:
            raise SchemaError(f"{path}.pos_rate", f"negative rate {self.pos_rate}")
        if self.neg_rate < 0:
            raise SchemaError(f"{path}.neg_rate", f"negative rate {self.neg_rate}")
        if self.c <= 0:
            raise SchemaError(f"{path}.c", f"exponential rate {self.c} must be > 0")
        if self.pos_rate > 0:
            if self.pos_law is None:
                raise SchemaError(f"{path}.pos_law", "required when pos_rate > 0")
            self.pos_law.check(f"{path}.pos_law")

    @property
    def total_rate(self) -> float:
        return self.pos_rate + self.neg_rate


@dataclass(frozen=True)
class MarkovChainSpec:
    Q: NDArray[np.float64]

    def __post_init__(self) -> None:
        Q = np.array(self.Q, dtype=float)
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    def check(self) -> None:
        Q = self.Q
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] < 1:
            raise SchemaError("Q", f"expected a square matrix, got shape {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise SchemaError("Q", "entries must be finite")
        m = Q.shape[0]
        for k in range(m):
            for j in range(m):
                if k != j and Q[k, j] < 0:
                    raise ModelError(f"Q[{k}][{j}]", f"negative off-diagonal rate {Q[k, j]}")
            rs = Q[k].sum()
            if abs(rs) > 1e-12 * max(1.0, np.abs(Q[k]).max()):
                raise ModelError(f"Q[{k}]", f"row sums to {rs!r}, generator rows must sum to 0")
        if m > 1:
            # support graph of I + Q/max|Q_kk|: off-diagonal positives
            scale = np.abs(np.diag(Q)).max()
            adj = (np.eye(m) + Q / scale if scale > 0 else np.eye(m)) > 0
            np.fill_diagonal(adj, False)
            ncomp, _ = connected_components(adj.astype(int), directed=True, connection="strong")
            if ncomp != 1:
                raise ModelError("Q", f"chain is reducible ({ncomp} communicating classes)")


@dataclass(frozen=True)
class ProcessSpec:
    """Unvalidated model description.

    ``switching[k][j]`` is the law of the level jump when the chain moves
    from ``k`` to ``j``; ``None`` means no jump.
    """

    chain: MarkovChainSpec
    laws: tuple[StateJumpLaw, ...]
    switching: tuple[tuple[ErlangMixture | None, ...], ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "laws", tuple(self.laws))
        if self.switching is not None:
            sw = tuple(tuple(row) for row in self.switching)
            if all(x is None for row in sw for x in row):
                sw = None
            object.__setattr__(self, "switching", sw)

    @property
    def m(self) -> int:
        return self.chain.m

    @property
    def has_switching(self) -> bool:
        return self.switching is not None


@dataclass(frozen=True, eq=False)
class ValidatedModel:
    """A checked ProcessSpec with cached derived quantities.

    Hashes by identity so pipelines can memoize on it.
    """

    spec: ProcessSpec
    pi: NDArray[np.float64]
    drift: float
    lam_pos: NDArray[np.float64]
    lam_neg: NDArray[np.float64]
    c: NDArray[np.float64]
    nu: NDArray[np.float64] = field(repr=False)
    P: NDArray[np.float64] = field(repr=False)

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def Q(self) -> NDArray[np.float64]:
        return self.spec.chain.Q

    @property
    def laws(self) -> tuple[StateJumpLaw, ...]:
        return self.spec.laws

    @property
    def Lam(self) -> NDArray[np.float64]:
        return np.diag(self.lam_pos + self.lam_neg)

    @property
    def C(self) -> NDArray[np.float64]:
        return np.diag(self.c)

    @property
    def N(self) -> NDArray[np.float64]:
        return np.diag(self.nu)

    @property
    def has_switching(self) -> bool:
        return self.spec.has_switching

    def require_no_switching(self, what: str) -> None:
        if self.has_switching:
            raise UnsupportedError(f"{what} requires zero switching jumps")


def _stationary(Q: NDArray) -> NDArray:
    m = Q.shape[0]
    A = Q.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(m)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def validate_spec(spec: ProcessSpec) -> ValidatedModel:
    """Check every invariant of ``spec`` and cache pi, drift and N, P."""
    spec.chain.check()
    m = spec.m
    if len(spec.laws) != m:
        raise SchemaError("laws", f"expected {m} state laws, got {len(spec.laws)}")
    for k, law in enumerate(spec.laws):
        law.check(f"laws[{k}]")
    if spec.switching is not None:
        if len(spec.switching) != m or any(len(row) != m for row in spec.switching):
            raise SchemaError("switching", f"expected an {m}x{m} table")
        for k, row in enumerate(spec.switching):
            for j, law in enumerate(row):
                if law is not None:
                    law.check(f"switching[{k}][{j}]")
    if all(law.total_rate == 0 for law in spec.laws) and spec.switching is None:
        raise ModelError("laws", "no state has jumps; the level process is identically zero")

    Q = spec.chain.Q
    pi = _stationary(Q)
    if np.any(pi <= 0) or abs(pi.sum() - 1) > 1e-10 or np.abs(pi @ Q).max() > 1e-10:
        raise ModelError("Q", f"could not find a positive stationary law (got {pi})")
    pi = pi / pi.sum()

    nu = -np.diag(Q).copy()
    P = np.zeros_like(Q)
    for k in range(m):
        if nu[k] > 0:
            P[k] = Q[k] / nu[k]
            P[k, k] = 0.0
    lam_pos = np.array([law.pos_rate for law in spec.laws])
    lam_neg = np.array([law.neg_rate for law in spec.laws])
    c = np.array([law.c for law in spec.laws])
    means = np.array([law.pos_law.mean() if law.pos_rate > 0 else 0.0 for law in spec.laws])
    drift = float(np.sum(pi * (lam_pos * means - lam_neg / c)))
    for arr in (pi, nu, P, lam_pos, lam_neg, c):
        arr.setflags(write=False)
    return ValidatedModel(spec, pi, drift, lam_pos, lam_neg, c, nu, P)


def drift_m1(model: ValidatedModel) -> float:
    """Stationary mean level change per unit time from the in-state jumps."""
    return model.drift


@dataclass(frozen=True)
class DualSpec:
    """Descriptor of the negated process -xi on the same chain.

    In state k it jumps up at rate ``up_rate[k]`` by Exp(``up_exp[k]``) and
    down at rate ``down_rate[k]`` by ``down_law[k]``.
    """

    chain: MarkovChainSpec
    up_rate: tuple[float, ...]
    up_exp: tuple[float, ...]
    down_rate: tuple[float, ...]
    down_law: tuple[ErlangMixture | None, ...]
    pi: tuple[float, ...]

    @property
    def m(self) -> int:
        return self.chain.m

    @property
    def Q(self) -> NDArray[np.float64]:
        return self.chain.Q

    @property
    def drift(self) -> float:
        return float(
            sum(
                p * (lu / cu - (ld * law.mean() if ld > 0 else 0.0))
                for p, lu, cu, ld, law in zip(
                    self.pi, self.up_rate, self.up_exp, self.down_rate, self.down_law
                )
            )
        )


def dual_spec(model: ValidatedModel | DualSpec) -> DualSpec | ValidatedModel:
    """Descriptor of -xi; applying it to a DualSpec gives the model back."""
    if isinstance(model, DualSpec):
        laws = tuple(
            StateJumpLaw(pos_rate=ld, pos_law=law, neg_rate=lu, c=cu)
            for lu, cu, ld, law in zip(model.up_rate, model.up_exp, model.down_rate, model.down_law)
        )
        return validate_spec(ProcessSpec(model.chain, laws))
    model.require_no_switching("dual_spec")
    return DualSpec(
        chain=model.spec.chain,
        up_rate=tuple(float(x) for x in model.lam_neg),
        up_exp=tuple(float(x) for x in model.c),
        down_rate=tuple(float(x) for x in model.lam_pos),
        down_law=tuple(law.pos_law for law in model.laws),
        pi=tuple(float(x) for x in model.pi),
    )


def reverse_chain(model: ValidatedModel) -> ValidatedModel:
    """Same per-state laws on the time-reversed chain diag(pi)^-1 Q^T diag(pi)."""
    pi = model.pi
    Qr = (model.Q.T * pi[None, :]) / pi[:, None]
    np.fill_diagonal(Qr, 0.0)
    np.fill_diagonal(Qr, -Qr.sum(axis=1))
    sw = model.spec.switching
    if sw is not None:
        sw = tuple(tuple(sw[j][k] for j in range(model.m)) for k in range(model.m))
    return validate_spec(ProcessSpec(MarkovChainSpec(Qr), model.laws, sw))


# -- JSON model files -------------------------------------------------------

_TOP_KEYS = {"states", "Q", "laws"}
_LAW_KEYS = {"pos_rate", "pos_law", "neg_rate", "c"}
_TERM_KEYS = {"w", "n", "delta"}


def _number(val: Any, path: str) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(val).__name__}")
    if not math.isfinite(val):
        raise SchemaError(path, "must be finite")
    return float(val)


def _keys(obj: Any, allowed: set[str], required: set[str], path: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    extra = set(obj) - allowed
    if extra:
        raise SchemaError(path, f"unknown keys {sorted(extra)}")
    missing = required - set(obj)
    if missing:
        raise SchemaError(path, f"missing keys {sorted(missing)}")


def model_from_dict(data: Any) -> ProcessSpec:
    """Parse the JSON model schema into a ProcessSpec (schema checks only)."""
    _keys(data, _TOP_KEYS, _TOP_KEYS, "$")
    m = data["states"]
    if isinstance(m, bool) or not isinstance(m, int) or m < 1:
        raise SchemaError("states", "must be an integer >= 1")
    Q = data["Q"]
    if not isinstance(Q, list) or len(Q) != m or any(not isinstance(r, list) or len(r) != m for r in Q):
        raise SchemaError("Q", f"expected {m}x{m} nested list")
    Qa = np.array([[_number(v, f"Q[{i}][{j}]") for j, v in enumerate(row)] for i, row in enumerate(Q)])
    laws_raw = data["laws"]
    if not isinstance(laws_raw, list) or len(laws_raw) != m:
        raise SchemaError("laws", f"expected a list of {m} state laws")
    laws = []
    for k, raw in enumerate(laws_raw):
        path = f"laws[{k}]"
        _keys(raw, _LAW_KEYS, {"c"}, path)
        pos_law = None
        if raw.get("pos_law") is not None:
            terms_raw = raw["pos_law"]
            if not isinstance(terms_raw, list):
                raise SchemaError(f"{path}.pos_law", "expected a list of terms")
            terms = []
            for j, t in enumerate(terms_raw):
                tpath = f"{path}.pos_law[{j}]"
                _keys(t, _TERM_KEYS, _TERM_KEYS, tpath)
                n = t["n"]
                if isinstance(n, bool) or not isinstance(n, int):
                    raise SchemaError(f"{tpath}.n", "shape must be an integer")
                terms.append((_number(t["w"], f"{tpath}.w"), n, _number(t["delta"], f"{tpath}.delta")))
            pos_law = ErlangMixture(tuple(terms))
            pos_law.check(f"{path}.pos_law")
        law = StateJumpLaw(
            pos_rate=_number(raw.get("pos_rate", 0.0), f"{path}.pos_rate"),
            pos_law=pos_law,
            neg_rate=_number(raw.get("neg_rate", 0.0), f"{path}.neg_rate"),
            c=_number(raw["c"], f"{path}.c"),
        )
        law.check(path)
        laws.append(law)
    return ProcessSpec(MarkovChainSpec(Qa), tuple(laws))


def model_to_dict(spec: ProcessSpec | ValidatedModel) -> dict[str, Any]:
    if isinstance(spec, ValidatedModel):
        spec = spec.spec
    if spec.has_switching:
        raise UnsupportedError("switching jumps have no JSON representation")
    laws = []
    for law in spec.laws:
        d: dict[str, Any] = {"pos_rate": law.pos_rate, "neg_rate": law.neg_rate, "c": law.c}
        if law.pos_law is not None:
            d["pos_law"] = law.pos_law.to_json()
        laws.append(d)
    return {"states": spec.m, "Q": spec.chain.Q.tolist(), "laws": laws}


def load_model(path: str | Path) -> ValidatedModel:
    """Read and validate a JSON model file.

    Raises SchemaError for format problems and ModelError for invalid math.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    return validate_spec(model_from_dict(data))


def example_model() -> ValidatedModel:
    """The two-state example shipped with the package."""
    return load_model(Path(__file__).with_name("data") / "example.json")


def make_model(
    Q: Sequence[Sequence[float]],
    laws: Sequence[StateJumpLaw],
    switching: Sequence[Sequence[ErlangMixture | None]] | None = None,
) -> ValidatedModel:
    """Convenience constructor: build and validate in one call."""
    sw = None if switching is None else tuple(tuple(r) for r in switching)
    return validate_spec(ProcessSpec(MarkovChainSpec(np.asarray(Q, float)), tuple(laws), sw))

"""Event-driven exact simulation of (xi(t), x(t)).

Between events the level is constant, so a path is a sequence of competing
exponential clocks in the current state: chain switch (nu_k), upward jump
(lam_pos_k, Erlang mixture), downward jump (lam_neg_k, Exp(c_k)).

Reproducibility: replications are grouped in blocks of ``batch_size``; block
``b`` of stream ``tag`` draws from ``Philox(key=(seed, tag << 32 | b))``.
Blocks are independent of the worker count, and results are concatenated in
block order, so output is bit-identical for any ``MMRISK_THREADS``.

Ruin estimates use a finite horizon.  A path that drifts far below the next
unpassed level is *cleared* once the Lundberg upper bound on its residual
passage probability falls under ``clear_tol``; paths neither passed nor
cleared by ``t_max`` are counted in ``truncated_fraction``.  Both effects can
only bias the ruin estimate downward.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numba
import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateSampleError, MMRiskError
from .model import ValidatedModel

# -- model packing ------------------------------------------------------------


@dataclass(frozen=True)
class _Packed:
    nu: NDArray
    pcum: NDArray
    lam_pos: NDArray
    lam_neg: NDArray
    c: NDArray
    mw: NDArray  # (m, T) cumulative weights
    mn: NDArray  # (m, T) shapes
    md: NDArray  # (m, T) rates
    mt: NDArray  # (m,) term counts
    swflag: NDArray  # (m, m)
    sww: NDArray  # (m, m, T)
    swn: NDArray
    swd: NDArray
    swt: NDArray  # (m, m)
    picum: NDArray

    def args(self):
        return (
            self.nu, self.pcum, self.lam_pos, self.lam_neg, self.c,
            self.mw, self.mn, self.md, self.mt,
            self.swflag, self.sww, self.swn, self.swd, self.swt,
        )


def _pack_mixture(law, T):
    w = np.zeros(T)
    n = np.ones(T, np.int64)
    d = np.ones(T)
    cnt = 0
    if law is not None:
        acc = 0.0
        for j, (wj, nj, dj) in enumerate(law.terms):
            acc += wj
            w[j], n[j], d[j] = acc, nj, dj
        w[len(law.terms) - 1] = 1.0
        cnt = len(law.terms)
    return w, n, d, cnt


def _pack(model: ValidatedModel) -> _Packed:
    m = model.m
    laws = model.laws
    sw = model.spec.switching
    T = max([len(l.pos_law.terms) for l in laws if l.pos_law is not None] + [1])
    if sw is not None:
        T = max([T] + [len(x.terms) for row in sw for x in row if x is not None])
    mw, mn, md = np.zeros((m, T)), np.ones((m, T), np.int64), np.ones((m, T))
    mt = np.zeros(m, np.int64)
    for k, law in enumerate(laws):
        if law.pos_rate > 0:
            mw[k], mn[k], md[k], mt[k] = _pack_mixture(law.pos_law, T)
    swflag = np.zeros((m, m), np.bool_)
    sww, swn, swd = np.zeros((m, m, T)), np.ones((m, m, T), np.int64), np.ones((m, m, T))
    swt = np.zeros((m, m), np.int64)
    if sw is not None:
        for k in range(m):
            for j in range(m):
                if sw[k][j] is not None:
                    swflag[k, j] = True
                    sww[k, j], swn[k, j], swd[k, j], swt[k, j] = _pack_mixture(sw[k][j], T)
    pcum = np.cumsum(model.P, axis=1)
    for k in range(m):
        if model.nu[k] > 0:
            pcum[k, -1] = 1.0
    picum = np.cumsum(model.pi)
    picum[-1] = 1.0
    return _Packed(
        np.asarray(model.nu, float), pcum, np.asarray(model.lam_pos, float),
        np.asarray(model.lam_neg, float), np.asarray(model.c, float),
        mw, mn, md, mt, swflag, sww, swn, swd, swt, picum,
    )


# -- kernels ------------------------------------------------------------------

_JIT = dict(nogil=True, cache=True)


@numba.njit(**_JIT)
def _pick(gen, cum, cnt):
    u = gen.random()
    for j in range(cnt - 1):
        if u < cum[j]:
            return j
    return cnt - 1


@numba.njit(**_JIT)
def _mix_draw(gen, w, n, d, cnt):
    t = _pick(gen, w, cnt)
    return gen.gamma(float(n[t]), 1.0 / d[t])


@numba.njit(**_JIT)
def _step(gen, k, nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt):
    """One event from state k: returns (dt, kind, new_state, level change).

    kind: 0 chain switch, 1 upward jump, 2 downward jump, -1 no event possible.
    """
    a = nu[k] + lp[k] + lm[k]
    if a <= 0.0:
        return math.inf, -1, k, 0.0
    dt = gen.standard_exponential() / a
    u = gen.random() * a
    if u < nu[k]:
        j = _pick(gen, pcum[k], pcum.shape[1])
        dx = 0.0
        if swflag[k, j]:
            dx = _mix_draw(gen, sww[k, j], swn[k, j], swd[k, j], swt[k, j])
        return dt, 0, j, dx
    if u < nu[k] + lp[k]:
        return dt, 1, k, _mix_draw(gen, mw[k], mn[k], md[k], mt[k])
    return dt, 2, k, -gen.standard_exponential() / c[k]


@numba.njit(**_JIT)
def _passage_kernel(gen, n, i0, levels, t_max, clear_depth, track_sup,
                    nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt):
    L = levels.shape[0]
    tau = np.full((n, L), np.nan)
    gp = np.full((n, L), np.nan)
    gu = np.full((n, L), np.nan)
    st = np.full((n, L), -1, np.int64)
    status = np.zeros(n, np.int64)
    sup = np.zeros(n)
    for p in range(n):
        t = 0.0
        x = 0.0
        k = i0
        s = 0.0
        nxt = 0
        while True:
            dt, kind, j, dx = _step(gen, k, nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt)
            t += dt
            if kind < 0 or t > t_max:
                status[p] = 2
                break
            xo = x
            x += dx
            k = j
            if dx > 0.0:
                while nxt < L and x > levels[nxt]:
                    tau[p, nxt] = t
                    gp[p, nxt] = x - levels[nxt]
                    gu[p, nxt] = levels[nxt] - xo
                    st[p, nxt] = k
                    nxt += 1
                if x > s:
                    s = x
                if L > 0 and nxt == L and not track_sup:
                    status[p] = 0
                    break
            elif dx < 0.0:
                ref = s if (track_sup or nxt == L) else levels[nxt]
                if x < ref - clear_depth:
                    status[p] = 1
                    break
        sup[p] = s
    return tau, gp, gu, st, status, sup


@numba.njit(**_JIT)
def _horizon_kernel(gen, n, i0, picum, horizon, kill_rate,
                    nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt):
    m = nu.shape[0]
    xi = np.zeros(n)
    sup = np.zeros(n)
    inf = np.zeros(n)
    jumps = np.zeros(n, np.int64)
    occ = np.zeros((n, m))
    end = np.zeros(n, np.int64)
    for p in range(n):
        k = i0
        if k < 0:
            k = _pick(gen, picum, m)
        T = horizon
        if kill_rate > 0.0:
            T = gen.standard_exponential() / kill_rate
        t = 0.0
        x = 0.0
        hi = 0.0
        lo = 0.0
        while True:
            dt, kind, j, dx = _step(gen, k, nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt)
            if t + dt > T:
                occ[p, k] += T - t
                break
            occ[p, k] += dt
            t += dt
            x += dx
            if kind != 0 or dx != 0.0:
                jumps[p] += 1
            k = j
            if x > hi:
                hi = x
            if x < lo:
                lo = x
        xi[p] = x
        sup[p] = hi
        inf[p] = lo
        end[p] = k
    return xi, sup, inf, jumps, occ, end


@numba.njit(**_JIT)
def _first_jump_kernel(gen, n, i0, nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt):
    zeta = np.zeros(n)
    state = np.zeros(n, np.int64)
    for p in range(n):
        k = i0
        t = 0.0
        while True:
            dt, kind, j, dx = _step(gen, k, nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt)
            t += dt
            if kind != 0:
                break
            k = j
        zeta[p] = t
        state[p] = k
    return zeta, state


@numba.njit(**_JIT)
def _down_passage_kernel(gen, n, i0, depth, t_max,
                         nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt):
    state = np.full(n, -1, np.int64)
    for p in range(n):
        k = i0
        t = 0.0
        x = 0.0
        while True:
            dt, kind, j, dx = _step(gen, k, nu, pcum, lp, lm, c, mw, mn, md, mt, swflag, sww, swn, swd, swt)
            t += dt
            if kind < 0 or t > t_max:
                break
            x += dx
            if kind == 2 and x < -depth:
                state[p] = k
                break
            k = j
    return state


# -- block driver ---------------------------------------------------------------


def worker_count(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("MMRISK_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def stream(seed: int, tag: int, block: int) -> np.random.Generator:
    """Counter-based generator for (seed, tag, block)."""
    key = np.array([seed % 2**64, ((tag % 2**32) << 32) | (block % 2**32)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _run_blocks(fn: Callable, n: int, seed: int, tag: int, batch_size: int, threads: int | None):
    blocks = [(b, min(batch_size, n - b * batch_size)) for b in range(math.ceil(n / batch_size))]

    def one(item):
        b, size = item
        return fn(stream(seed, tag, b), size)

    workers = min(worker_count(threads), len(blocks)) or 1
    if workers == 1:
        parts = [one(it) for it in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(one, blocks))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(len(parts[0])))


# -- public API -------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    seed: int = 42
    n_paths: int = 100_000
    t_max: float = 500.0
    batch_size: int = 8192
    threads: int | None = None
    clear_tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError(f"n_paths must be >= 1, got {self.n_paths}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be > 0, got {self.t_max}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class SimEstimate:
    point: float
    stderr: float
    n: int
    seed: int
    truncated_fraction: float = 0.0

    def z_score(self, value: float) -> float:
        if self.stderr == 0:
            return 0.0 if value == self.point else math.copysign(math.inf, self.point - value)
        return (self.point - value) / self.stderr


def binomial_estimate(hits: NDArray, seed: int, truncated: float = 0.0) -> SimEstimate:
    n = len(hits)
    p = float(np.mean(hits)) if n else float("nan")
    return SimEstimate(p, math.sqrt(max(p * (1 - p), 0.0) / n), n, seed, truncated)


def mean_estimate(values: NDArray, seed: int, truncated: float = 0.0) -> SimEstimate:
    n = len(values)
    sd = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return SimEstimate(float(np.mean(values)), sd / math.sqrt(n), n, seed, truncated)


def clearing_depth(model: ValidatedModel, clear_tol: float) -> float:
    """Depth below the next level beyond which passage probability < clear_tol."""
    if model.drift >= 0 or model.has_switching or clear_tol <= 0:
        return math.inf
    from .spectral import lundberg_certificate

    try:
        cert = lundberg_certificate(model)
    except MMRiskError:
        return math.inf
    worst = cert.c_plus * float(np.max(cert.h))
    return max(math.log(max(worst, 1.0) / clear_tol) / cert.gamma, 0.0)


@dataclass
class PassageSample:
    """Raw first-passage records for paths started in ``state`` over ``levels``."""

    state: int
    levels: NDArray
    tau: NDArray
    gamma_plus: NDArray
    gamma_under: NDArray
    state_at_tau: NDArray
    status: NDArray
    sup: NDArray
    seed: int

    @property
    def n(self) -> int:
        return len(self.status)

    @property
    def truncated_fraction(self) -> float:
        return float(np.mean(self.status == 2))

    @property
    def gamma_total(self) -> NDArray:
        return self.gamma_plus + self.gamma_under


def simulate_passage(model: ValidatedModel, i: int, levels, cfg: SimConfig, tag: int | None = None,
                     track_sup: bool = False) -> PassageSample:
    """First passage of each level in ``levels`` (ascending) by paths from state i.

    With ``track_sup`` a path runs on after the last level until it is cleared
    relative to its running supremum, so ``sup`` is the all-time maximum (up
    to ``clear_tol``) and status 0 never occurs.
    """
    levels = np.sort(np.atleast_1d(np.asarray(levels, float)))
    pk = _pack(model)
    depth = clearing_depth(model, cfg.clear_tol)
    args = pk.args()

    def fn(gen, size):
        return _passage_kernel(gen, size, i, levels, cfg.t_max, depth, track_sup, *args)

    tag = (1000 + i + (500 if track_sup else 0)) if tag is None else tag
    tau, gp, gu, st, status, sup = _run_blocks(fn, cfg.n_paths, cfg.seed, tag, cfg.batch_size, cfg.threads)
    return PassageSample(i, levels, tau, gp, gu, st, status, sup, cfg.seed)


def simulate_path(model: ValidatedModel, rng: np.random.Generator, i: int = 0,
                  level: float | None = None, horizon: float | None = None) -> dict:
    """Summary of one path stopped at first passage over ``level`` or at ``horizon``."""
    pk = _pack(model)
    if level is not None:
        tau, gp, gu, st, status, sup = _passage_kernel(
            rng, 1, i, np.array([float(level)]), horizon or math.inf, math.inf, False, *pk.args())
        return {"passed": bool(status[0] == 0), "tau": float(tau[0, 0]), "gamma_plus": float(gp[0, 0]),
                "gamma_under": float(gu[0, 0]), "state_at_tau": int(st[0, 0]), "sup": float(sup[0])}
    if horizon is None:
        raise ValueError("give a level or a horizon")
    xi, sup, inf, jumps, occ, end = _horizon_kernel(rng, 1, i, pk.picum, float(horizon), 0.0, *pk.args())
    return {"xi": float(xi[0]), "sup": float(sup[0]), "inf": float(inf[0]), "jumps": int(jumps[0]),
            "occupation": occ[0], "state": int(end[0])}


def estimate_ruin(model: ValidatedModel, i: int, u: float, cfg: SimConfig) -> SimEstimate:
    """P_i{sup xi > u} over a finite horizon (a downward-biased estimate)."""
    ps = simulate_passage(model, i, [u], cfg)
    return binomial_estimate(ps.status == 0, cfg.seed, ps.truncated_fraction)


@dataclass
class OvershootResult:
    sample: PassageSample
    level: float

    @property
    def passed(self) -> NDArray:
        return self.sample.state_at_tau[:, 0] >= 0

    @property
    def n_passed(self) -> int:
        return int(self.passed.sum())

    def column(self, name: str) -> NDArray:
        s = self.sample
        arr = {"tau": s.tau, "gamma_plus": s.gamma_plus, "gamma_under": s.gamma_under,
               "gamma_total": s.gamma_total}[name][:, 0]
        return arr[self.passed]

    def tail(self, kind: str, z: float, m: int) -> list[SimEstimate]:
        """P{gamma_kind(x) > z, tau+(x) < inf, x(tau) = j} for j = 0..m-1."""
        vals = {"gamma_plus": self.sample.gamma_plus, "gamma_under": self.sample.gamma_under,
                "gamma_total": self.sample.gamma_total}[kind][:, 0]
        st = self.sample.state_at_tau[:, 0]
        tr = self.sample.truncated_fraction
        return [binomial_estimate((st == j) & (vals > z), self.sample.seed, tr) for j in range(m)]

    def transform(self, s: float, u: float = 0.0, v: float = 0.0, mu: float = 0.0, m: int | None = None) -> list[SimEstimate]:
        """Plug-in E[exp(-s tau - u gp - v gu - mu gt); tau < inf, x(tau) = j]."""
        smp = self.sample
        st = smp.state_at_tau[:, 0]
        ok = st >= 0
        w = np.zeros(smp.n)
        w[ok] = np.exp(-s * smp.tau[ok, 0] - u * smp.gamma_plus[ok, 0] - v * smp.gamma_under[ok, 0]
                       - mu * smp.gamma_total[ok, 0])
        m = m if m is not None else int(st.max()) + 1
        return [mean_estimate(np.where(st == j, w, 0.0), smp.seed, smp.truncated_fraction) for j in range(m)]

    def to_csv(self, path: str | Path) -> None:
        s = self.sample
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["rep", "tau", "gamma_plus", "gamma_under", "gamma_total", "state_at_tau"])
            for rep in np.flatnonzero(self.passed):
                wr.writerow([rep, repr(float(s.tau[rep, 0])), repr(float(s.gamma_plus[rep, 0])),
                             repr(float(s.gamma_under[rep, 0])), repr(float(s.gamma_total[rep, 0])),
                             int(s.state_at_tau[rep, 0])])


def sample_overshoot(model: ValidatedModel, i: int, x: float, n: int, t_max: float = 500.0,
                     seed: int = 42, **kw) -> OvershootResult:
    """First-passage overshoot/undershoot samples over level x >= 0 from state i."""
    if x < 0:
        raise ValueError("level x must be >= 0")
    cfg = SimConfig(seed=seed, n_paths=n, t_max=t_max, **kw)
    res = OvershootResult(simulate_passage(model, i, [x], cfg), float(x))
    if res.n_passed == 0:
        raise DegenerateSampleError(
            f"no passage over {x} in {n} paths from state {i}; increase n or t_max, or lower x")
    return res


def sample_supremum(model: ValidatedModel, i: int, cfg: SimConfig) -> PassageSample:
    """All-time supremum samples (up to clearing/truncation)."""
    return simulate_passage(model, i, np.empty(0), cfg, tag=2000 + i, track_sup=True)


def estimate_resolvent_row(model: ValidatedModel, s: float, r: float, i: int, cfg: SimConfig) -> list[SimEstimate]:
    """E_i[exp(r xi(theta_s)); x(theta_s) = j] by killing at an independent Exp(s) time."""
    pk = _pack(model)

    def fn(gen, size):
        return _horizon_kernel(gen, size, i, pk.picum, math.inf, s, *pk.args())

    xi, sup, inf, jumps, occ, end = _run_blocks(fn, cfg.n_paths, cfg.seed, 3000 + i, cfg.batch_size, cfg.threads)
    w = np.exp(r * xi)
    return [mean_estimate(np.where(end == j, w, 0.0), cfg.seed) for j in range(model.m)]


def estimate_first_jump_row(model: ValidatedModel, s: float, i: int, cfg: SimConfig) -> list[SimEstimate]:
    """E_i[exp(-s zeta*); x(zeta*) = j] for the first level jump zeta*."""
    pk = _pack(model)

    def fn(gen, size):
        return _first_jump_kernel(gen, size, i, *pk.args())

    zeta, state = _run_blocks(fn, cfg.n_paths, cfg.seed, 4000 + i, cfg.batch_size, cfg.threads)
    w = np.exp(-s * zeta)
    return [mean_estimate(np.where(state == j, w, 0.0), cfg.seed) for j in range(model.m)]


@dataclass
class HorizonSample:
    xi: NDArray
    sup: NDArray
    inf: NDArray
    jumps: NDArray
    occupation: NDArray
    end_state: NDArray
    horizon: float


def simulate_horizon(model: ValidatedModel, i: int, horizon: float, cfg: SimConfig) -> HorizonSample:
    """Paths on [0, horizon]; ``i = -1`` draws the start state from pi."""
    pk = _pack(model)

    def fn(gen, size):
        return _horizon_kernel(gen, size, i, pk.picum, float(horizon), 0.0, *pk.args())

    out = _run_blocks(fn, cfg.n_paths, cfg.seed, 5000 + (i % 1000), cfg.batch_size, cfg.threads)
    return HorizonSample(*out, horizon=float(horizon))


def estimate_descending_phase(model: ValidatedModel, i: int, depth: float, cfg: SimConfig) -> list[SimEstimate]:
    """P_i{first passage below -depth happens by a downward jump in state j}."""
    pk = _pack(model)

    def fn(gen, size):
        return (_down_passage_kernel(gen, size, i, depth, cfg.t_max, *pk.args()),)

    (state,) = _run_blocks(fn, cfg.n_paths, cfg.seed, 6000 + i, cfg.batch_size, cfg.threads)
    tr = float(np.mean(state < 0))
    return [binomial_estimate(state == j, cfg.seed, tr) for j in range(model.m)]

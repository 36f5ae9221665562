"""Command-line front end: ``mmrisk validate|analyze|simulate|compare``.

Exit codes: 0 success, 2 bad input (schema, flags, missing file),
3 mathematical precondition (invalid model, wrong drift sign, unsupported
feature), 4 numerical pipeline failure, 5 analytic/simulation disagreement.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import math
import sys
import time
import traceback
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence, TextIO

import numpy as np

from . import __version__
from .errors import (
    DegenerateSampleError,
    DriftError,
    MMRiskError,
    ModelError,
    PipelineError,
    SchemaError,
    UnsupportedError,
)
from .model import ValidatedModel, drift_m1, load_model
from .transforms import cumulant_domain

EXAMPLE_MODEL = Path(__file__).with_name("data") / "example.json"
Z_LIMIT = 3.0
TRUNCATION_LIMIT = 1e-4


class UsageError(Exception):
    """Bad command-line value (exit 2)."""


def fmt(x: Any) -> str:
    """Fixed 12-significant-digit rendering used for every numeric cell."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.12g}"
    return str(x)


def _round(x: Any) -> Any:
    """Round floats in nested JSON data to 12 significant digits."""
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    if isinstance(x, np.ndarray):
        return _round(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [_round(float(x.real)), _round(float(x.imag))]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(fmt(x)) if math.isfinite(x) else fmt(x)
    return x


@dataclass
class RunManifest:
    command: str
    model_path: str
    model_sha256: str
    parameters: dict[str, Any]
    seed: int | None = None
    version: str = __version__
    started: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    wall_clock_s: float = 0.0

    def lines(self) -> list[str]:
        out = [
            f"# mmrisk {self.version}",
            f"# command: {self.command}",
            f"# model: {self.model_path}",
            f"# model_sha256: {self.model_sha256}",
            f"# parameters: {json.dumps(self.parameters, sort_keys=True)}",
        ]
        if self.seed is not None:
            out.append(f"# seed: {self.seed}")
        out.append(f"# started: {self.started}")
        out.append(f"# wall_clock_s: {self.wall_clock_s:.3f}")
        return out

    def as_dict(self) -> dict[str, Any]:
        return {
            "command": self.command, "model": self.model_path, "model_sha256": self.model_sha256,
            "parameters": self.parameters, "seed": self.seed, "version": self.version,
            "started": self.started, "wall_clock_s": round(self.wall_clock_s, 3),
        }


def write_table(fh: TextIO, manifest: RunManifest, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    for line in manifest.lines():
        fh.write(line + "\n")
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join(fmt(v) for v in row) + "\n")


def _emit(path: str | None, manifest: RunManifest, header, rows, stdout: TextIO) -> None:
    if path is None:
        write_table(stdout, manifest, header, rows)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            write_table(fh, manifest, header, rows)


def parse_grid(text: str) -> np.ndarray:
    """``a:b:step`` inclusive of b (up to rounding); a single number is a one-point grid."""
    parts = text.split(":")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"bad grid {text!r}: {exc}") from None
    if len(vals) == 1:
        grid = np.array(vals)
    elif len(vals) == 3:
        a, b, step = vals
        if not (step > 0 and math.isfinite(a) and math.isfinite(b)) or b < a:
            raise UsageError(f"empty grid {text!r}: need a <= b and step > 0")
        n = int(math.floor((b - a) / step + 1e-9)) + 1
        grid = a + step * np.arange(n)
    else:
        raise UsageError(f"bad grid {text!r}: expected a:b:step")
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise UsageError(f"empty grid {text!r}")
    return grid


def _exact(c: Any) -> Any:
    if isinstance(c, Fraction):
        return int(c) if c.denominator == 1 else str(c)
    return float(c)


def _load(path: str) -> tuple[ValidatedModel, str, str]:
    p = EXAMPLE_MODEL if path == "example" else Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read model file {path!r}: {exc.strerror}") from None
    return load_model(p), str(p), hashlib.sha256(raw).hexdigest()


def _state(arg: int | None, m: int) -> list[int]:
    if arg is None:
        return list(range(m))
    if not 1 <= arg <= m:
        raise UsageError(f"--state must be in 1..{m}")
    return [arg - 1]


# -- commands ---------------------------------------------------------------------


def cmd_validate(args, out: TextIO) -> int:
    model, path, sha = _load(args.model)
    dom = cumulant_domain(model)
    man = RunManifest("validate", path, sha, {})
    for line in man.lines():
        out.write(line + "\n")
    out.write("valid: true\n")
    out.write(f"states: {model.m}\n")
    out.write("pi: " + " ".join(fmt(p) for p in model.pi) + "\n")
    out.write(f"drift_m1: {fmt(drift_m1(model))}\n")
    out.write(f"cumulant_domain: ({fmt(dom.r_lo)}, {fmt(dom.r_hi)})\n")
    out.write(f"switching_jumps: {'yes' if model.has_switching else 'no'}\n")
    return 0


def cmd_analyze(args, out: TextIO) -> int:
    from .factorization import factorize
    from .overshoot import ladder_measure, overshoot_tail_mixture
    from .spectral import lundberg_certificate

    t0 = time.perf_counter()
    ugrid = parse_grid(args.u_grid)
    zgrid = parse_grid(args.z_grid)
    if np.any(ugrid < 0) or np.any(zgrid < 0):
        raise UsageError("grids must be nonnegative")
    model, path, sha = _load(args.model)
    m = model.m
    fac = factorize(model)
    cert = lundberg_certificate(model)
    tails = {k: overshoot_tail_mixture(model, k) for k in ("gamma_plus", "gamma_under", "gamma_total")}
    G = ladder_measure(model)

    rows = []
    for u in ugrid:
        psi = [fac.psi(i, u) for i in range(m)]
        bnd = [cert.bounds(i, u) for i in range(m)]
        rows.append([u, *psi, *[b[0] for b in bnd], *[b[1] for b in bnd]])
    header = ["u"] + [f"psi_{i + 1}" for i in range(m)] + [f"lb_{i + 1}" for i in range(m)] + [f"ub_{i + 1}" for i in range(m)]
    trows = []
    for kind, mix in tails.items():
        for z in zgrid:
            M = mix(z)
            for i in range(m):
                for j in range(m):
                    trows.append([kind, z, i + 1, j + 1, M[i, j]])
    theader = ["kind", "z", "from", "to", "probability"]

    params = {"u_grid": args.u_grid, "z_grid": args.z_grid}
    man = RunManifest("analyze", path, sha, params)
    man.wall_clock_s = time.perf_counter() - t0
    _emit(args.out, man, header, rows, out)
    if args.out is None:
        return 0
    stem = Path(args.out)
    base = stem.with_suffix("") if stem.suffix else stem
    with open(f"{base}_overshoot.csv", "w", encoding="utf-8", newline="") as fh:
        write_table(fh, man, theader, trows)
    roots = fac.poles.roots
    side = {
        "manifest": man.as_dict(),
        "lundberg": {"gamma": cert.gamma, "h": cert.h, "nu": cert.nu, "c_minus": cert.c_minus, "c_plus": cert.c_plus},
        "D_coefficients_ascending": [_exact(c) for c in fac.G.den],
        "D_roots": [complex(r) if abs(complex(r).imag) > 0 else float(complex(r).real) for r in roots],
        "R_plus": fac.R_plus,
        "ladder_norm": G.total,
        "psi_mixture": {"coefficients": fac.psi.coefs, "rates": fac.psi.rates},
        "overshoot_forms": {k: [[mix.describe(i, j, 6) for j in range(m)] for i in range(m)] for k, mix in tails.items()},
    }
    with open(f"{base}.json", "w", encoding="utf-8") as fh:
        json.dump(_round(side), fh, indent=2)
        fh.write("\n")
    return 0


def _sim_config(args):
    from .montecarlo import SimConfig

    if args.paths < 1:
        raise UsageError("--paths must be >= 1")
    if not args.t_max > 0:
        raise UsageError("--t-max must be > 0")
    return SimConfig(seed=args.seed, n_paths=args.paths, t_max=args.t_max)


def cmd_simulate(args, out: TextIO) -> int:
    from .montecarlo import OvershootResult, simulate_passage

    t0 = time.perf_counter()
    cfg = _sim_config(args)
    model, path, sha = _load(args.model)
    states = _state(args.state, model.m)
    zgrid = parse_grid(args.z_grid) if args.level_x is not None else None
    if args.u < 0 or (args.level_x is not None and args.level_x < 0):
        raise UsageError("levels must be nonnegative")
    rows = []
    trows = []
    for i in states:
        levels = [args.u] if args.level_x is None else sorted({args.u, args.level_x})
        ps = simulate_passage(model, i, levels, cfg)
        col = list(ps.levels).index(args.u)
        hits = ps.state_at_tau[:, col] >= 0
        p = float(hits.mean())
        se = math.sqrt(p * (1 - p) / ps.n)
        rows.append([i + 1, args.u, p, se, ps.n, cfg.seed, ps.truncated_fraction])
        if args.level_x is not None:
            xcol = list(ps.levels).index(args.level_x)
            sub = type(ps)(i, ps.levels[xcol:xcol + 1], ps.tau[:, xcol:xcol + 1], ps.gamma_plus[:, xcol:xcol + 1],
                           ps.gamma_under[:, xcol:xcol + 1], ps.state_at_tau[:, xcol:xcol + 1], ps.status, ps.sup, ps.seed)
            res = OvershootResult(sub, args.level_x)
            if res.n_passed == 0:
                raise DegenerateSampleError(
                    f"no passage over {args.level_x} from state {i + 1}; raise --paths or --t-max")
            for kind in ("gamma_plus", "gamma_under", "gamma_total"):
                for z in zgrid:
                    for j, est in enumerate(res.tail(kind, z, model.m)):
                        trows.append([kind, args.level_x, z, i + 1, j + 1, est.point, est.stderr])
            if args.dump:
                dump = Path(args.dump)
                target = dump if len(states) == 1 else dump.with_name(f"{dump.stem}_state{i + 1}{dump.suffix}")
                res.to_csv(target)
    params = {"u": args.u, "paths": args.paths, "t_max": args.t_max, "state": args.state,
              "level_x": args.level_x, "z_grid": args.z_grid if args.level_x is not None else None}
    man = RunManifest("simulate", path, sha, params, seed=args.seed)
    man.wall_clock_s = time.perf_counter() - t0
    header = ["state", "u", "point", "stderr", "n", "seed", "truncated_fraction"]
    _emit(args.out, man, header, rows, out)
    if trows:
        th = ["kind", "x", "z", "from", "to", "point", "stderr"]
        if args.out is None:
            out.write("\n")
            write_table(out, man, th, trows)
        else:
            base = Path(args.out)
            base = base.with_suffix("") if base.suffix else base
            with open(f"{base}_overshoot.csv", "w", encoding="utf-8", newline="") as fh:
                write_table(fh, man, th, trows)
    return 0


@dataclass
class Check:
    name: str
    analytic: float
    estimate: float
    stderr: float
    truncated: float
    n: int

    @property
    def z(self) -> float:
        se = self.stderr
        if se == 0:
            # all-or-nothing sample: fall back to the analytic binomial error
            se = math.sqrt(max(self.analytic * (1 - self.analytic), 0.0) / self.n)
        if se == 0:
            return 0.0 if self.estimate == self.analytic else math.inf
        return (self.estimate - self.analytic) / se

    @property
    def passed(self) -> bool:
        return abs(self.z) < Z_LIMIT


def run_compare(model: ValidatedModel, cfg, z_points=(0.25, 0.5, 1.0), u: float = 1.0,
                tamper: float = 1.0) -> list[Check]:
    """Analytic-vs-simulation checks: psi_i(u), P{tau(0) < inf} and the three overshoot tails."""
    from .factorization import factorize
    from .montecarlo import simulate_passage
    from .overshoot import overshoot_tail_mixture

    fac = factorize(model)
    tails = {k: overshoot_tail_mixture(model, k) for k in ("gamma_plus", "gamma_under", "gamma_total")}
    checks: list[Check] = []
    for i in range(model.m):
        ps = simulate_passage(model, i, [0.0, u], cfg)
        n, tr = ps.n, ps.truncated_fraction

        def add(name, analytic, hits):
            p = float(np.mean(hits))
            checks.append(Check(name, analytic, p, math.sqrt(p * (1 - p) / n), tr, n))

        add(f"psi_{i + 1}({fmt(u)})", tamper * float(fac.psi(i, u)), ps.state_at_tau[:, 1] >= 0)
        add(f"P_{i + 1}(tau+(0)<inf)", tamper * float(fac.psi(i, 0.0)), ps.state_at_tau[:, 0] >= 0)
        vals = {"gamma_plus": ps.gamma_plus[:, 0], "gamma_under": ps.gamma_under[:, 0], "gamma_total": ps.gamma_total[:, 0]}
        st = ps.state_at_tau[:, 0]
        for kind, mix in tails.items():
            for z in z_points:
                M = mix(z)
                for j in range(model.m):
                    add(f"{kind}[{i + 1},{j + 1}](z={fmt(z)})", float(M[i, j]), (st == j) & (vals[kind] > z))
    return checks


def cmd_compare(args, out: TextIO) -> int:
    t0 = time.perf_counter()
    cfg = _sim_config(args)
    model, path, sha = _load(args.model)
    checks = run_compare(model, cfg, tamper=args.tamper)
    trunc = max(c.truncated for c in checks)
    rows = [[c.name, c.analytic, c.estimate, c.stderr, c.z, "pass" if c.passed else "FAIL"] for c in checks]
    trunc_ok = trunc < TRUNCATION_LIMIT
    rows.append(["truncated_fraction", TRUNCATION_LIMIT, trunc, 0.0, 0.0, "pass" if trunc_ok else "FAIL"])
    ok = all(c.passed for c in checks) and trunc_ok
    params = {"paths": args.paths, "t_max": args.t_max}
    if args.tamper != 1.0:
        params["tamper"] = args.tamper
    man = RunManifest("compare", path, sha, params, seed=args.seed)
    man.wall_clock_s = time.perf_counter() - t0
    _emit(args.out, man, ["check", "analytic", "simulated", "stderr", "z", "status"], rows, out)
    print(f"compare: {'PASS' if ok else 'FAIL'} ({sum(c.passed for c in checks)}/{len(checks)} checks, "
          f"max |z| = {max(abs(c.z) for c in checks):.3f}, truncated_fraction = {trunc:.2e})", file=sys.stderr)
    return 0 if ok else 5


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmrisk", description="Ruin and overshoot analysis for Markov-modulated jump processes.")
    p.add_argument("--version", action="version", version=f"mmrisk {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def model_arg(sp):
        sp.add_argument("model", help="model JSON file, or 'example' for the bundled two-state example")

    v = sub.add_parser("validate", help="parse and validate a model file")
    model_arg(v)

    a = sub.add_parser("analyze", help="ruin probabilities, Lundberg bounds and overshoot tails")
    model_arg(a)
    a.add_argument("--u-grid", default="0:20:1", help="ruin levels a:b:step (default 0:20:1)")
    a.add_argument("--z-grid", default="0:2:0.5", help="overshoot arguments a:b:step (default 0:2:0.5)")
    a.add_argument("--out", help="CSV path; also writes <stem>_overshoot.csv and <stem>.json")

    def sim_flags(sp, paths):
        sp.add_argument("--paths", type=int, default=paths)
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--t-max", type=float, default=500.0)
        sp.add_argument("--out", help="CSV output path (default stdout)")

    s = sub.add_parser("simulate", help="Monte Carlo ruin and overshoot estimates")
    model_arg(s)
    s.add_argument("--u", type=float, default=1.0, help="ruin level")
    s.add_argument("--state", type=int, help="initial state 1..m (default: all)")
    s.add_argument("--level-x", type=float, help="also sample first-passage overshoots over this level")
    s.add_argument("--z-grid", default="0:2:0.5", help="tail arguments for --level-x")
    s.add_argument("--dump", help="raw per-path CSV for --level-x")
    sim_flags(s, 100_000)

    c = sub.add_parser("compare", help="analytic vs simulation report")
    model_arg(c)
    sim_flags(c, 1_000_000)
    c.add_argument("--tamper", type=float, default=1.0, help=argparse.SUPPRESS)
    return p


_COMMANDS = {"validate": cmd_validate, "analyze": cmd_analyze, "simulate": cmd_simulate, "compare": cmd_compare}


def _provenance(exc: BaseException) -> str:
    mod = "mmrisk"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("mmrisk.") and name != __name__:
            mod = name
    return mod


def main(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args, out)
    except (UsageError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, DriftError, UnsupportedError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    except (PipelineError, DegenerateSampleError, np.linalg.LinAlgError) as exc:
        print(f"error [{_provenance(exc)}: {type(exc).__name__}]: {exc}", file=sys.stderr)
        return 4


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()

"""Command-line entry point: ``intrl <subcommand> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 every sweep point failed.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import astuple

import numpy as np

from . import benchmarks as bm
from .basis import ValueParams
from .errors import ConfigError, FitError
from .experiments import (AUG_HEADER, BQ_DEMO_HEADER, CSV_HEADER, EXAMPLES, RULES, eval_fraction,
                          fit_loglog_slope, pi_config, run_augmented_ode_study, run_bq_demo,
                          run_convergence_study, write_csv)
from .pi_engine import run_policy_iteration
from .reference import expected_quadratic_cost, solve_riccati_kleinman

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

CONFIG_KEYS = {
    "example": str, "rule": str, "nu": eval_fraction, "rho": float,
    "n_min": int, "n_max": int, "seed": int, "out": str, "jobs": int,
}
DEFAULTS = {"example": "lqr3", "rule": "trapezoid", "nu": 3.5, "rho": None,
            "n_min": 5, "n_max": 15, "seed": 0, "out": None, "jobs": 1}


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{no}: bad value for {key}: {value!r}") from exc
    return out


def resolve(args) -> dict:
    """Defaults, then config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["example"] not in EXAMPLES:
        raise ConfigError(f"example must be one of {EXAMPLES}")
    if cfg["rule"] not in RULES + ("oracle",):
        raise ConfigError(f"rule must be one of {RULES}")
    if not 2 <= cfg["n_min"] <= cfg["n_max"] <= 10_000:
        raise ConfigError("need 2 <= n_min <= n_max <= 10000")
    if cfg["rho"] is not None and not cfg["rho"] > 0:
        raise ConfigError("rho must be positive")
    if cfg["jobs"] < 1:
        raise ConfigError("jobs must be positive")
    return cfg


def _common(p, *names):
    opts = {
        "example": dict(choices=EXAMPLES),
        "rule": dict(),
        "nu": dict(type=eval_fraction, help="Matérn smoothness, e.g. 3.5 or 7/2"),
        "rho": dict(type=float, help="Matérn length scale (default: segment length)"),
        "n_min": dict(type=int), "n_max": dict(type=int),
        "seed": dict(type=int), "out": dict(help="CSV output path"),
        "jobs": dict(type=int, help="parallel sweep workers"),
    }
    for name in names:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None, **opts[name])
    p.add_argument("--config", default=None, help="key = value configuration file")


def cmd_riccati(args) -> int:
    t0 = time.perf_counter()
    sol = solve_riccati_kleinman(bm.LQR3_A, bm.LQR3_B, bm.LQR3_Q, bm.LQR3_R)
    dt = time.perf_counter() - t0
    with np.printoptions(precision=2, floatmode="fixed", suppress=True):
        print("P* =")
        print(sol.P)
        print("K* =", sol.K)
    print(f"residual = {sol.residual:.3e}")
    print(f"iterations = {len(sol.history)}")
    print(f"sigma^2 tr(P*) (sigma=100) = {expected_quadratic_cost(sol.P, 100.0):.1f}")
    print(f"runtime = {dt:.4f} s")
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = resolve(args)
    if cfg["rule"] not in RULES:
        raise ConfigError(f"convergence sweeps accept rule in {RULES}")
    t0 = time.perf_counter()
    rows = run_convergence_study(cfg["example"], cfg["rule"], range(cfg["n_min"], cfg["n_max"] + 1),
                                 cfg["seed"], cfg["out"], cfg["nu"], cfg["rho"], cfg["jobs"])
    if cfg["out"] is None:
        sys.stdout.write(write_csv(None, CSV_HEADER, (astuple(r) for r in rows)))
    ok = [r for r in rows if r.ok]
    if not ok:
        print("all sweep points failed", file=sys.stderr)
        return EXIT_NUMERIC
    try:
        fit = fit_loglog_slope(ok)
        print(f"# slope={fit.slope:.4f} intercept={fit.intercept:.4f} r2={fit.r2:.5f} "
              f"points={fit.n_points} runtime={time.perf_counter() - t0:.1f}s", file=sys.stderr)
    except FitError as exc:
        print(f"# slope fit skipped: {exc}", file=sys.stderr)
    return EXIT_OK


def cmd_bq_demo(args) -> int:
    if args.config:
        read_config(args.config)
    try:
        ns = [int(v) for v in args.n_list.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --n-list {args.n_list!r}") from exc
    if min(ns) < 2:
        raise ConfigError("every N must be at least 2")
    res = run_bq_demo(args.kernel, ns, args.out, args.rho)
    if args.out is None:
        sys.stdout.write(write_csv(None, BQ_DEMO_HEADER, res.rows))
    print(f"# oracle={res.oracle:.12f} monotone={res.monotone}", file=sys.stderr)
    return EXIT_OK


def cmd_augmented_ode(args) -> int:
    rows = run_augmented_ode_study(args.out)
    if args.out is None:
        sys.stdout.write(write_csv(None, AUG_HEADER, rows))
    return EXIT_OK


def cmd_pi_trace(args) -> int:
    cfg = resolve(args)
    n = args.n if args.n is not None else cfg["n_min"]
    if n < 2:
        raise ConfigError("N must be at least 2")
    pc = pi_config(cfg["example"], cfg["rule"], n, cfg["seed"], cfg["nu"], cfg["rho"])
    report = run_policy_iteration(pc)
    header = ("iter", "step_norm", "residual", "condition", "pinv_bound", "actual_bound",
              "phi_sup") + tuple(f"omega_{j}{k}" for j, k in pc.basis.monomials)
    rows = []
    for r in report.records:
        d = r.diagnostics
        rows.append((r.index, r.step_norm, d.residual_norm, d.condition, d.bound,
                     d.actual_bound, r.phi_sup, *map(float, r.omega)))
    text = write_csv(args.out, header, rows)
    if args.out is None:
        sys.stdout.write(text)
    status = "converged" if report.converged else ("failed" if report.failed else "max_iter")
    print(f"# {status} after {report.iterations} iterations"
          + (f": {report.failure_message}" if report.failed else ""), file=sys.stderr)
    if report.records:
        P = ValueParams(report.final_omega, pc.basis).to_matrix()
        print("# P_hat = " + np.array2string(P, precision=6).replace("\n", " "), file=sys.stderr)
    return EXIT_NUMERIC if report.failed and not report.records else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intrl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("riccati", help="print the Riccati solution of the third-order LQR benchmark")
    s.add_argument("--example", choices=("lqr3",), default="lqr3")
    s.set_defaults(func=cmd_riccati)

    s = sub.add_parser("convergence", help="sweep samples per segment and write a CSV")
    _common(s, "example", "rule", "nu", "rho", "n_min", "n_max", "seed", "out", "jobs")
    s.set_defaults(func=cmd_convergence)

    s = sub.add_parser("bq-demo", help="BQ estimates of the demo integral")
    s.add_argument("--kernel", default="matern-7/2", help="wiener, matern-1/2 .. matern-7/2")
    s.add_argument("--n-list", default="4,6,8,10")
    s.add_argument("--rho", type=float, default=None)
    s.add_argument("--out", default=None)
    s.add_argument("--config", default=None)
    s.set_defaults(func=cmd_bq_demo)

    s = sub.add_parser("augmented-ode", help="Euler vs rk45 on the augmented value ODE")
    s.add_argument("--example", choices=("nonlinear2",), default="nonlinear2")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_augmented_ode)

    s = sub.add_parser("pi-trace", help="per-iteration diagnostics of one policy-iteration run")
    _common(s, "example", "rule", "nu", "rho", "n_min", "n_max", "seed", "out")
    s.add_argument("--n", type=int, default=None, help="samples per segment (default n_min)")
    s.set_defaults(func=cmd_pi_trace)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
